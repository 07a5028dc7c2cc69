import xml.etree.ElementTree as ET

import numpy as np

from nerdlab import svgplot
from nerdlab.cluster import linkage_tree


def _parse(svg):
    return ET.fromstring(svg)


class TestSvg:
    def test_line_chart_wellformed(self):
        svg = svgplot.line_chart({"a": ([0, 1, 2], [1.0, 2.0, 1.5]), "b<&>": ([0, 1], [0.0, 0.0])},
                                 title="t", bands={"a": 0.2})
        root = _parse(svg)
        assert root.tag.endswith("svg")
        assert "b&lt;&amp;&gt;" in svg

    def test_byte_identical(self):
        args = ({"a": ([0, 1, 2], [1.0, 2.0, 1.5])},)
        assert svgplot.line_chart(*args) == svgplot.line_chart(*args)

    def test_scatter_and_fit(self):
        svg = svgplot.scatter([[0, 1], [1, 2], [2, 2.5]], fit_line=(1.0, 0.8), labels=["a", "b", "c"], groups=[0, 1, 1])
        root = _parse(svg)
        assert len([e for e in root.iter() if e.tag.endswith("circle")]) == 3

    def test_heatmap_cells(self):
        root = _parse(svgplot.heatmap(np.arange(6.0).reshape(2, 3)))
        rects = [e for e in root.iter() if e.tag.endswith("rect")]
        assert len(rects) == 1 + 6

    def test_constant_and_nan_inputs(self):
        _parse(svgplot.heatmap(np.zeros((2, 2))))
        _parse(svgplot.line_chart({"x": ([0, 1], [np.nan, 1.0])}))

    def test_dendrogram(self):
        P = np.random.default_rng(0).normal(size=(5, 2))
        D = np.sqrt(((P[:, None] - P[None]) ** 2).sum(-1))
        svg = svgplot.dendrogram(linkage_tree(D), [f"s{i}" for i in range(5)])
        root = _parse(svg)
        texts = [e.text for e in root.iter() if e.tag.endswith("text")]
        assert {f"s{i}" for i in range(5)} <= set(texts)
        _parse(svgplot.dendrogram([], []))
