"""Run configuration: defaults, overridden by a JSON file, overridden by command-line flags."""

from dataclasses import asdict, dataclass, field, fields
import json
import math
from pathlib import Path

from .envsim import CohortConfig
from .errors import InvalidArgumentError
from .fileio import canonical_hash
from .fitting import FitConfig
from .training import FAMILIES, TrainConfig

DEFAULT_OUT_DIR = "nerdlab-out"
OUT_ENV_VAR = "NERD_LAB_OUT"


@dataclass
class AnalysisConfig:
    n_episodes: int = 30
    voxel_k: int = 4
    subject_k: int = 4
    n_components: int = 3
    gain_fraction: float = 0.9
    smooth_window: int = 5

    def validate(self):
        for name in ("n_episodes", "voxel_k", "subject_k", "n_components", "smooth_window"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgumentError(f"analysis.{name} must be >= 1")
        if self.n_episodes < 2:
            raise InvalidArgumentError("analysis.n_episodes must be >= 2")
        if not 0 < self.gain_fraction <= 1:
            raise InvalidArgumentError("analysis.gain_fraction must lie in (0, 1]")
        return self


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = DEFAULT_OUT_DIR
    jobs: int = 1
    subjects: list = None
    family: str = "both"
    dataset: CohortConfig = field(default_factory=CohortConfig)
    nerd: TrainConfig = field(default_factory=lambda: TrainConfig.for_family("nerd"))
    control: TrainConfig = field(default_factory=lambda: TrainConfig.for_family("control"))
    fitting: FitConfig = field(default_factory=FitConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    @property
    def families(self):
        return FAMILIES if self.family == "both" else (self.family,)

    def train_config(self, family):
        base = self.nerd if family == "nerd" else self.control
        return _replace(base, family=family, seed=self.seed)

    def fit_config(self):
        return _replace(self.fitting, seed=self.seed)

    def validate(self):
        _check_finite(self.to_dict(), "config")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise InvalidArgumentError("seed must be an unsigned 64-bit integer")
        if int(self.jobs) < 1:
            raise InvalidArgumentError("jobs must be >= 1")
        if self.family not in FAMILIES + ("both",):
            raise InvalidArgumentError("family must be nerd, control or both")
        if self.subjects is not None and not all(isinstance(s, str) for s in self.subjects):
            raise InvalidArgumentError("subjects must be a list of subject ids")
        self.dataset.validate()
        for fam in FAMILIES:
            tc = self.train_config(fam)
            tc.validate()
            if tc.T < 3:
                raise InvalidArgumentError(f"{fam}.T must be >= 3 for the trajectory analyses")
        self.fitting.validate()
        self.analysis.validate()
        if self.analysis.voxel_k > self.dataset.V:
            raise InvalidArgumentError("analysis.voxel_k cannot exceed dataset.V")
        return self

    def to_dict(self):
        d = asdict(self)
        d["dataset"]["proficiency_range"] = list(self.dataset.proficiency_range)
        d["dataset"]["noise_scale_range"] = list(self.dataset.noise_scale_range)
        return d

    def hash(self):
        d = self.to_dict()
        for k in ("out_dir", "jobs", "subjects", "family"):
            d.pop(k)
        return canonical_hash(d)


def _replace(obj, **kw):
    d = {f.name: getattr(obj, f.name) for f in fields(obj)}
    d.update(kw)
    return type(obj)(**d)


def _check_finite(tree, where):
    if isinstance(tree, dict):
        for k, v in tree.items():
            _check_finite(v, f"{where}.{k}")
    elif isinstance(tree, (list, tuple)):
        for i, v in enumerate(tree):
            _check_finite(v, f"{where}[{i}]")
    elif isinstance(tree, float) and not math.isfinite(tree):
        raise InvalidArgumentError(f"{where} must be finite")


_SECTIONS = {
    "dataset": CohortConfig,
    "nerd": TrainConfig,
    "control": TrainConfig,
    "fitting": FitConfig,
    "analysis": AnalysisConfig,
}


def _apply_section(current, updates, name):
    if not isinstance(updates, dict):
        raise InvalidArgumentError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(current)}
    unknown = sorted(set(updates) - known)
    if unknown:
        raise InvalidArgumentError(f"unknown keys in {name!r}: {', '.join(unknown)}")
    vals = dict(updates)
    for k in ("proficiency_range", "noise_scale_range", "deterministic_families"):
        if k in vals:
            vals[k] = tuple(vals[k])
    return _replace(current, **vals)


def merge_config(base, overrides):
    """Return ``base`` with the nested dict ``overrides`` applied."""
    top = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(overrides) - top)
    if unknown:
        raise InvalidArgumentError(f"unknown config keys: {', '.join(unknown)}")
    kw = {}
    for k, v in overrides.items():
        if k in _SECTIONS:
            kw[k] = _apply_section(getattr(base, k), v, k)
        else:
            kw[k] = v
    return _replace(base, **kw)


def load_config_file(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InvalidArgumentError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(
            f"config file {path} is not valid JSON (line {exc.lineno}, column {exc.colno})"
        ) from None
    if not isinstance(doc, dict):
        raise InvalidArgumentError("config file must contain a JSON object")
    return doc


def resolve_config(file_path=None, flags=None):
    """Layer defaults, then the config file, then explicit flags; validate the result."""
    cfg = RunConfig()
    if file_path is not None:
        cfg = merge_config(cfg, load_config_file(file_path))
    if flags:
        cfg = merge_config(cfg, {k: v for k, v in flags.items() if v is not None})
    return cfg.validate()


def config_from_dict(d):
    return merge_config(RunConfig(), d).validate()
