"""Synthetic neurofeedback subjects and the linear decoder reward.

Each simulated participant has a sparse linear decoder over V voxels and a
set of trials.  A trial pairs a pre-induction pattern (``baseline_state``)
with the pattern the simulated human ended on (``achieved_state``), which is
the baseline pushed along the decoder direction in proportion to the
subject's proficiency, plus isotropic noise.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import DatasetParseError, FormatVersionError, InvalidArgumentError
from .fileio import atomic_write_text, dumps_json
from .rng import RngStream

DATASET_FORMAT = "nerdlab-dataset"
DATASET_VERSION = 1


@dataclass
class DecoderSpec:
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = float(self.bias)
        if self.weights.ndim != 1:
            raise InvalidArgumentError("decoder weights must be a vector")
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise InvalidArgumentError("decoder parameters must be finite")

    @property
    def V(self):
        return self.weights.size


def decode_reward(decoder, x):
    """Raw decoder output ``W . x + b``; vectorised over leading axes of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != decoder.V:
        raise InvalidArgumentError(f"state has {x.shape[-1]} voxels, decoder has {decoder.V}")
    r = x @ decoder.weights + decoder.bias
    return float(r) if np.ndim(r) == 0 else r


def squash_reward(decoder, raw, scale):
    """Bounded training reward ``logistic((raw - b) / scale)`` in (0, 1)."""
    if scale <= 0:
        raise InvalidArgumentError("reward scale must be positive")
    r = expit((np.asarray(raw, dtype=np.float64) - decoder.bias) / scale)
    return float(r) if np.ndim(r) == 0 else r


@dataclass
class TrialRecord:
    trial_id: int
    baseline_state: np.ndarray
    achieved_state: np.ndarray
    achieved_reward: float


@dataclass
class SyntheticSubject:
    subject_id: str
    V: int
    decoder: DecoderSpec
    trials: list
    proficiency: float
    noise_scale: float
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.proficiency <= 1.0:
            raise InvalidArgumentError("proficiency must lie in [0, 1]")
        for tr in self.trials:
            if tr.baseline_state.shape != (self.V,) or tr.achieved_state.shape != (self.V,):
                raise InvalidArgumentError(f"trial {tr.trial_id} does not have {self.V} voxels")

    @property
    def baselines(self):
        return np.array([t.baseline_state for t in self.trials])

    @property
    def achieved(self):
        return np.array([t.achieved_state for t in self.trials])

    @property
    def achieved_rewards(self):
        return np.array([t.achieved_reward for t in self.trials])

    @property
    def mean_achieved_reward(self):
        return float(np.mean(self.achieved_rewards))

    def raw_reward(self, x):
        return decode_reward(self.decoder, x)

    def train_reward(self, x):
        return squash_reward(self.decoder, decode_reward(self.decoder, x), self.reward_scale)


@dataclass
class CohortConfig:
    """Generator settings for a synthetic cohort.

    ``amplitude`` is the shift, in decoder-output units, that a fully
    proficient subject adds along the unit decoder direction.
    """

    n_subjects: int = 24
    V: int = 30
    n_trials: int = 150
    sparsity: float = 0.3
    proficiency_range: tuple = (0.1, 0.9)
    noise_scale_range: tuple = (0.5, 1.0)
    amplitude: float = 4.0
    bias: float = 0.0

    def validate(self):
        if self.V < 2:
            raise InvalidArgumentError("V must be >= 2")
        if self.n_trials < 1:
            raise InvalidArgumentError("n_trials must be >= 1")
        if self.n_subjects < 1:
            raise InvalidArgumentError("n_subjects must be >= 1")
        if not 0.0 < self.sparsity <= 1.0:
            raise InvalidArgumentError("sparsity (fraction of nonzero weights) must be in (0, 1]")
        lo, hi = self.proficiency_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise InvalidArgumentError("proficiency_range must satisfy 0 <= lo <= hi <= 1")
        lo, hi = self.noise_scale_range
        if not 0.0 <= lo <= hi:
            raise InvalidArgumentError("noise_scale_range must satisfy 0 <= lo <= hi")
        if not (np.isfinite(self.amplitude) and self.amplitude >= 0):
            raise InvalidArgumentError("amplitude must be finite and non-negative")
        if not np.isfinite(self.bias):
            raise InvalidArgumentError("bias must be finite")
        return self


def _sparse_unit_weights(gen, V, sparsity):
    n_nonzero = max(1, int(round(sparsity * V)))
    w = np.zeros(V)
    idx = np.sort(gen.choice(V, size=n_nonzero, replace=False))
    w[idx] = gen.standard_normal(n_nonzero)
    # unit norm keeps reward units comparable across subjects
    return w / np.linalg.norm(w)


def _zscore_columns(X):
    if X.shape[0] < 2:
        return X
    sd = X.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0
    return (X - X.mean(axis=0)) / sd


def generate_subject(rng, config, subject_id="s01", proficiency=None, noise_scale=None):
    """Draw one synthetic subject.

    ``proficiency`` and ``noise_scale`` default to uniform draws from the
    configured ranges; pass them explicitly to pin a subject's skill.
    """
    config.validate()
    gen = rng.generator
    V = config.V
    w = _sparse_unit_weights(gen, V, config.sparsity)
    decoder = DecoderSpec(w, config.bias)
    if proficiency is None:
        proficiency = float(gen.uniform(*config.proficiency_range))
    if noise_scale is None:
        noise_scale = float(gen.uniform(*config.noise_scale_range))
    if not 0.0 <= proficiency <= 1.0 or noise_scale < 0:
        raise InvalidArgumentError("proficiency must be in [0, 1] and noise_scale >= 0")

    baselines = _zscore_columns(gen.standard_normal((config.n_trials, V)))
    direction = config.amplitude * w
    noise = gen.standard_normal((config.n_trials, V))
    achieved = baselines + proficiency * direction + noise_scale * noise
    trials = [
        TrialRecord(i, baselines[i].copy(), achieved[i].copy(), decode_reward(decoder, achieved[i]))
        for i in range(config.n_trials)
    ]
    base_r = decode_reward(decoder, baselines)
    scale = float(np.std(base_r)) if config.n_trials > 1 else 1.0
    return SyntheticSubject(
        subject_id=subject_id,
        V=V,
        decoder=decoder,
        trials=trials,
        proficiency=proficiency,
        noise_scale=noise_scale,
        reward_scale=scale if scale > 0 else 1.0,
    )


@dataclass
class Cohort:
    subjects: list
    cohort_seed: int
    V: int
    reward_scale: float
    config: CohortConfig = field(default_factory=CohortConfig)

    def subject(self, subject_id):
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(subject_id)

    @property
    def subject_ids(self):
        return [s.subject_id for s in self.subjects]


def subject_label(i):
    return f"s{i + 1:02d}"


def generate_cohort(seed, config=None):
    """Generate ``config.n_subjects`` subjects with a shared reward squash scale.

    The scale is the standard deviation of baseline decoder output pooled over
    the whole cohort.
    """
    config = (config or CohortConfig()).validate()
    root = RngStream(seed, ("cohort",))
    subjects = [
        generate_subject(root.substream(subject_label(i)), config, subject_label(i))
        for i in range(config.n_subjects)
    ]
    pooled = np.concatenate([decode_reward(s.decoder, s.baselines) for s in subjects])
    scale = float(np.std(pooled)) if pooled.size > 1 else 1.0
    scale = scale if scale > 0 else 1.0
    for s in subjects:
        s.reward_scale = scale
    return Cohort(subjects, int(seed), config.V, scale, config)


# ---------------------------------------------------------------- persistence

def cohort_to_dict(cohort):
    cfg = asdict(cohort.config)
    return {
        "format": DATASET_FORMAT,
        "format_version": DATASET_VERSION,
        "cohort_seed": cohort.cohort_seed,
        "V": cohort.V,
        "n_subjects": len(cohort.subjects),
        "reward_scale": cohort.reward_scale,
        "config": cfg,
        "subjects": [
            {
                "subject_id": s.subject_id,
                "proficiency": s.proficiency,
                "noise_scale": s.noise_scale,
                "reward_scale": s.reward_scale,
                "decoder": {"weights": s.decoder.weights, "bias": s.decoder.bias},
                "trials": [
                    {
                        "trial_id": t.trial_id,
                        "baseline_state": t.baseline_state,
                        "achieved_state": t.achieved_state,
                        "achieved_reward": t.achieved_reward,
                    }
                    for t in s.trials
                ],
            }
            for s in cohort.subjects
        ],
    }


def save_dataset(cohort, path):
    atomic_write_text(path, dumps_json(cohort_to_dict(cohort)))


def _require(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise DatasetParseError(f"missing field {key!r} in {where}")
    return d[key]


def _vector(value, V, where):
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DatasetParseError(f"{where}: not a numeric vector") from exc
    if arr.shape != (V,) or not np.all(np.isfinite(arr)):
        raise DatasetParseError(f"{where}: expected {V} finite values")
    return arr


def cohort_from_dict(doc):
    if _require(doc, "format", "header") != DATASET_FORMAT:
        raise DatasetParseError(f"not a {DATASET_FORMAT} document")
    version = _require(doc, "format_version", "header")
    if version != DATASET_VERSION:
        raise FormatVersionError(f"dataset format_version {version} unsupported (need {DATASET_VERSION})")
    V = int(_require(doc, "V", "header"))
    raw_subjects = _require(doc, "subjects", "header")
    if len(raw_subjects) != int(_require(doc, "n_subjects", "header")):
        raise DatasetParseError("n_subjects does not match the number of subject records")
    cfg_doc = doc.get("config") or {}
    cfg_fields = {k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg_doc.items()}
    try:
        config = CohortConfig(**cfg_fields)
    except TypeError as exc:
        raise DatasetParseError(f"bad config block: {exc}") from exc

    subjects = []
    for si, sd in enumerate(raw_subjects):
        where = f"subject #{si}"
        dec = _require(sd, "decoder", where)
        decoder = DecoderSpec(_vector(_require(dec, "weights", where), V, where + " weights"),
                              float(_require(dec, "bias", where)))
        trials = []
        for td in _require(sd, "trials", where):
            tw = f"{where} trial {td.get('trial_id') if isinstance(td, dict) else '?'}"
            achieved = _vector(_require(td, "achieved_state", tw), V, tw)
            rec = TrialRecord(
                int(_require(td, "trial_id", tw)),
                _vector(_require(td, "baseline_state", tw), V, tw),
                achieved,
                float(_require(td, "achieved_reward", tw)),
            )
            expected = decode_reward(decoder, achieved)
            if abs(expected - rec.achieved_reward) > 1e-12 * max(1.0, abs(expected)):
                raise DatasetParseError(f"{tw}: achieved_reward inconsistent with decoder")
            trials.append(rec)
        subjects.append(SyntheticSubject(
            subject_id=str(_require(sd, "subject_id", where)),
            V=V,
            decoder=decoder,
            trials=trials,
            proficiency=float(_require(sd, "proficiency", where)),
            noise_scale=float(_require(sd, "noise_scale", where)),
            reward_scale=float(_require(sd, "reward_scale", where)),
        ))
    return Cohort(subjects, int(_require(doc, "cohort_seed", "header")), V,
                  float(_require(doc, "reward_scale", "header")), config)


def load_dataset(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"malformed dataset file: {exc.msg}", exc.lineno, exc.colno) from exc
    return cohort_from_dict(doc)
