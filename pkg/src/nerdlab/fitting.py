"""Fit trained models to (synthetic) human data by per-epoch negative log-likelihood.

For every trial, the model denoises ``n_samples`` times from one noised copy
of the trial's baseline pattern.  A diagonal Gaussian fitted to the generated
final states scores the pattern the human actually reached.  The epoch with
the lowest trial-averaged NLL is the one the model is frozen at.
"""

from dataclasses import dataclass, field

import numpy as np

from .diffusion import final_states
from .errors import InvalidArgumentError
from .numerics import LOG_SQRT_2PI
from .rng import RngStream

DEFAULT_V_MIN = 1e-4


@dataclass
class FitConfig:
    """Scoring settings.

    Families listed in ``deterministic_families`` are scored with their
    deterministic chain (the action is the policy mean), as they were
    trained; the variance floor then sets the density width.
    """

    n_samples: int = 30
    v_min: float = DEFAULT_V_MIN
    deterministic_families: tuple = ("control",)
    seed: int = 0

    def validate(self):
        if int(self.n_samples) < 2:
            raise InvalidArgumentError("n_samples must be >= 2 to estimate a variance")
        if not self.v_min > 0:
            raise InvalidArgumentError("v_min must be positive")
        return self

    def stochastic_for(self, family):
        return family not in self.deterministic_families


@dataclass
class FitResult:
    subject_id: str
    family: str
    per_epoch_mean_nll: np.ndarray
    e_star: int
    min_nll: float
    epochs: list = field(default_factory=list)
    per_epoch_model_reward: np.ndarray = None

    def __post_init__(self):
        nll = np.asarray(self.per_epoch_mean_nll)
        if nll[self.e_star] != self.min_nll or np.argmin(nll) != self.e_star:
            raise InvalidArgumentError("FitResult: min_nll must be the first minimum at e_star")

    @property
    def frozen_epoch(self):
        return self.epochs[self.e_star] if self.epochs else self.e_star

    @property
    def model_reward(self):
        """Mean raw decoder reward of the frozen model's generated states."""
        return float(self.per_epoch_model_reward[self.e_star])


def gaussian_nll_per_voxel(target, samples, v_min=DEFAULT_V_MIN):
    """Per-voxel mean NLL of ``target`` under a diagonal Gaussian fitted to ``samples``.

    ``samples`` has shape ``(..., n, V)`` and ``target`` ``(..., V)``.  Sample
    variances (ddof=1) are floored at ``v_min``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    mean = samples.mean(axis=-2)
    var = np.maximum(samples.var(axis=-2, ddof=1), v_min)
    z2 = (np.asarray(target) - mean) ** 2 / var
    return (LOG_SQRT_2PI + 0.5 * np.log(var) + 0.5 * z2).mean(axis=-1)


class TrialSampler:
    """Pre-drawn randomness for scoring one subject's trials.

    Every checkpoint of a subject is scored with the same start states and
    the same Gaussian draws (common random numbers), keyed by trial id, so
    NLL differences across epochs reflect the model and not sampling luck.
    """

    def __init__(self, subject, schedule, n_samples, seed, trial_ids=None):
        self.subject = subject
        self.schedule = schedule
        self.n_samples = n_samples
        trials = subject.trials if trial_ids is None else [
            t for t in subject.trials if t.trial_id in set(trial_ids)
        ]
        self.trials = trials
        T, V = schedule.T, subject.V
        abar = schedule.alpha_bars[-1]
        starts = np.empty((len(trials), V))
        noise = np.empty((T, len(trials), n_samples, V))
        for i, tr in enumerate(trials):
            rng = RngStream(seed, (subject.subject_id, "fit", tr.trial_id))
            starts[i] = np.sqrt(abar) * tr.baseline_state + np.sqrt(1.0 - abar) * rng.normal(V)
            noise[:, i] = rng.normal((T, n_samples, V))
        self.starts = starts
        self.noise = noise.reshape(T, len(trials) * n_samples, V)
        self.targets = np.array([t.achieved_state for t in trials])

    def generate(self, params, stochastic=True):
        """Final states, shape ``(n_trials, n_samples, V)``."""
        n, V = len(self.trials), self.subject.V
        if not stochastic:
            # every sample of a deterministic chain is the same
            x = final_states(params, self.starts, self.schedule, stochastic=False)
            return np.repeat(x[:, None, :], self.n_samples, axis=1)
        starts = np.repeat(self.starts, self.n_samples, axis=0)
        x = final_states(params, starts, self.schedule, self.noise, stochastic=True)
        return x.reshape(n, self.n_samples, V)

    def score(self, params, v_min=DEFAULT_V_MIN, stochastic=True):
        """(per-trial NLL vector, mean raw reward of the generated states)."""
        finals = self.generate(params, stochastic)
        nll = gaussian_nll_per_voxel(self.targets, finals, v_min)
        reward = float(np.mean(self.subject.raw_reward(finals)))
        return nll, reward


def trial_nll(params, subject, trial, schedule, n_samples=30, seed=0,
              v_min=DEFAULT_V_MIN, stochastic=True):
    """Per-voxel NLL of one trial's human pattern under ``n_samples`` generated states."""
    if n_samples < 2:
        raise InvalidArgumentError("n_samples must be >= 2")
    if params.V != subject.V:
        raise InvalidArgumentError("checkpoint voxel count does not match the subject")
    sampler = TrialSampler(subject, schedule, n_samples, seed, trial_ids=[trial.trial_id])
    nll, _ = sampler.score(params, v_min, stochastic)
    return float(nll[0])


def select_best_epoch(per_epoch_mean_nll):
    """Index of the smallest mean NLL (earliest on ties) and that value."""
    v = np.asarray(per_epoch_mean_nll, dtype=np.float64)
    if v.size == 0:
        raise InvalidArgumentError("no epochs to select from")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("NLL values must be finite")
    e = int(np.argmin(v))
    return e, float(v[e])


def fit_subject(subject, checkpoints, schedule, config=None, family=None):
    """Score every checkpoint on all trials and freeze at the best epoch."""
    config = (config or FitConfig()).validate()
    if not checkpoints:
        raise InvalidArgumentError("need at least one checkpoint")
    family = family or checkpoints[0].family
    stochastic = config.stochastic_for(family)
    sampler = TrialSampler(subject, schedule, config.n_samples, config.seed)
    nlls, rewards = [], []
    for ck in checkpoints:
        if ck.params.V != subject.V:
            raise InvalidArgumentError("checkpoint voxel count does not match the subject")
        nll, reward = sampler.score(ck.params, config.v_min, stochastic)
        nlls.append(float(nll.mean()))
        rewards.append(reward)
    e_star, min_nll = select_best_epoch(nlls)
    return FitResult(
        subject_id=subject.subject_id,
        family=family,
        per_epoch_mean_nll=np.array(nlls),
        e_star=e_star,
        min_nll=min_nll,
        epochs=[ck.epoch for ck in checkpoints],
        per_epoch_model_reward=np.array(rewards),
    )
