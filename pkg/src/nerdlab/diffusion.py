"""Gaussian forward noising and the policy-driven reverse (denoising) chain."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .numerics import LOG_SQRT_2PI
from .policy import policy_forward

START_MODES = ("noised", "trial", "noise")


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise InvalidArgumentError("betas must be a non-empty vector")
        if np.any(b <= 0) or np.any(b >= 1):
            raise InvalidArgumentError("every beta must lie strictly inside (0, 1)")
        object.__setattr__(self, "betas", b)

    @property
    def T(self):
        return self.betas.size

    @property
    def alphas(self):
        return 1.0 - self.betas

    @property
    def alpha_bars(self):
        return np.cumprod(1.0 - self.betas)


def make_schedule(kind="linear", T=40, beta_min=1e-4, beta_max=0.02):
    """Linear (beta_min -> beta_max over t = 1..T) or constant (beta_min) schedule."""
    if T < 1:
        raise InvalidArgumentError("T must be >= 1")
    if not 0 < beta_min <= beta_max < 1:
        raise InvalidArgumentError("need 0 < beta_min <= beta_max < 1")
    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, T)
    elif kind == "constant":
        betas = np.full(T, float(beta_min))
    else:
        raise InvalidArgumentError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(betas)


def forward_noise(x_prev, beta_t, rng):
    """One forward step: sqrt(1 - beta) * x + sqrt(beta) * eps."""
    if not 0 < beta_t < 1:
        raise InvalidArgumentError("beta_t must lie in (0, 1)")
    x_prev = np.asarray(x_prev, dtype=np.float64)
    eps = rng.normal(x_prev.shape)
    return np.sqrt(1.0 - beta_t) * x_prev + np.sqrt(beta_t) * eps


def forward_trajectories(x0, schedule, rng):
    """Run the forward process from every row of ``x0``.

    Returns ``states`` of shape ``(T+1, ...)`` (``states[t]`` is ``x_t``) and the
    injected noise ``eps`` of shape ``(T, ...)`` (``eps[t-1]`` produced ``x_t``).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    T = schedule.T
    eps = rng.normal((T,) + x0.shape)
    states = np.empty((T + 1,) + x0.shape)
    states[0] = x0
    a = np.sqrt(schedule.alphas)
    s = np.sqrt(schedule.betas)
    for i in range(T):
        states[i + 1] = a[i] * states[i] + s[i] * eps[i]
    return states, eps


def forward_pairs(x0, schedule, rng):
    """One forward trajectory as a list of ``(t, x_t, eps_t)`` for t = 1..T."""
    states, eps = forward_trajectories(x0, schedule, rng)
    return [(t, states[t], eps[t - 1]) for t in range(1, schedule.T + 1)]


def sample_starts(x0, schedule, rng, mode="noised"):
    """Chain start states x_T derived from trial patterns ``x0``.

    ``noised`` pushes each pattern through the whole forward process (using
    the closed-form marginal), ``trial`` uses the pattern itself and
    ``noise`` ignores it and draws N(0, I).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if mode == "noised":
        abar = schedule.alpha_bars[-1]
        return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * rng.normal(x0.shape)
    if mode == "trial":
        return x0.copy()
    if mode == "noise":
        return rng.normal(x0.shape)
    raise InvalidArgumentError(f"unknown start mode {mode!r}")


@dataclass
class DenoisingEpisode:
    states: list
    step_mus: np.ndarray
    step_sigmas: np.ndarray
    logprobs: np.ndarray
    per_step_rewards: np.ndarray
    final_reward: float

    @property
    def T(self):
        return len(self.logprobs)

    @property
    def total_logprob(self):
        return float(np.sum(self.logprobs))


@dataclass
class EpisodeBatch:
    """B episodes stored step-major.

    ``states`` is ``(T+1, B, V)`` with ``states[0] = x_T`` and
    ``states[T] = x_0``; ``mus``/``sigmas`` are ``(T, B, V)``; ``logprobs`` and
    ``rewards`` are ``(T, B)``, with ``rewards[k]`` evaluated on ``states[k+1]``.
    """

    states: np.ndarray
    mus: np.ndarray
    sigmas: np.ndarray
    logprobs: np.ndarray
    rewards: np.ndarray

    @property
    def T(self):
        return self.mus.shape[0]

    @property
    def B(self):
        return self.mus.shape[1]

    @property
    def final_states(self):
        return self.states[-1]

    @property
    def final_rewards(self):
        return self.rewards[-1]

    def episode(self, i):
        return DenoisingEpisode(
            states=[s for s in self.states[:, i]],
            step_mus=self.mus[:, i],
            step_sigmas=self.sigmas[:, i],
            logprobs=self.logprobs[:, i],
            per_step_rewards=self.rewards[:, i],
            final_reward=float(self.rewards[-1, i]),
        )


def run_episodes(params, starts, schedule, reward_fn, rng=None, stochastic=True, noise=None):
    """Roll the reverse chain t = T..1 for every row of ``starts``.

    Actions are drawn from N(mu, diag(sigma^2)) when ``stochastic``; otherwise
    the action is the mean.  Gaussian draws come from ``noise`` (shape
    ``(T, B, V)``) when supplied, else from ``rng``.  ``reward_fn`` maps a
    ``(B, V)`` array of states to ``(B,)`` rewards and is evaluated after
    every step.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    if not np.all(np.isfinite(starts)):
        raise InvalidArgumentError("start states must be finite")
    B, V = starts.shape
    if V != params.V:
        raise InvalidArgumentError(f"start states have {V} voxels, policy expects {params.V}")
    T = schedule.T
    if stochastic and noise is None:
        if rng is None:
            raise InvalidArgumentError("stochastic rollout needs rng or noise")
        noise = rng.normal((T, B, V))
    states = np.empty((T + 1, B, V))
    mus = np.empty((T, B, V))
    sigmas = np.empty((T, B, V))
    logprobs = np.empty((T, B))
    rewards = np.empty((T, B))
    states[0] = starts
    x = starts
    for k in range(T):
        out = policy_forward(params, x, T - k, T)
        if not (np.all(np.isfinite(out.mu)) and np.all(np.isfinite(out.sigma))):
            raise NumericFailureError("policy produced non-finite output", step=k)
        if stochastic:
            z = noise[k]
            x = out.mu + out.sigma * z
        else:
            z = np.zeros_like(out.mu)
            x = out.mu
        if not np.all(np.isfinite(x)):
            raise NumericFailureError("denoising chain overflowed", step=k)
        mus[k] = out.mu
        sigmas[k] = out.sigma
        logprobs[k] = (-LOG_SQRT_2PI - np.log(out.sigma) - 0.5 * z * z).sum(axis=1)
        states[k + 1] = x
        rewards[k] = reward_fn(x)
    return EpisodeBatch(states, mus, sigmas, logprobs, rewards)


def final_states(params, starts, schedule, noise=None, stochastic=True):
    """End states x_0 of the reverse chain, without per-step bookkeeping.

    Uses the same arithmetic as :func:`run_episodes`, so results agree
    bit-for-bit with ``run_episodes(...).final_states``.
    """
    x = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    if x.shape[1] != params.V:
        raise InvalidArgumentError(f"start states have {x.shape[1]} voxels, policy expects {params.V}")
    if stochastic and noise is None:
        raise InvalidArgumentError("stochastic rollout needs noise")
    T = schedule.T
    for k in range(T):
        out = policy_forward(params, x, T - k, T)
        if not (np.all(np.isfinite(out.mu)) and np.all(np.isfinite(out.sigma))):
            raise NumericFailureError("policy produced non-finite output", step=k)
        x = out.mu + out.sigma * noise[k] if stochastic else out.mu
        if not np.all(np.isfinite(x)):
            raise NumericFailureError("denoising chain overflowed", step=k)
    return x


def run_episode(params, x_start, schedule, reward_fn, rng=None, stochastic=True):
    """Single-episode convenience wrapper around :func:`run_episodes`."""
    x_start = np.asarray(x_start, dtype=np.float64)
    if x_start.ndim != 1:
        raise InvalidArgumentError("x_start must be a single state vector")
    return run_episodes(params, x_start[None, :], schedule, reward_fn, rng, stochastic).episode(0)
