"""Two-layer Gaussian policy network with hand-derived gradients.

Input is the state concatenated with the normalised timestep ``t / T``; a
tanh hidden layer feeds an output layer of size ``2 V`` that is split into a
per-voxel mean and a per-voxel standard deviation
(``softplus(raw) + sigma_min``).

All functions accept either a single state of shape ``(V,)`` or a batch of
shape ``(B, V)``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InvalidArgumentError, NumericFailureError
from .numerics import LOG_SQRT_2PI

DEFAULT_SIGMA_MIN = 1e-3
DEFAULT_HIDDEN = 128

_BLOCKS = ("w1", "b1", "w2", "b2")


def softplus(x):
    # log(1 + e^x) without overflow; cheaper than logaddexp
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_inverse(y):
    return y + np.log(-np.expm1(-y))


class _ParamArithmetic:
    """Shared flatten/arithmetic helpers for parameter-shaped containers."""

    def blocks(self):
        return tuple(getattr(self, name) for name in _BLOCKS)

    def flatten(self):
        return np.concatenate([b.ravel() for b in self.blocks()])

    def norm(self):
        return float(np.sqrt(sum(float((b * b).sum()) for b in self.blocks())))

    def is_finite(self):
        return all(np.all(np.isfinite(b)) for b in self.blocks())


@dataclass
class Gradients(_ParamArithmetic):
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros_like(cls, params):
        return cls(*(np.zeros_like(b) for b in params.blocks()))

    def scaled(self, c):
        return Gradients(*(c * b for b in self.blocks()))

    def __add__(self, other):
        return Gradients(*(a + b for a, b in zip(self.blocks(), other.blocks())))

    def __sub__(self, other):
        return Gradients(*(a - b for a, b in zip(self.blocks(), other.blocks())))


@dataclass
class PolicyParams(_ParamArithmetic):
    """Weights of the policy network.

    ``w1`` is ``(H, V+1)``, ``w2`` is ``(2V, H)``.  ``sigma_min`` is the fixed
    floor added to the standard deviation head; it is not trained.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    sigma_min: float = DEFAULT_SIGMA_MIN

    def __post_init__(self):
        H, vin = self.w1.shape
        V = vin - 1
        if self.b1.shape != (H,) or self.w2.shape != (2 * V, H) or self.b2.shape != (2 * V,):
            raise InvalidArgumentError("inconsistent policy parameter shapes")
        if self.sigma_min <= 0:
            raise InvalidArgumentError("sigma_min must be positive")

    @property
    def V(self):
        return self.w1.shape[1] - 1

    @property
    def H(self):
        return self.w1.shape[0]

    def copy(self):
        return PolicyParams(*(b.copy() for b in self.blocks()), sigma_min=self.sigma_min)

    def step(self, direction, lr):
        """New params ``self + lr * direction``."""
        return PolicyParams(
            *(p + lr * g for p, g in zip(self.blocks(), direction.blocks())),
            sigma_min=self.sigma_min,
        )

    def with_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        out, pos = [], 0
        for b in self.blocks():
            out.append(vec[pos:pos + b.size].reshape(b.shape).copy())
            pos += b.size
        if pos != vec.size:
            raise InvalidArgumentError("flat vector has the wrong length")
        return PolicyParams(*out, sigma_min=self.sigma_min)

    def equals(self, other):
        return self.sigma_min == other.sigma_min and all(
            np.array_equal(a, b) for a, b in zip(self.blocks(), other.blocks())
        )


def init_params(rng, V, H=DEFAULT_HIDDEN, sigma_min=DEFAULT_SIGMA_MIN):
    """Glorot-uniform weights, zero biases, sigma head biased to give sigma ~ 1."""
    if V < 1 or H < 1:
        raise InvalidArgumentError("V and H must be >= 1")
    gen = rng.generator

    def glorot(fan_out, fan_in):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return gen.uniform(-lim, lim, size=(fan_out, fan_in))

    w1 = glorot(H, V + 1)
    w2 = glorot(2 * V, H)
    b2 = np.zeros(2 * V)
    b2[V:] = softplus_inverse(1.0 - sigma_min)
    return PolicyParams(w1, np.zeros(H), w2, b2, sigma_min=float(sigma_min))


@dataclass
class PolicyOutput:
    mu: np.ndarray
    sigma: np.ndarray
    inputs: np.ndarray = field(repr=False)
    hidden: np.ndarray = field(repr=False)
    sigma_raw: np.ndarray = field(repr=False)


def _as_batch(x, V):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != V:
        raise InvalidArgumentError(f"state must have {V} voxels, got shape {np.shape(x)}")
    return x, single


def policy_forward(params, x_t, t, T):
    """Mean and standard deviation of the next state given ``x_t`` at step ``t``.

    ``t`` may be a scalar or a per-row integer array in ``1..T``.
    """
    V = params.V
    x, single = _as_batch(x_t, V)
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    if np.any(t_arr < 1) or np.any(t_arr > T):
        raise InvalidArgumentError(f"timestep must lie in [1, {T}]")
    inputs = np.concatenate([x, (t_arr / T)[:, None]], axis=1)
    hidden = np.tanh(inputs @ params.w1.T + params.b1)
    raw = hidden @ params.w2.T + params.b2
    mu = raw[:, :V]
    sigma_raw = raw[:, V:]
    sigma = softplus(sigma_raw) + params.sigma_min
    if single:
        return PolicyOutput(mu[0], sigma[0], inputs, hidden, sigma_raw)
    return PolicyOutput(mu, sigma, inputs, hidden, sigma_raw)


def policy_logprob(out, action):
    """Sum over voxels of the diagonal-Gaussian log-density of ``action``."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape != out.mu.shape:
        raise InvalidArgumentError(f"action shape {action.shape} != {out.mu.shape}")
    z = (action - out.mu) / out.sigma
    lp = (-LOG_SQRT_2PI - np.log(out.sigma) - 0.5 * z * z).sum(axis=-1)
    return float(lp) if np.ndim(lp) == 0 else lp


def backprop(params, out, d_mu, d_sigma):
    """Reverse-mode pass through one forward evaluation.

    ``d_mu`` and ``d_sigma`` are the upstream gradients (batch-shaped like
    ``out.mu``).  Contributions of all batch rows are summed.  Returns the
    parameter gradients and the gradient with respect to the state input.
    """
    V = params.V
    d_mu = np.atleast_2d(d_mu)
    d_sigma = np.atleast_2d(d_sigma)
    d_raw = np.concatenate([d_mu, d_sigma * expit(out.sigma_raw)], axis=1)
    h = out.hidden
    gw2 = d_raw.T @ h
    gb2 = d_raw.sum(axis=0)
    d_pre = (d_raw @ params.w2) * (1.0 - h * h)
    gw1 = d_pre.T @ out.inputs
    gb1 = d_pre.sum(axis=0)
    d_x = d_pre @ params.w1[:, :V]
    return Gradients(gw1, gb1, gw2, gb2), d_x


def logprob_output_grads(out, action):
    """d logprob / d mu and d logprob / d sigma, elementwise."""
    diff = np.asarray(action, dtype=np.float64) - out.mu
    inv_var = 1.0 / (out.sigma * out.sigma)
    d_mu = diff * inv_var
    d_sigma = -1.0 / out.sigma + diff * diff * inv_var / out.sigma
    return d_mu, d_sigma


def backward_logprob(params, x_t, t, T, action, weights=None):
    """Analytic gradient of ``policy_logprob`` with respect to every parameter.

    For a batch, the row gradients are summed, each multiplied by
    ``weights[row]`` when given (used for advantage-weighted REINFORCE sums).
    """
    out = policy_forward(params, x_t, t, T)
    d_mu, d_sigma = logprob_output_grads(out, action)
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
        d_mu = np.atleast_2d(d_mu) * w
        d_sigma = np.atleast_2d(d_sigma) * w
    grads, _ = backprop(params, out, d_mu, d_sigma)
    return grads


def _chain(params, x_start, T):
    """Deterministic chain x_{t-1} = mu(x_t, t) for t = T..1. Returns outputs and states."""
    x = x_start
    outs, states = [], [x_start]
    for k in range(T):
        out = policy_forward(params, x, T - k, T)
        x = out.mu
        if not np.all(np.isfinite(x)):
            raise NumericFailureError("deterministic chain diverged", step=k)
        outs.append(out)
        states.append(x)
    return outs, states


def backward_reward_deterministic(params, x_start, schedule, decoder, squash_scale=None):
    """Gradient of ``-reward(x_0)`` through the whole deterministic denoising chain.

    Parameters
    ----------
    params : PolicyParams
    x_start : array (V,) or (B, V)
        Chain start state(s) ``x_T``.
    schedule : NoiseSchedule
        Only its length ``T`` is used here.
    decoder : DecoderSpec
    squash_scale : float, optional
        When given, the reward is ``logistic((R - b) / squash_scale)`` instead
        of the raw decoder output ``R``.

    Returns
    -------
    (Gradients, reward)
        For a batch, the gradient and reward are averaged over rows.
    """
    T = schedule.T
    x0, single = _as_batch(x_start, params.V)
    outs, states = _chain(params, x0, T)
    W = np.asarray(decoder.weights, dtype=np.float64)
    raw = states[-1] @ W + decoder.bias
    B = x0.shape[0]
    if squash_scale is None:
        reward = raw
        d_reward_d_x = np.broadcast_to(W, states[-1].shape)
    else:
        reward = expit((raw - decoder.bias) / squash_scale)
        slope = reward * (1.0 - reward) / squash_scale
        d_reward_d_x = slope[:, None] * W[None, :]
    # loss = -mean(reward)
    g_x = -d_reward_d_x / B
    total = Gradients.zeros_like(params)
    for k in range(T - 1, -1, -1):
        grads, g_x = backprop(params, outs[k], g_x, np.zeros_like(g_x))
        total = total + grads
        if not (total.is_finite() and np.all(np.isfinite(g_x))):
            raise NumericFailureError("gradient overflow in deterministic chain", step=k)
    return total, float(np.mean(reward))


@dataclass
class ProbeConfig:
    """Settings for :func:`grad_check`.

    ``mode`` is ``"random"`` (default draws), ``"zero"`` (all-zero params)
    or ``"saturated"`` (sigma head pushed deep into the floor).
    """

    n_probes: int = 5
    T: int = 3
    h: float = 1e-5
    seed: int = 0
    mode: str = "random"
    batch: int = 3
    abs_floor: float = 1e-5


def relative_error(analytic, numeric, floor=1e-5):
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _fd_gradient(f, params, h):
    base = params.flatten()
    g = np.empty_like(base)
    for i in range(base.size):
        step = base.copy()
        step[i] = base[i] + h
        fp = f(params.with_flat(step))
        step[i] = base[i] - h
        fm = f(params.with_flat(step))
        g[i] = (fp - fm) / (2.0 * h)
    return g


def grad_check(params, probe_config=None):
    """Worst relative error between analytic and central-difference gradients.

    Checks both :func:`backward_logprob` and
    :func:`backward_reward_deterministic` on ``n_probes`` random probes built
    around ``params`` (whose shape fixes V and H).
    """
    from .diffusion import make_schedule
    from .envsim import DecoderSpec
    from .rng import RngStream

    cfg = probe_config or ProbeConfig()
    rng = RngStream(cfg.seed, ("grad-check",))
    V, T = params.V, cfg.T
    schedule = make_schedule("linear", T, 1e-4, 0.02)
    worst = 0.0
    for _ in range(cfg.n_probes):
        if cfg.mode == "zero":
            p = params.with_flat(np.zeros(params.flatten().size))
        else:
            p = params.with_flat(params.flatten() + 0.3 * rng.normal(params.flatten().size))
            if cfg.mode == "saturated":
                p.b2[V:] = -30.0
        x = rng.normal((cfg.batch, V))
        t = rng.integers(1, T + 1, size=cfg.batch)
        out = policy_forward(p, x, t, T)
        action = out.mu + out.sigma * rng.normal((cfg.batch, V))

        analytic = backward_logprob(p, x, t, T, action).flatten()
        numeric = _fd_gradient(
            lambda q: float(np.sum(policy_logprob(policy_forward(q, x, t, T), action))), p, cfg.h
        )
        worst = max(worst, float(relative_error(analytic, numeric, cfg.abs_floor).max()))

        decoder = DecoderSpec(rng.normal(V), float(rng.normal()))
        analytic, _ = backward_reward_deterministic(p, x, schedule, decoder)
        numeric = _fd_gradient(
            lambda q: -backward_reward_deterministic(q, x, schedule, decoder)[1], p, cfg.h
        )
        worst = max(worst, float(relative_error(analytic.flatten(), numeric, cfg.abs_floor).max()))
    return worst
