"""REINFORCE (hybrid-loss) and deterministic-backprop trainers for the policy network."""

from dataclasses import asdict, dataclass, field, fields, replace
import math

import numpy as np

from .diffusion import (
    START_MODES,
    forward_trajectories,
    make_schedule,
    run_episodes,
    sample_starts,
)
from .errors import FormatVersionError, InvalidArgumentError, NumericFailureError
from .fileio import canonical_hash, write_json
from .policy import (
    Gradients,
    PolicyParams,
    backprop,
    backward_logprob,
    backward_reward_deterministic,
    init_params,
    policy_forward,
)
from .rng import RngStream

FAMILIES = ("nerd", "control")
CHECKPOINT_FORMAT = "nerdlab-checkpoint"
CHECKPOINT_VERSION = 1
EPOCH_LOG_COLUMNS = ("epoch", "mean_loss", "mean_reward", "mean_return", "grad_norm_pre_clip")

# fields that do not change the trajectory of a run and so stay out of the hash
_UNHASHED = ("n_epochs", "checkpoint_stride")


@dataclass
class TrainConfig:
    """Hyperparameters for one model family.

    ``lam`` weights the diffusion (denoising MSE) term of the hybrid
    objective.  The NERD ascent direction is
    ``policy_gradient - lam * grad(MSE)``, so ``lam = 0`` is plain REINFORCE.
    """

    family: str = "nerd"
    lam: float = 20.0
    gamma: float = 0.99
    alpha: float = 0.1
    clip_norm: float = 5.0
    batch_episodes: int = 32
    n_epochs: int = 300
    sigma_min: float = 1e-3
    hidden_size: int = 128
    T: int = 40
    schedule_kind: str = "linear"
    beta_min: float = 1e-4
    beta_max: float = 0.02
    start_mode: str = "noised"
    diffusion_target: str = "x"
    diffusion_pairs_per_pattern: int = 4
    seed: int = 0
    checkpoint_stride: int = 1

    @classmethod
    def for_family(cls, family, **overrides):
        base = dict(NERD_DEFAULTS if family == "nerd" else CONTROL_DEFAULTS)
        base.update(overrides)
        return cls(family=family, **base)

    def validate(self):
        def finite_pos(name):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise InvalidArgumentError(f"{name} must be finite and > 0, got {v!r}")

        if self.family not in FAMILIES:
            raise InvalidArgumentError(f"family must be one of {FAMILIES}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise InvalidArgumentError("lam must be finite and >= 0")
        if not 0 < self.gamma < 1:
            raise InvalidArgumentError("gamma must lie in (0, 1)")
        for name in ("alpha", "clip_norm", "sigma_min"):
            finite_pos(name)
        for name in ("batch_episodes", "hidden_size", "T", "checkpoint_stride"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        if int(self.diffusion_pairs_per_pattern) < 0:
            raise InvalidArgumentError("diffusion_pairs_per_pattern must be >= 0")
        if self.n_epochs < 0:
            raise InvalidArgumentError("n_epochs must be >= 0")
        if self.start_mode not in START_MODES:
            raise InvalidArgumentError(f"start_mode must be one of {START_MODES}")
        if self.diffusion_target != "x":
            raise InvalidArgumentError("only the x-prediction diffusion target is implemented")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgumentError("seed must be a 64-bit unsigned integer")
        make_schedule(self.schedule_kind, self.T, self.beta_min, self.beta_max)
        return self

    def schedule(self):
        return make_schedule(self.schedule_kind, self.T, self.beta_min, self.beta_max)

    def hash(self):
        d = {k: v for k, v in asdict(self).items() if k not in _UNHASHED}
        return canonical_hash(d)


NERD_DEFAULTS = dict(lam=20.0, gamma=0.99, alpha=0.1, clip_norm=5.0, n_epochs=300)
CONTROL_DEFAULTS = dict(lam=0.0, gamma=0.99, alpha=0.2, clip_norm=5.0, n_epochs=100)


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    mean_reward: float
    mean_return: float
    grad_norm_pre_clip: float

    def row(self):
        return [self.epoch, self.mean_loss, self.mean_reward, self.mean_return, self.grad_norm_pre_clip]


@dataclass
class Checkpoint:
    epoch: int
    params: PolicyParams
    config_hash: str
    rng_state: dict
    subject_id: str = ""
    family: str = ""


# ------------------------------------------------------------------ returns

def compute_returns(rewards, gamma):
    """Discounted returns G_k = sum_j gamma^j r_{k+j} for a per-step reward vector."""
    r = np.asarray(rewards, dtype=np.float64)
    G = np.empty_like(r)
    acc = 0.0
    for k in range(r.shape[0] - 1, -1, -1):
        acc = r[k] + gamma * acc
        G[k] = acc
    return G


def terminal_returns(final_rewards, T, gamma):
    """Returns for terminal-only reward layouts; shape ``(T, B)``.

    Step k (acting at t = T - k) gets ``gamma**(T-1-k) * r``.
    """
    powers = gamma ** np.arange(T - 1, -1, -1, dtype=np.float64)
    return powers[:, None] * np.asarray(final_rewards, dtype=np.float64)[None, :]


def reinforce_direction(logp_grads, returns, baseline=True):
    """Generic REINFORCE estimator on explicit per-step gradients.

    Parameters
    ----------
    logp_grads : array (B, T, P)
        grad log pi(a_t | s_t) for every episode and step.
    returns : array (B, T)
    baseline : bool
        Subtract the batch mean of G_t at each t.

    Returns the batch mean of ``sum_t (G_t - b_t) grad log pi``.
    """
    g = np.asarray(logp_grads, dtype=np.float64)
    G = np.asarray(returns, dtype=np.float64)
    adv = G - G.mean(axis=0, keepdims=True) if baseline else G
    return np.einsum("bt,btp->p", adv, g) / g.shape[0]


def clip_gradient(grads, clip_norm):
    """Global-norm clipping. Returns ``(clipped, pre_clip_norm)``."""
    norm = grads.norm()
    if not math.isfinite(norm):
        return grads, norm
    if norm > clip_norm:
        return grads.scaled(clip_norm / norm), norm
    return grads, norm


# --------------------------------------------------------------- hybrid loss

@dataclass
class DiffusionPairs:
    """Forward-process training pairs: predict ``x_prev`` from ``(x_t, t)``."""

    x_t: np.ndarray
    t: np.ndarray
    x_prev: np.ndarray


def make_diffusion_pairs(x0, schedule, rng, per_pattern=0):
    """Forward-noised pairs from patterns ``x0``.

    With ``per_pattern = 0`` every step of one full forward trajectory per
    pattern is used.  Otherwise ``per_pattern`` steps t are drawn uniformly
    for each pattern, ``x_{t-1}`` comes from the closed-form marginal and
    ``x_t`` from one further forward step.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    T = schedule.T
    if per_pattern == 0:
        states, _ = forward_trajectories(x0, schedule, rng)
        B = states.shape[1]
        return DiffusionPairs(
            x_t=states[1:].reshape(T * B, -1),
            t=np.repeat(np.arange(1, T + 1), B),
            x_prev=states[:-1].reshape(T * B, -1),
        )
    src = np.repeat(x0, per_pattern, axis=0)
    n, V = src.shape
    t = rng.integers(1, T + 1, size=n)
    abar_prev = np.concatenate(([1.0], schedule.alpha_bars))[t - 1][:, None]
    beta = schedule.betas[t - 1][:, None]
    eps = rng.normal((2, n, V))
    x_prev = np.sqrt(abar_prev) * src + np.sqrt(1.0 - abar_prev) * eps[0]
    x_t = np.sqrt(1.0 - beta) * x_prev + np.sqrt(beta) * eps[1]
    return DiffusionPairs(x_t=x_t, t=t, x_prev=x_prev)


def diffusion_mse(params, pairs, T):
    """Mean squared error of the policy mean against the true previous state, and its gradient."""
    out = policy_forward(params, pairs.x_t, pairs.t, T)
    diff = out.mu - pairs.x_prev
    mse = float(np.mean(diff * diff))
    d_mu = 2.0 * diff / diff.size
    grads, _ = backprop(params, out, d_mu, np.zeros_like(d_mu))
    return mse, grads


def hybrid_loss(params, diffusion_pairs, episodes, lam, T=None):
    """``MSE - lam * mean terminal reward`` and the ascent contribution ``-lam * grad(MSE)``.

    Returns ``(loss, mse, gradient_contribution)``.  With no pairs the
    diffusion term is zero.
    """
    mean_reward = float(np.mean(episodes.final_rewards))
    if diffusion_pairs is None or lam == 0:
        mse = 0.0 if diffusion_pairs is None else diffusion_mse(params, diffusion_pairs, T or episodes.T)[0]
        return mse - lam * mean_reward, mse, Gradients.zeros_like(params)
    mse, g = diffusion_mse(params, diffusion_pairs, T or episodes.T)
    return mse - lam * mean_reward, mse, g.scaled(-lam)


# ------------------------------------------------------------------ updates

def policy_gradient(params, episodes, gamma, baseline=True):
    """Batch-mean REINFORCE gradient using terminal-only rewards.

    Returns ``(Gradients, returns)`` where returns has shape ``(T, B)``.
    """
    T, B, V = episodes.mus.shape
    G = terminal_returns(episodes.final_rewards, T, gamma)
    adv = G - G.mean(axis=1, keepdims=True) if baseline else G
    x = episodes.states[:-1].reshape(T * B, V)
    a = episodes.states[1:].reshape(T * B, V)
    t = np.repeat(np.arange(T, 0, -1), B)
    grads = backward_logprob(params, x, t, T, a, weights=adv.reshape(-1) / B)
    return grads, G


def reinforce_update(params, episodes, config, diffusion_pairs=None, epoch=0):
    """One NERD parameter update from a batch of stochastic episodes.

    The ascent direction is the baselined policy gradient plus the
    ``-lam * grad(MSE)`` diffusion contribution; it is clipped to
    ``clip_norm`` and applied with step size ``alpha``.
    """
    pg, G = policy_gradient(params, episodes, config.gamma)
    loss, _, diff_dir = hybrid_loss(params, diffusion_pairs, episodes, config.lam, episodes.T)
    direction, pre = clip_gradient(pg + diff_dir, config.clip_norm)
    if not (math.isfinite(pre) and direction.is_finite()):
        raise NumericFailureError("non-finite policy gradient", step=epoch)
    log = EpochLog(
        epoch=epoch,
        mean_loss=float(loss),
        mean_reward=float(np.mean(episodes.final_rewards)),
        mean_return=float(np.mean(G[0])),
        grad_norm_pre_clip=float(pre),
    )
    return params.step(direction, config.alpha), log


def control_update(params, starts, schedule, subject, config, epoch=0):
    """One control update: descend ``-reward`` through the deterministic chain."""
    grads, reward = backward_reward_deterministic(
        params, starts, schedule, subject.decoder, squash_scale=subject.reward_scale
    )
    clipped, pre = clip_gradient(grads, config.clip_norm)
    if not (math.isfinite(pre) and clipped.is_finite()):
        raise NumericFailureError("non-finite control gradient", step=epoch)
    log = EpochLog(epoch, -reward, reward, reward, float(pre))
    return params.step(clipped, -config.alpha), log


# ------------------------------------------------------------------ training

@dataclass
class TrainResult:
    checkpoints: list
    logs: list = field(default_factory=list)

    @property
    def final(self):
        return self.checkpoints[-1]


def _batch_indices(rng, n_trials, B):
    return rng.choice(n_trials, size=B, replace=n_trials < B)


def train_model(subject, config, resume=None, on_checkpoint=None, on_log=None):
    """Train one model of ``config.family`` for ``subject``.

    Checkpoints are taken at epoch 0 (initialisation), every
    ``checkpoint_stride`` epochs and at the final epoch.  With ``resume`` the
    run continues from that checkpoint's params and RNG cursor and produces
    exactly what the uninterrupted run would have.
    """
    config.validate()
    schedule = config.schedule()
    chash = config.hash()
    fam = config.family
    rng = RngStream(config.seed, (subject.subject_id, fam, "train"))
    if resume is None:
        params = init_params(
            RngStream(config.seed, (subject.subject_id, fam, "init")),
            subject.V, config.hidden_size, config.sigma_min,
        )
        start_epoch = 0
        first = Checkpoint(0, params.copy(), chash, rng.get_state(), subject.subject_id, fam)
        checkpoints = [first]
        if on_checkpoint:
            on_checkpoint(first)
    else:
        if resume.config_hash != chash:
            raise InvalidArgumentError("checkpoint was produced under a different configuration")
        params = resume.params.copy()
        rng.set_state(resume.rng_state)
        start_epoch = resume.epoch
        checkpoints = []
    logs = []

    baselines = subject.baselines
    n = len(baselines)
    for epoch in range(start_epoch + 1, config.n_epochs + 1):
        try:
            idx = _batch_indices(rng, n, config.batch_episodes)
            x0 = baselines[idx]
            starts = sample_starts(x0, schedule, rng, config.start_mode)
            if fam == "nerd":
                episodes = run_episodes(params, starts, schedule, subject.train_reward, rng, True)
                pairs = make_diffusion_pairs(x0, schedule, rng, config.diffusion_pairs_per_pattern) if config.lam > 0 else None
                params, log = reinforce_update(params, episodes, config, pairs, epoch)
            else:
                params, log = control_update(params, starts, schedule, subject, config, epoch)
        except NumericFailureError as exc:
            exc.partial = TrainResult(checkpoints, logs)
            raise
        logs.append(log)
        if on_log:
            on_log(log)
        if epoch % config.checkpoint_stride == 0 or epoch == config.n_epochs:
            ck = Checkpoint(epoch, params.copy(), chash, rng.get_state(), subject.subject_id, fam)
            checkpoints.append(ck)
            if on_checkpoint:
                on_checkpoint(ck)
    return TrainResult(checkpoints, logs)


def train_nerd(subject, config=None, **kw):
    config = config or TrainConfig.for_family("nerd")
    if config.family != "nerd":
        config = replace(config, family="nerd")
    return train_model(subject, config, **kw)


def train_control(subject, config=None, **kw):
    config = config or TrainConfig.for_family("control")
    if config.family != "control":
        config = replace(config, family="control")
    return train_model(subject, config, **kw)


# --------------------------------------------------------------- checkpoints

def checkpoint_to_dict(ck):
    p = ck.params
    return {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "subject_id": ck.subject_id,
        "family": ck.family,
        "epoch": ck.epoch,
        "config_hash": ck.config_hash,
        "rng_state": ck.rng_state,
        "sigma_min": p.sigma_min,
        "V": p.V,
        "H": p.H,
        "params": {name: b.ravel() for name, b in zip(("w1", "b1", "w2", "b2"), p.blocks())},
    }


def checkpoint_from_dict(doc):
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InvalidArgumentError("not a nerdlab checkpoint")
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise FormatVersionError(f"checkpoint format_version {doc.get('format_version')} unsupported")
    V, H = int(doc["V"]), int(doc["H"])
    shapes = {"w1": (H, V + 1), "b1": (H,), "w2": (2 * V, H), "b2": (2 * V,)}
    blocks = [np.asarray(doc["params"][k], dtype=np.float64).reshape(shapes[k]) for k in shapes]
    params = PolicyParams(*blocks, sigma_min=float(doc["sigma_min"]))
    return Checkpoint(int(doc["epoch"]), params, doc["config_hash"], doc["rng_state"],
                      doc.get("subject_id", ""), doc.get("family", ""))


def save_checkpoint(ck, path):
    write_json(path, checkpoint_to_dict(ck))


def load_checkpoint(path):
    import json
    from pathlib import Path

    return checkpoint_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def config_from_dict(d):
    names = {f.name for f in fields(TrainConfig)}
    unknown = set(d) - names
    if unknown:
        raise InvalidArgumentError(f"unknown training config fields: {sorted(unknown)}")
    return TrainConfig(**d)
