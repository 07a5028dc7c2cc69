"""Analyses of frozen models: reward trajectories, RDMs, noise trajectories, PCA, regressions."""

from dataclasses import dataclass, field
import warnings

import numpy as np

from .cluster import agglomerative_cluster, kmeans
from .diffusion import run_episodes, sample_starts
from .errors import DegenerateInputError, InvalidArgumentError
from .numerics import classical_mds, ols_fit, pca, pearson

REWARD_TERM = "ModelPredictedReward"


# ------------------------------------------------------------ trajectories

def _starts_for(subject, schedule, n_episodes, rng, start_mode="noised", starts=None):
    if starts is not None:
        return np.atleast_2d(np.asarray(starts, dtype=np.float64))
    base = subject.baselines
    x0 = base[np.arange(n_episodes) % len(base)]
    return sample_starts(x0, schedule, rng, start_mode)


def reward_trajectory(params, subject, schedule, n_episodes, rng, stochastic=True,
                      starts=None, start_mode="noised"):
    """Per-step mean and std of the raw decoder reward over ``n_episodes`` chains.

    Step k (0-based) is the state after the (k+1)-th denoising step.
    Episodes start from the subject's trial patterns in order, noised
    according to ``start_mode``, unless ``starts`` is given.
    """
    if n_episodes < 2:
        raise InvalidArgumentError("n_episodes must be >= 2")
    x = _starts_for(subject, schedule, n_episodes, rng, start_mode, starts)
    if x.shape[0] != n_episodes:
        x = x[np.arange(n_episodes) % x.shape[0]]
    eb = run_episodes(params, x, schedule, subject.raw_reward, rng, stochastic)
    return eb.rewards.mean(axis=1), eb.rewards.std(axis=1, ddof=1)


def steps_to_fraction(curve, fraction=0.9, start=None):
    """First 1-based index at which ``curve`` has covered ``fraction`` of its total gain.

    The gain is measured from ``start`` (default ``curve[0]``) to the final
    value.  A curve with no net gain returns 1, since the final level is
    attained immediately.
    """
    c = np.asarray(curve, dtype=np.float64)
    if c.ndim != 1 or c.size == 0:
        raise InvalidArgumentError("curve must be a non-empty vector")
    s = c[0] if start is None else float(start)
    gain = c[-1] - s
    if gain <= 0:
        return 1
    return int(np.argmax((c - s) / gain >= fraction)) + 1


def smooth(values, window=5):
    """Trailing moving average; the first entries average over what is available."""
    v = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise InvalidArgumentError("window must be >= 1")
    c = np.concatenate(([0.0], np.cumsum(v)))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


# --------------------------------------------------------------------- RDMs

@dataclass
class Rdm:
    labels: list
    dist: np.ndarray
    degenerate_pairs: list = field(default_factory=list)

    def __post_init__(self):
        D = np.asarray(self.dist, dtype=np.float64)
        if D.ndim != 2 or D.shape[0] != D.shape[1] or D.shape[0] != len(self.labels):
            raise InvalidArgumentError("Rdm needs a square matrix with one label per row")
        if not np.allclose(D, D.T, rtol=0.0, atol=1e-12):
            raise InvalidArgumentError("Rdm is not symmetric")
        if np.any(np.diag(D) != 0) or np.any(D < 0):
            raise InvalidArgumentError("Rdm needs a zero diagonal and non-negative entries")
        self.dist = D


def correlation_rdm(patterns, labels=None):
    """``1 - pearson`` between every pair of rows.

    Pairs involving a constant row get dissimilarity 1 and are recorded in
    ``degenerate_pairs``.
    """
    X = np.atleast_2d(np.asarray(patterns, dtype=np.float64))
    n = X.shape[0]
    D = np.zeros((n, n))
    flagged = []
    for i in range(n):
        for j in range(i + 1, n):
            try:
                d = 1.0 - pearson(X[i], X[j])
            except DegenerateInputError:
                d = 1.0
                flagged.append((i, j))
            D[i, j] = D[j, i] = max(d, 0.0)
    return Rdm(list(labels) if labels is not None else list(range(n)), D, flagged)


def stepwise_rdm(states):
    """RDM over the states of one episode (``(T+1, V)``, from x_T to x_0)."""
    if hasattr(states, "states"):
        states = states.states
    S = np.asarray(states, dtype=np.float64)
    return correlation_rdm(S, labels=[f"step{k}" for k in range(S.shape[0])])


def trialpair_rdm(states_at_step, labels=None):
    """RDM across trials of the states reached at one common step."""
    X = np.asarray(states_at_step, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidArgumentError("need at least two trials")
    return correlation_rdm(X, labels)


def mds_embed(states, dims=2):
    """Classical MDS of the correlation-distance matrix of ``states``."""
    X = np.asarray(states, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise InvalidArgumentError("mds_embed needs at least 3 states")
    return classical_mds(correlation_rdm(X).dist, dims)


# --------------------------------------------------------- noise read-outs

def normalize_rows(M):
    """Per-row min-max scaling to [0, 1]; constant rows map to 0."""
    M = np.asarray(M, dtype=np.float64)
    lo = M.min(axis=1, keepdims=True)
    span = M.max(axis=1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (M - lo) / safe, 0.0)


@dataclass
class NoiseTrajectorySet:
    """Per-voxel learned noise parameters over the denoising steps.

    Columns run in denoising order (column 0 is the step from x_T).  ``mu``
    is the state change ``mu_theta(x_t, t) - x_t``; ``raw_mu`` is
    ``mu_theta`` itself.
    """

    subject_id: str
    family: str
    mu: np.ndarray
    sigma: np.ndarray
    raw_mu: np.ndarray = None
    mu_star: np.ndarray = field(init=False)
    sigma_star: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 2:
            raise InvalidArgumentError("mu and sigma must be V x T matrices of the same shape")
        if np.any(self.sigma <= 0):
            raise InvalidArgumentError("sigma must be positive")
        self.mu_star = normalize_rows(self.mu)
        self.sigma_star = normalize_rows(self.sigma)

    @property
    def V(self):
        return self.mu.shape[0]

    @property
    def T(self):
        return self.mu.shape[1]

    def voxel_features(self):
        return np.hstack([self.mu_star, self.sigma_star])


def extract_noise_trajectories(params, subject, schedule, n_episodes, rng, family="",
                               stochastic=True, starts=None, start_mode="noised"):
    """Average the policy's (mu - x_t, sigma) over ``n_episodes`` chains."""
    if n_episodes < 1:
        raise InvalidArgumentError("n_episodes must be >= 1")
    x = _starts_for(subject, schedule, n_episodes, rng, start_mode, starts)
    eb = run_episodes(params, x, schedule, subject.raw_reward, rng, stochastic)
    offset = eb.mus - eb.states[:-1]
    return NoiseTrajectorySet(
        subject_id=subject.subject_id,
        family=family,
        mu=offset.mean(axis=1).T,
        sigma=eb.sigmas.mean(axis=1).T,
        raw_mu=eb.mus.mean(axis=1).T,
    )


def cluster_voxels(trajset, k=4, rng=None, n_restarts=10):
    """K-means over per-voxel ``concat(mu*, sigma*)`` feature vectors."""
    if not 1 <= k <= trajset.V:
        raise InvalidArgumentError(f"k must be in [1, {trajset.V}]")
    if rng is None:
        raise InvalidArgumentError("cluster_voxels needs an rng")
    return kmeans(trajset.voxel_features(), k, rng, n_restarts=n_restarts).labels


# ----------------------------------------------------------- two-stage PCA

@dataclass
class SubjectTrajectory:
    subject_id: str
    family: str
    pc_path: np.ndarray
    explained_variance_ratio: np.ndarray
    loadings: np.ndarray = None
    stage1_ratio: np.ndarray = None

    def __post_init__(self):
        r = np.asarray(self.explained_variance_ratio)
        if np.any(np.diff(r) > 1e-12):
            raise InvalidArgumentError("explained variance ratios must be non-increasing")

    def flipped(self, signs):
        s = np.asarray(signs, dtype=np.float64)
        return SubjectTrajectory(
            self.subject_id, self.family, self.pc_path * s, self.explained_variance_ratio,
            None if self.loadings is None else self.loadings * s[:, None], self.stage1_ratio,
        )


def stage1_scores(mu, sigma):
    """First-component score series of each voxel's ``(mu_t, sigma_t)`` pairs.

    Returns ``(scores (T, V), ratios (V,))``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    V, T = mu.shape
    scores = np.empty((T, V))
    ratios = np.empty(V)
    for v in range(V):
        res = pca(np.column_stack([mu[v], sigma[v]]), 1)
        scores[:, v] = res.scores[:, 0]
        ratios[v] = res.explained_variance_ratio[0]
    return scores, ratios


def two_stage_pca(trajset, n_components=3, normalized=True):
    """Reduce a subject's noise trajectories to a path through ``n_components`` PCs.

    Stage 1 runs PCA on each voxel's T x 2 matrix of (mu, sigma) and keeps
    the first score series; stage 2 runs PCA across voxels on the T x V
    matrix of those series.  ``normalized`` selects the min-max scaled
    parameters, which puts every voxel on a common scale.
    """
    if trajset.V < 2 or trajset.T < 3:
        raise InvalidArgumentError("two-stage PCA needs V >= 2 and T >= 3")
    mu, sigma = (trajset.mu_star, trajset.sigma_star) if normalized else (trajset.mu, trajset.sigma)
    scores, ratios1 = stage1_scores(mu, sigma)
    k = min(n_components, trajset.T, trajset.V)
    res = pca(scores, k)
    return SubjectTrajectory(
        subject_id=trajset.subject_id,
        family=trajset.family,
        pc_path=res.scores,
        explained_variance_ratio=res.explained_variance_ratio,
        loadings=res.components,
        stage1_ratio=ratios1,
    )


def align_signs(trajectories):
    """Flip each subject's components to agree with the cohort-mean loading.

    A component is flipped when its loading vector correlates negatively
    with the mean loading of that component across subjects (dot product
    when either vector is constant).
    """
    if not trajectories:
        return []
    L = np.array([t.loadings for t in trajectories])
    ref = L.mean(axis=0)
    out = []
    for t in trajectories:
        signs = np.ones(t.loadings.shape[0])
        for c in range(t.loadings.shape[0]):
            try:
                agree = pearson(t.loadings[c], ref[c])
            except DegenerateInputError:
                agree = float(t.loadings[c] @ ref[c])
            if agree < 0:
                signs[c] = -1.0
        out.append(t.flipped(signs))
    return out


def subject_trajectory_rdm(trajectories):
    """Frobenius distances between subjects' PC paths."""
    if len(trajectories) < 1:
        raise InvalidArgumentError("need at least one trajectory")
    shape = trajectories[0].pc_path.shape
    for t in trajectories:
        if t.pc_path.shape != shape:
            raise InvalidArgumentError("all pc_paths must have the same shape")
    P = np.array([t.pc_path for t in trajectories])
    n = len(P)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = float(np.sqrt(np.sum((P[i] - P[j]) ** 2)))
    return Rdm([t.subject_id for t in trajectories], D)


def cluster_subjects(rdm, k=4, linkage="average"):
    """Agglomerative clusters of subjects; ``k`` is capped at the cohort size."""
    n = len(rdm.labels)
    return agglomerative_cluster(rdm.dist, min(k, n), linkage)


# -------------------------------------------------------------- regression

def fit_reward_model(human_mean_rewards, model_mean_rewards):
    """OLS ``human ~ 1 + model``."""
    y = np.asarray(human_mean_rewards, dtype=np.float64)
    x = np.asarray(model_mean_rewards, dtype=np.float64)
    if y.shape != x.shape or y.ndim != 1:
        raise InvalidArgumentError("human and model rewards must be vectors of equal length")
    if y.size < 3:
        raise InvalidArgumentError("need at least 3 subjects")
    return ols_fit(np.column_stack([np.ones_like(x), x]), y, ["Intercept", REWARD_TERM])


def merge_singleton_clusters(clusters, model_mean_rewards):
    """Fold single-member clusters into the cluster with the nearest mean model reward.

    Returns relabelled clusters numbered 1..K in order of first appearance,
    plus a list of ``(from, to)`` merges.
    """
    labels = np.asarray(clusters).copy()
    x = np.asarray(model_mean_rewards, dtype=np.float64)
    merges = []
    while True:
        uniq, counts = np.unique(labels, return_counts=True)
        single = [u for u, c in zip(uniq, counts) if c == 1]
        if not single or len(uniq) == 1:
            break
        s = single[0]
        xs = x[labels == s][0]
        others = [u for u in uniq if u != s]
        cents = np.array([x[labels == u].mean() for u in others])
        target = others[int(np.argmin(np.abs(cents - xs)))]
        labels[labels == s] = target
        merges.append((s.item() if hasattr(s, "item") else s, target.item() if hasattr(target, "item") else target))
    order = []
    for lab in labels:
        if lab not in order:
            order.append(lab)
    renum = np.array([order.index(lab) + 1 for lab in labels])
    return renum, merges


def cluster_design(model_mean_rewards, clusters):
    """Design matrix and column names for ``y ~ x1 * x2`` with cluster 1 as reference."""
    x = np.asarray(model_mean_rewards, dtype=np.float64)
    c = np.asarray(clusters)
    levels = sorted(set(c.tolist()))
    rest = levels[1:]
    cols = [np.ones_like(x)]
    names = ["Intercept"]
    for i, lev in enumerate(rest, start=2):
        cols.append((c == lev).astype(np.float64))
        names.append(f"Cluster{i}")
    cols.append(x)
    names.append(REWARD_TERM)
    for i, lev in enumerate(rest, start=2):
        cols.append((c == lev) * x)
        names.append(f"Cluster{i}:{REWARD_TERM}")
    return np.column_stack(cols), names


def fit_reward_model_with_clusters(human_mean_rewards, model_mean_rewards, clusters):
    """OLS with cluster dummies, model reward and their interactions.

    Singleton clusters are merged (with a warning) into the cluster whose
    mean model reward is closest, since a one-member cluster makes the
    interaction design singular.
    """
    y = np.asarray(human_mean_rewards, dtype=np.float64)
    x = np.asarray(model_mean_rewards, dtype=np.float64)
    if y.shape != x.shape or len(clusters) != y.size:
        raise InvalidArgumentError("human, model and cluster vectors must have equal length")
    labels, merges = merge_singleton_clusters(clusters, x)
    for a, b in merges:
        warnings.warn(f"singleton cluster {a} merged into cluster {b}", stacklevel=2)
    X, names = cluster_design(x, labels)
    return ols_fit(X, y, names)
