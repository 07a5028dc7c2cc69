"""Statistical and linear-algebra primitives.

Gaussian log-densities, Pearson correlation, ordinary least squares with
t-based inference, paired t-tests, PCA and classical MDS.  Everything works
in float64 and is a pure function of its inputs.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .errors import (
    DegenerateInputError,
    InsufficientDataError,
    InvalidArgumentError,
    SingularDesignError,
)

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _as_float_array(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return arr


def gaussian_logpdf(x, mu, sigma):
    """Log-density of N(mu, sigma**2) at x.

    Broadcasts over arrays; returns a Python float for scalar input.
    """
    x = _as_float_array(x, "x")
    mu = _as_float_array(mu, "mu")
    sigma = _as_float_array(sigma, "sigma")
    if np.any(sigma <= 0):
        raise InvalidArgumentError("sigma must be strictly positive")
    z = (x - mu) / sigma
    out = -LOG_SQRT_2PI - np.log(sigma) - 0.5 * z * z
    return float(out) if out.ndim == 0 else out


def pearson(x, y):
    """Pearson correlation coefficient of two equal-length vectors."""
    x = _as_float_array(x, "x").ravel()
    y = _as_float_array(y, "y").ravel()
    if x.shape != y.shape:
        raise InvalidArgumentError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise InsufficientDataError("pearson needs at least 2 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("pearson is undefined for a constant vector")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def student_t_sf(t, dof):
    """Upper-tail probability P(T > t) for Student's t with ``dof`` degrees of freedom.

    Uses the regularized incomplete beta identity
    P(|T| > |t|) = I_{dof/(dof+t^2)}(dof/2, 1/2).
    """
    if dof < 1:
        raise InvalidArgumentError(f"dof must be >= 1, got {dof}")
    t = float(t)
    if math.isnan(t):
        raise InvalidArgumentError("t is NaN")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    x = dof / (dof + t * t)
    tail = 0.5 * float(betainc(0.5 * dof, 0.5, x))
    return tail if t >= 0 else 1.0 - tail


def two_sided_p(t, dof):
    if math.isnan(t):
        return math.nan
    return min(1.0, 2.0 * student_t_sf(abs(t), dof))


@dataclass
class LinearFit:
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    r_squared: float
    residual_dof: int
    design_column_names: list
    residuals: np.ndarray = field(repr=False, default=None)

    def coef(self, name):
        return float(self.coefficients[self.design_column_names.index(name)])

    def p_value(self, name):
        return float(self.p_values[self.design_column_names.index(name)])

    def rows(self):
        """(term, beta, std_error, t, p) tuples in column order."""
        return [
            (n, float(b), float(s), float(t), float(p))
            for n, b, s, t, p in zip(
                self.design_column_names,
                self.coefficients,
                self.std_errors,
                self.t_stats,
                self.p_values,
            )
        ]


def ols_fit(design, y, column_names=None):
    """Ordinary least squares with classical standard errors.

    Parameters
    ----------
    design : array, shape (n, k)
        Design matrix. Include a column of ones for an intercept.
    y : array, shape (n,)
    column_names : list of str, optional
        Labels for the design columns; defaults to ``x0..x{k-1}``.

    Returns
    -------
    LinearFit
        R^2 is ``1 - RSS/TSS`` with TSS taken about the mean of y; it is
        defined as 0 when y is constant.
    """
    X = _as_float_array(design, "design")
    y = _as_float_array(y, "y").ravel()
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if y.size != n:
        raise InvalidArgumentError(f"design has {n} rows but y has {y.size} entries")
    if column_names is None:
        column_names = [f"x{i}" for i in range(k)]
    if len(column_names) != k:
        raise InvalidArgumentError("column_names length does not match design width")
    if n <= k:
        raise InsufficientDataError(f"need more observations than columns (n={n}, k={k})")
    if np.linalg.matrix_rank(X) < k:
        raise SingularDesignError("design matrix is rank deficient")

    Q, R = np.linalg.qr(X)
    beta = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    dof = n - k
    sigma2 = rss / dof
    R_inv = np.linalg.inv(R)
    cov_unscaled = R_inv @ R_inv.T
    se = np.sqrt(np.clip(np.diag(cov_unscaled) * sigma2, 0.0, None))

    t_stats = np.empty(k)
    p_values = np.empty(k)
    for i in range(k):
        if se[i] > 0:
            t_stats[i] = beta[i] / se[i]
        elif beta[i] != 0:
            t_stats[i] = math.copysign(math.inf, beta[i])
        else:
            t_stats[i] = math.nan
        p_values[i] = two_sided_p(t_stats[i], dof)

    dy = y - y.mean()
    tss = float(dy @ dy)
    r2 = 0.0 if tss == 0.0 else 1.0 - rss / tss
    if np.any(np.all(X == 1.0, axis=0)):
        r2 = min(1.0, max(0.0, r2))
    return LinearFit(
        coefficients=beta,
        std_errors=se,
        t_stats=t_stats,
        p_values=p_values,
        r_squared=float(r2),
        residual_dof=dof,
        design_column_names=list(column_names),
        residuals=resid,
    )


def paired_t_test(a, b):
    """Two-sided paired t-test of ``mean(a - b) == 0``. Returns (t, p)."""
    a = _as_float_array(a, "a").ravel()
    b = _as_float_array(b, "b").ravel()
    if a.shape != b.shape:
        raise InvalidArgumentError("paired samples must have equal length")
    n = a.size
    if n < 2:
        raise InsufficientDataError("paired t-test needs n >= 2")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise DegenerateInputError("differences have zero variance")
    t = float(d.mean()) / (sd / math.sqrt(n))
    return t, two_sided_p(t, n - 1)


@dataclass
class PcaResult:
    components: np.ndarray
    explained_variance_ratio: np.ndarray
    scores: np.ndarray
    mean: np.ndarray
    explained_variance: np.ndarray = field(repr=False, default=None)


def _fix_signs(vectors):
    """Flip each row so its largest-magnitude entry is positive."""
    out = vectors.copy()
    for i, row in enumerate(out):
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            out[i] = -row
    return out


def pca(data, n_components):
    """Principal components from the eigendecomposition of the sample covariance.

    Component signs are fixed so that the largest-magnitude loading of each
    component is positive.
    """
    X = _as_float_array(data, "data")
    if X.ndim != 2:
        raise InvalidArgumentError("data must be 2-D")
    n, d = X.shape
    if n < 2:
        raise InsufficientDataError("pca needs at least 2 samples")
    if not 1 <= n_components <= min(n, d):
        raise InvalidArgumentError(
            f"n_components must be in [1, {min(n, d)}], got {n_components}"
        )
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = float(evals.sum())
    ratios = evals / total if total > 0 else np.zeros_like(evals)
    comps = _fix_signs(evecs[:, :n_components].T)
    return PcaResult(
        components=comps,
        explained_variance_ratio=ratios[:n_components],
        scores=Xc @ comps.T,
        mean=mean,
        explained_variance=evals[:n_components],
    )


def _check_distance_matrix(dist, name="dist"):
    D = _as_float_array(dist, name)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise InvalidArgumentError(f"{name} must be a square matrix")
    scale = max(1.0, float(np.abs(D).max())) if D.size else 1.0
    if not np.allclose(D, D.T, rtol=0.0, atol=1e-12 * scale):
        raise InvalidArgumentError(f"{name} is not symmetric")
    if np.any(D < 0):
        raise InvalidArgumentError(f"{name} has negative entries")
    if np.any(np.abs(np.diag(D)) > 1e-12 * scale):
        raise InvalidArgumentError(f"{name} must have a zero diagonal")
    return D


def classical_mds(dist, dims):
    """Torgerson scaling: embed a distance matrix into ``dims`` coordinates.

    Negative eigenvalues of the double-centred matrix (non-Euclidean input)
    are clamped to zero, so the corresponding coordinates are zero.
    """
    D = _check_distance_matrix(dist)
    n = D.shape[0]
    if not 1 <= dims <= max(n - 1, 1):
        raise InvalidArgumentError(f"dims must be in [1, {n - 1}], got {dims}")
    J = np.eye(n) - np.full((n, n), 1.0 / n)
    B = -0.5 * J @ (D * D) @ J
    B = 0.5 * (B + B.T)
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1][:dims]
    evals = np.clip(evals[order], 0.0, None)
    evecs = _fix_signs(evecs[:, order].T).T
    return evecs * np.sqrt(evals)
