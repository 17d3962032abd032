"""Synthetic data: classification blobs and factor-recovery instances.

The recovery instances are exact non-negative factorizations
Y = theta_star @ phi_star built so that selected columns of theta_star
are pinned by the structure of phi_star:

  * selective window: for each window column k, row k of phi_star is
    alpha * e_k (a single positive entry at data column k), so data
    column k is a pure scaled copy of theta_star[:, k];
  * sparsity: column k of phi_star then has at least r-1 zeros.

Those columns can be recovered (up to permutation and positive scale)
by any exact factorization of Y of the same rank; non-window columns
carry no such guarantee.  ``recovery_score`` measures exactly that:
matched cosine similarity on the window columns only.
"""

from dataclasses import dataclass, replace

import numpy as np

from .dataio import Dataset, make_dataset
from .errors import ConfigError, NumericsError, ShapeError
from .model import infer_local, init_model, local_mean
from .training import TrainConfig, train_soft

COSINE_PASS_THRESHOLD = 0.95
_MU_DELTA = 1e-12


@dataclass(frozen=True)
class BlobsSpec:
    """Gaussian cluster mixture; a desk-scale stand-in for backbone features.

    ``overlap`` shrinks the distance between cluster centers: 0 gives
    essentially separable classes, larger values push the Bayes
    accuracy below 1.
    """

    n: int
    dim: int
    classes: int
    spread: float = 1.0
    overlap: float = 0.0
    centers: np.ndarray = None
    seed: int = 0

    def validate(self):
        if self.n < self.classes or self.classes < 1 or self.dim < 1:
            raise ConfigError("blobs need n >= classes >= 1 and dim >= 1")
        if self.spread <= 0.0:
            raise ConfigError("spread must be positive")
        if self.overlap < 0.0:
            raise ConfigError("overlap must be non-negative")


def resolve_centers(spec):
    """Cluster centers for a spec; drawn from a dedicated substream.

    Auto-generated centers are orthogonal directions (QR of a Gaussian
    matrix) at radius 4.5 * spread / (1 + overlap), which makes the
    separation predictable in any dimension when classes <= dim.
    """
    if spec.centers is not None:
        centers = np.asarray(spec.centers, dtype=np.float64)
        if centers.shape != (spec.classes, spec.dim):
            raise ConfigError("centers must have shape (classes, dim)")
        return centers
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=spec.seed, spawn_key=(0,))
    )
    raw = rng.normal(size=(spec.dim, spec.classes))
    radius = 4.5 * spec.spread / (1.0 + spec.overlap)
    if spec.classes <= spec.dim:
        q, _ = np.linalg.qr(raw)
        directions = q[:, : spec.classes].T
    else:
        directions = raw.T / np.linalg.norm(raw.T, axis=1, keepdims=True)
    return directions * radius


def gen_blobs(spec) -> Dataset:
    """Balanced labeled Gaussian clusters; bit-identical per seed."""
    spec.validate()
    centers = resolve_centers(spec)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=spec.seed, spawn_key=(1,))
    )
    reps = -(-spec.n // spec.classes)
    labels = np.tile(np.arange(spec.classes), reps)[: spec.n]
    rng.shuffle(labels)
    features = centers[labels] + rng.normal(0.0, spec.spread, size=(spec.n, spec.dim))
    return make_dataset(features, labels, spec.classes)


def bayes_accuracy(spec, dataset):
    """Accuracy of the generating mixture's optimal rule (nearest center)."""
    centers = resolve_centers(spec)
    d2 = ((dataset.features[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(d2, axis=1) == dataset.labels))


@dataclass(frozen=True)
class Prop1Instance:
    theta_star: np.ndarray  # (m, r), dense positive, column-stochastic
    phi_star: np.ndarray    # (r, n), column-stochastic where nonzero
    y: np.ndarray           # (m, n) = theta_star @ phi_star
    window_cols: tuple
    rank: int


def gen_prop1_instance(m, n, r, n_window, seed=0):
    """Factorization instance with ``n_window`` identifiable columns.

    Raises after 100 attempts if the product keeps coming out rank
    deficient (never observed for sensible sizes).
    """
    if not (m > r and n > r and r >= 2):
        raise ConfigError("need m > r, n > r, and r >= 2")
    if not (1 <= n_window <= r):
        raise ConfigError("n_window must lie in [1, r]")
    rng = np.random.default_rng(seed)
    for _ in range(100):
        theta = rng.uniform(0.1, 1.0, size=(m, r))
        phi = rng.uniform(0.1, 1.0, size=(r, n))
        window = tuple(sorted(rng.choice(r, size=n_window, replace=False).tolist()))
        for k in window:
            phi[k, :] = 0.0
            phi[:, k] = 0.0
            phi[k, k] = rng.uniform(0.5, 2.0)
        theta = theta / theta.sum(axis=0)
        colsum = phi.sum(axis=0)
        live = colsum > 0.0
        phi[:, live] = phi[:, live] / colsum[live]
        y = theta @ phi
        sv = np.linalg.svd(y, compute_uv=False)
        if sv[r - 1] > 1e-8:
            inst = Prop1Instance(
                theta_star=theta, phi_star=phi, y=y,
                window_cols=window, rank=r,
            )
            _check_instance(inst)
            return inst
    raise NumericsError(
        f"could not generate a rank-{r} instance in 100 attempts"
    )


def _check_instance(inst):
    r = inst.rank
    for k in inst.window_cols:
        row = inst.phi_star[k]
        nz = np.flatnonzero(row)
        if nz.size != 1 or nz[0] != k or row[k] <= 0.0:
            raise NumericsError(f"window row {k} is not a scaled basis row")
        col = inst.phi_star[:, k]
        if np.count_nonzero(col) > 1:
            raise NumericsError(f"window column {k} has fewer than r-1 zeros")
    sv = np.linalg.svd(inst.y, compute_uv=False)
    if sv[r - 1] <= 1e-8:
        raise NumericsError("instance product is rank deficient")


@dataclass(frozen=True)
class NmfResult:
    theta: np.ndarray
    phi: np.ndarray
    residual: float          # ||Y - theta@phi||_F / ||Y||_F
    restart: int
    objective_trace: np.ndarray  # 0.5*||Y - theta@phi||_F^2 per iteration


def fit_exact_nmf(y, rank, restarts=10, iters=2000, seed=0, tol=1e-10):
    """Multiplicative-update factorization, best of ``restarts`` inits.

    The classic updates keep factors non-negative and the Frobenius
    objective non-increasing (denominators are guarded by a tiny
    delta).  Always returns the best factorization found.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    if np.any(y < 0.0):
        raise ConfigError("exact NMF needs a non-negative matrix")
    m, n = y.shape
    if not (1 <= rank <= min(m, n)):
        raise ConfigError(f"rank must lie in [1, {min(m, n)}]")
    y_norm = np.linalg.norm(y)
    scale = np.sqrt(max(y.mean(), _MU_DELTA) / rank)
    best = None
    for restart in range(restarts):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(restart,))
        )
        w = np.abs(rng.standard_normal((m, rank))) * scale + _MU_DELTA
        h = np.abs(rng.standard_normal((rank, n))) * scale + _MU_DELTA
        trace = np.empty(iters)
        res = np.inf
        for it in range(iters):
            w *= (y @ h.T) / (w @ (h @ h.T) + _MU_DELTA)
            h *= (w.T @ y) / ((w.T @ w) @ h + _MU_DELTA)
            diff = y - w @ h
            trace[it] = 0.5 * float(np.sum(diff * diff))
            res = np.sqrt(2.0 * trace[it]) / y_norm if y_norm > 0 else 0.0
            if res < tol:
                trace = trace[: it + 1]
                break
        cand = NmfResult(
            theta=w, phi=h, residual=float(res),
            restart=restart, objective_trace=np.asarray(trace),
        )
        if best is None or cand.residual < best.residual:
            best = cand
    return best


def hungarian_match(a, b):
    """Permutation of B's columns maximizing total cosine similarity to A.

    Zero columns get cosine 0 against everything.  Solved with the
    rectangular assignment algorithm.
    """
    from scipy.optimize import linear_sum_assignment

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError("hungarian_match needs equal column counts")
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    denom = np.outer(na, nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0.0, (a.T @ b) / denom, 0.0)
    _, cols = linear_sum_assignment(-cos)
    return cols


def _cosine(u, v):
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v / (nu * nv))


@dataclass(frozen=True)
class RecoveryReport:
    window_cols: tuple
    cosines: tuple           # one per window column, matched order
    permutation: tuple       # full column assignment used for scoring
    threshold: float
    passed: bool

    def to_dict(self):
        return {
            "window_cols": list(self.window_cols),
            "cosines": list(self.cosines),
            "permutation": list(self.permutation),
            "threshold": self.threshold,
            "passed": self.passed,
        }


def recovery_score(instance, theta_hat, threshold=COSINE_PASS_THRESHOLD):
    """Matched cosine similarity on the window columns only.

    Recovery is scored up to column permutation and positive scaling
    (cosine is scale-invariant); non-window columns never affect the
    pass flag.
    """
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    perm = hungarian_match(instance.theta_star, theta_hat)
    cosines = tuple(
        _cosine(instance.theta_star[:, k], theta_hat[:, perm[k]])
        for k in instance.window_cols
    )
    return RecoveryReport(
        window_cols=instance.window_cols,
        cosines=cosines,
        permutation=tuple(int(c) for c in perm),
        threshold=threshold,
        passed=bool(all(c >= threshold for c in cosines)),
    )


def identifiability_config(instance, seed=0, alpha_sparsity=0.0):
    """Training defaults for factor-recovery runs on an instance."""
    m = instance.theta_star.shape[0]
    return TrainConfig(
        latent_dim=instance.rank,
        epochs=2000,
        learning_rate=2e-2,
        batch_size=m,
        seed=seed,
        alpha_sparsity=alpha_sparsity,
    )


def train_identifiability(instance, config=None, collapse=False):
    """Fit the decision layer to an instance's rows as soft labels.

    Features are one-hot row indicators, so the local head is a free
    per-sample parameterization and the run isolates the factorization
    behavior.  ``collapse`` pins all shapes at the upper clamp (their
    gradient is zero there), turning sampling into a point mass.
    """
    m = instance.theta_star.shape[0]
    if config is None:
        config = identifiability_config(instance)
    if config.latent_dim != instance.rank:
        config = replace(config, latent_dim=instance.rank)
    features = np.eye(m)
    targets = instance.y / instance.y.sum(axis=1, keepdims=True)
    params = None
    if collapse:
        params = init_model(
            m, instance.rank, instance.y.shape[1],
            alpha_sparsity=config.alpha_sparsity, seed=config.seed,
        )
        params.wk[:] = 0.0
        params.bk[:] = 2e3   # softplus > clamp -> shapes stuck at SHAPE_MAX
        params.w1[:] = 2e3
    params, history, _ = train_soft(features, targets, config, params=params)
    return params, history


def bndl_identifiability_run(instance, config=None, collapse=False):
    """Recovery score of the learned mean factor-score matrix."""
    params, _ = train_identifiability(instance, config, collapse)
    theta_hat = local_mean(infer_local(params, np.eye(instance.theta_star.shape[0])))
    return recovery_score(instance, theta_hat)
