"""Uncertainty protocol: MC scores, top-2 t-test p-values, PAvPU, binning.

For each sample the model is sampled S times (fresh theta and phi per
draw, one forward pass worth of inference reused across draws), giving
S raw score rows.  The two classes with the highest mean scores are
compared with Welch's two-sample t-test; the two-sided p-value is the
sample's uncertainty.  A prediction is "certain" when p < threshold.

PAvPU = (n_ac + n_iu) / (n_ac + n_au + n_ic + n_iu), counting
accurate-certain, accurate-uncertain, inaccurate-certain and
inaccurate-uncertain samples.
"""

from dataclasses import dataclass

import numpy as np

from ._threads import map_ordered, resolve_threads
from .errors import ConfigError
from .model import infer_global, infer_local
from .special import student_t_two_sided_p
from .training import draw_uniform_open

# p-value assigned when two zero-variance columns have different means.
DEGENERATE_P = 1e-300


@dataclass(frozen=True)
class UncertaintyRecord:
    sample_id: int
    predicted: int
    true_label: int
    p_value: float
    certain: bool
    correct: bool

    def to_dict(self):
        return {
            "sample_id": self.sample_id,
            "predicted": self.predicted,
            "true_label": self.true_label,
            "p_value": self.p_value,
            "certain": self.certain,
            "correct": self.correct,
        }


@dataclass(frozen=True)
class PavpuReport:
    n_ac: int
    n_au: int
    n_ic: int
    n_iu: int
    pavpu: float
    threshold: float
    mc_samples: int

    def to_dict(self):
        return {
            "n_ac": self.n_ac,
            "n_au": self.n_au,
            "n_ic": self.n_ic,
            "n_iu": self.n_iu,
            "pavpu": self.pavpu,
            "threshold": self.threshold,
            "mc_samples": self.mc_samples,
        }


@dataclass(frozen=True)
class BinCurve:
    """Per-bin mean p-value, accuracy and size, ascending in p."""

    mean_p: np.ndarray
    accuracy: np.ndarray
    count: np.ndarray


def mc_scores(params, h, n_samples, rng):
    """S independent draws of the raw class scores u = theta @ phi.

    Rows are stored in draw order; the local/global posteriors are
    inferred once (single forward pass) and only the sampling repeats.
    """
    if n_samples < 2:
        raise ConfigError("mc_scores needs at least 2 draws for the t-test")
    lp = infer_local(params, h)
    gp = infer_global(params)
    latent, classes = gp.k_phi.shape
    eps_t = draw_uniform_open(rng, (n_samples, latent))
    eps_p = draw_uniform_open(rng, (n_samples, latent, classes))
    theta = lp.lam * np.power(-np.log1p(-eps_t), 1.0 / lp.k)
    phi = gp.lam_phi * np.power(-np.log1p(-eps_p), 1.0 / gp.k_phi)
    return np.einsum("sk,skc->sc", theta, phi)


def p_value_top2(scores):
    """Welch t-test between the two highest-mean score columns.

    Degrees of freedom follow Welch-Satterthwaite.  If both columns
    have zero variance the p-value degenerates to 1 (equal means) or
    DEGENERATE_P (different means), keeping the collapse limit defined.
    Ties in the mean ranking break toward the lower class index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] < 2:
        raise ConfigError("scores must be (S, C) with C >= 2")
    n = scores.shape[0]
    if n < 2:
        raise ConfigError("t-test requires at least 2 score rows")
    means = scores.mean(axis=0)
    pred = int(np.argmax(means))
    rest = means.copy()
    rest[pred] = -np.inf
    runner = int(np.argmax(rest))
    x = scores[:, pred]
    y = scores[:, runner]
    vx = x.var(ddof=1)
    vy = y.var(ddof=1)
    if vx == 0.0 and vy == 0.0:
        return pred, (1.0 if means[pred] == means[runner] else DEGENERATE_P)
    se2 = vx / n + vy / n
    t = (means[pred] - means[runner]) / np.sqrt(se2)
    dof = se2 * se2 / ((vx / n) ** 2 / (n - 1) + (vy / n) ** 2 / (n - 1))
    return pred, student_t_two_sided_p(t, dof)


def evaluate_uncertainty(params, dataset, n_samples=20, threshold=0.05,
                         seed=0, threads=None, deterministic=False):
    """Per-sample records and the PAvPU report over a labeled dataset.

    Each sample gets its own RNG substream derived from (seed, id), so
    results do not depend on the worker count.
    """
    if n_samples < 2:
        raise ConfigError("uncertainty evaluation needs n_samples >= 2")
    features = dataset.features
    labels = np.asarray(dataset.labels)
    workers = resolve_threads(threads, deterministic)

    def _one(i):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(i,))
        )
        scores = mc_scores(params, features[i], n_samples, rng)
        pred, p = p_value_top2(scores)
        return UncertaintyRecord(
            sample_id=i,
            predicted=pred,
            true_label=int(labels[i]),
            p_value=float(p),
            certain=bool(p < threshold),
            correct=bool(pred == labels[i]),
        )

    records = map_ordered(_one, range(features.shape[0]), workers)
    return records, pavpu_from_records(records, threshold, n_samples)


def pavpu_from_records(records, threshold, n_samples):
    n_ac = sum(r.correct and r.certain for r in records)
    n_au = sum(r.correct and not r.certain for r in records)
    n_ic = sum(not r.correct and r.certain for r in records)
    n_iu = sum(not r.correct and not r.certain for r in records)
    total = n_ac + n_au + n_ic + n_iu
    return PavpuReport(
        n_ac=n_ac,
        n_au=n_au,
        n_ic=n_ic,
        n_iu=n_iu,
        pavpu=(n_ac + n_iu) / total if total else 0.0,
        threshold=threshold,
        mc_samples=n_samples,
    )


def uncertainty_bins(records, n_bins=10):
    """Sort records by p-value and split into near-equal contiguous bins."""
    if not records:
        raise ConfigError("cannot bin an empty record list")
    if n_bins < 1 or n_bins > len(records):
        raise ConfigError(
            f"n_bins must lie in [1, {len(records)}], got {n_bins}"
        )
    p = np.array([r.p_value for r in records])
    correct = np.array([r.correct for r in records], dtype=np.float64)
    order = np.argsort(p, kind="stable")
    chunks = np.array_split(order, n_bins)
    return BinCurve(
        mean_p=np.array([p[c].mean() for c in chunks]),
        accuracy=np.array([correct[c].mean() for c in chunks]),
        count=np.array([len(c) for c in chunks]),
    )
