"""Accuracy, nnz sparsity, sparsity-accuracy sweeps, and a softmax baseline."""

from dataclasses import dataclass, replace

import numpy as np

from ._threads import map_ordered, resolve_threads
from .errors import ConfigError, IngestionError
from .model import CAT_EPS, expected_scores, global_mean, infer_global, infer_local
from .training import (
    OptimizerState,
    TrainConfig,
    adam_step,
    draw_uniform_open,
    one_hot,
    train,
)
from .uncertainty import evaluate_uncertainty

NNZ_THRESHOLD = 1e-5


@dataclass(frozen=True)
class SparsityReport:
    threshold: float
    l_non: int
    l_sparse: int
    nnz: float

    def to_dict(self):
        return {
            "threshold": self.threshold,
            "l_non": self.l_non,
            "l_sparse": self.l_sparse,
            "nnz": self.nnz,
        }


@dataclass(frozen=True)
class SweepPoint:
    alpha: float
    nnz: float
    accuracy: float
    pavpu: float = None
    status: str = "ok"

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "nnz": self.nnz,
            "accuracy": self.accuracy,
            "pavpu": self.pavpu,
            "status": self.status,
        }


@dataclass
class BaselineSoftmaxParams:
    w: np.ndarray  # (D, C)
    b: np.ndarray  # (C,)


def accuracy(params, dataset, mode="expected", mc_samples=200, seed=0):
    """Fraction of argmax-correct predictions.

    ``expected`` mode is deterministic (posterior-mean forward pass);
    ``mc`` mode averages ``mc_samples`` sampled probability vectors per
    example before taking the argmax.
    """
    features = dataset.features
    labels = np.asarray(dataset.labels)
    if features.shape[0] == 0:
        raise ConfigError("accuracy of an empty dataset is undefined")
    if mode == "expected":
        preds = np.argmax(expected_scores(params, features), axis=1)
        return float(np.mean(preds == labels))
    if mode != "mc":
        raise ConfigError(f"mode must be 'expected' or 'mc', got {mode!r}")
    gp = infer_global(params)
    latent, classes = gp.k_phi.shape
    lp = infer_local(params, features)
    preds = np.empty(features.shape[0], dtype=np.int64)
    for i in range(features.shape[0]):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(i,))
        )
        eps_t = draw_uniform_open(rng, (mc_samples, latent))
        eps_p = draw_uniform_open(rng, (mc_samples, latent, classes))
        theta = lp.lam[i] * np.power(-np.log1p(-eps_t), 1.0 / lp.k[i])
        phi = gp.lam_phi * np.power(-np.log1p(-eps_p), 1.0 / gp.k_phi)
        u = np.einsum("sk,skc->sc", theta, phi) + CAT_EPS
        probs = u / u.sum(axis=1, keepdims=True)
        preds[i] = int(np.argmax(probs.mean(axis=0)))
    return float(np.mean(preds == labels))


def nnz_sparsity(gp, threshold=NNZ_THRESHOLD):
    """Fraction of posterior-mean loading entries above the threshold."""
    mean = global_mean(gp)
    l_non = int(np.count_nonzero(mean > threshold))
    total = mean.size
    return SparsityReport(
        threshold=threshold,
        l_non=l_non,
        l_sparse=total - l_non,
        nnz=l_non / total,
    )


def sweep_alpha(dataset, base_config, alphas, pavpu_samples=None,
                threads=None, deterministic=False):
    """Train one fresh model per sparsity threshold; record (alpha, nnz, acc).

    Every model starts from the same seed; a failed point is kept in the
    output with status "failed" so the emitted CSV always has one row
    per requested alpha.
    """
    if not len(alphas):
        raise ConfigError("sweep needs at least one alpha")
    workers = resolve_threads(threads, deterministic)

    def _one(alpha):
        try:
            cfg = replace(base_config, alpha_sparsity=float(alpha))
            params, _ = train(dataset, cfg)
            rep = nnz_sparsity(infer_global(params))
            acc = accuracy(params, dataset, mode="expected")
            pavpu = None
            if pavpu_samples:
                _, report = evaluate_uncertainty(
                    params, dataset, n_samples=pavpu_samples,
                    seed=base_config.seed,
                )
                pavpu = report.pavpu
            return SweepPoint(
                alpha=float(alpha), nnz=rep.nnz, accuracy=acc, pavpu=pavpu
            )
        except Exception:
            return SweepPoint(
                alpha=float(alpha), nnz=float("nan"),
                accuracy=float("nan"), status="failed",
            )

    return map_ordered(_one, list(alphas), workers)


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def baseline_loss_and_grad(bp, features, targets):
    """Mean log-likelihood of multinomial logistic regression + gradients."""
    logits = features @ bp.w + bp.b
    probs = _softmax(logits)
    n = features.shape[0]
    ll = float(np.sum(targets * (logits - _logsumexp(logits))) / n)
    delta = (targets - probs) / n
    return ll, {"w": features.T @ delta, "b": delta.sum(axis=0)}


def _logsumexp(logits):
    m = logits.max(axis=1, keepdims=True)
    return m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))


def baseline_softmax_train(dataset, lr=0.05, epochs=200, seed=0,
                           batch_size=128):
    """Plain softmax classifier over the same features; comparison anchor.

    Trained with the shared Adam machinery on the mean log-likelihood.
    Returns (BaselineSoftmaxParams, train accuracy).
    """
    features = np.ascontiguousarray(dataset.features, dtype=np.float64)
    labels = np.asarray(dataset.labels)
    n, dim = features.shape
    if labels.shape[0] != n:
        raise IngestionError("feature and label counts disagree")
    targets = one_hot(labels, dataset.n_classes)
    rng = np.random.default_rng(seed)
    bp = BaselineSoftmaxParams(
        w=rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, dataset.n_classes)),
        b=np.zeros(dataset.n_classes),
    )
    blocks = {"w": bp.w, "b": bp.b}
    state = OptimizerState.zeros_like(blocks)
    cfg = TrainConfig(latent_dim=1, learning_rate=lr, epochs=epochs,
                      batch_size=min(batch_size, n), seed=seed)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            _, grads = baseline_loss_and_grad(bp, features[idx], targets[idx])
            adam_step(blocks, grads, state, cfg)
    preds = np.argmax(features @ bp.w + bp.b, axis=1)
    return bp, float(np.mean(preds == labels))
