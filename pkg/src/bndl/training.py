"""Training: ELBO objective, optimizers, epoch loop, checkpoints.

The objective for a minibatch of size B drawn from a dataset of size N:

    (1/B) * sum_j [ log p(y_j | theta_j, phi_j)
                    - kl_scale_local * KL(q(theta_j) || prior) ]
    - (1/N) * KL(q(phi) || prior)

One theta and one phi draw per datum per MC pass; the 1/N scaling keeps
the batch objective an unbiased estimate of the per-sample ELBO, so
summing batch objectives weighted by batch size over an epoch
reproduces the full-dataset bound with the global KL counted once.

Gradients come from the selected kernel backend (compiled or numpy) and
are exact analytic partials through the reparameterized samples; the
gradient checker below is their ground truth.
"""

import struct
from dataclasses import dataclass, fields

import numpy as np

from . import backend
from .distributions import GammaParams, SCALE_FLOOR, SHAPE_MAX, SHAPE_MIN
from .errors import ConfigError, FormatError, IngestionError, NumericsError
from .model import ModelParams, expected_scores, init_model
from .special import softplus

CHECKPOINT_MAGIC = b"BNDLCKPT"
CHECKPOINT_VERSION = 1
_BLOCK_ORDER = ("wk", "bk", "wl", "bl", "w1", "w2")


@dataclass
class TrainConfig:
    latent_dim: int
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 128
    seed: int = 0
    alpha_sparsity: float = 0.0
    mc_samples_per_step: int = 1
    kl_scale_local: float = 1.0
    optimizer: str = "adam"  # "adam" or "sgd_momentum"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    momentum: float = 0.9
    weight_decay: float = 0.0

    def validate(self):
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.mc_samples_per_step < 1:
            raise ConfigError("mc_samples_per_step must be >= 1")
        if self.alpha_sparsity < 0.0:
            raise ConfigError("alpha_sparsity must be non-negative")
        if self.kl_scale_local < 0.0:
            raise ConfigError("kl_scale_local must be non-negative")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be non-negative")


@dataclass
class OptimizerState:
    """First/second moment accumulators matching the parameter blocks."""

    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, blocks):
        return cls(
            m={k: np.zeros_like(a) for k, a in blocks.items()},
            v={k: np.zeros_like(a) for k, a in blocks.items()},
        )


@dataclass(frozen=True)
class ElboStats:
    objective: float
    log_likelihood: float
    kl_local: float
    kl_global: float


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    objective: float
    log_likelihood: float
    kl_local: float
    kl_global: float
    accuracy: float

    def to_dict(self):
        return {
            "epoch": self.epoch,
            "objective": self.objective,
            "log_likelihood": self.log_likelihood,
            "kl_local": self.kl_local,
            "kl_global": self.kl_global,
            "accuracy": self.accuracy,
        }


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig
    opt_state: OptimizerState = None
    version: int = CHECKPOINT_VERSION


def draw_uniform_open(rng, shape):
    """Uniforms on the open interval (0, 1); endpoint draws are rejected."""
    u = rng.random(shape)
    bad = (u <= 0.0) | (u >= 1.0)
    while bad.any():
        u[bad] = rng.random(int(bad.sum()))
        bad = (u <= 0.0) | (u >= 1.0)
    return u


def draw_noise(rng, n_draws, batch, latent, classes):
    """One (theta, phi) noise pair per datum per MC draw, in fixed order."""
    eps_theta = draw_uniform_open(rng, (n_draws, batch, latent))
    eps_phi = draw_uniform_open(rng, (n_draws, batch, latent, classes))
    return eps_theta, eps_phi


def elbo_batch(params, features, targets, noise, kl_scale_local=1.0, n_total=None):
    """Objective and analytic gradients for one minibatch.

    ``targets`` holds one label distribution per row (one-hot for hard
    labels).  ``noise`` is the (eps_theta, eps_phi) pair from
    ``draw_noise``; evaluation is a pure function of its arguments.
    """
    h = np.ascontiguousarray(features, dtype=np.float64)
    t = np.ascontiguousarray(targets, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ConfigError("batch must be a non-empty (B, D) array")
    if t.shape != (h.shape[0], params.classes):
        raise ConfigError(
            f"targets shape {t.shape} does not match (B={h.shape[0]}, C={params.classes})"
        )
    eps_theta = np.ascontiguousarray(noise[0], dtype=np.float64)
    eps_phi = np.ascontiguousarray(noise[1], dtype=np.float64)
    n_draws = eps_theta.shape[0]
    expect_th = (n_draws, h.shape[0], params.latent)
    expect_ph = expect_th + (params.classes,)
    if eps_theta.shape != expect_th or eps_phi.shape != expect_ph:
        raise ConfigError("noise arrays do not match (draws, batch, K[, C])")
    if n_total is None:
        n_total = h.shape[0]
    objective, ll_mean, kl_local, kl_global, grads = backend.elbo_batch_kernel(
        h,
        t,
        params.wk,
        params.bk,
        params.wl,
        params.bl,
        params.w1,
        params.w2,
        params.alpha_sparsity,
        params.prior_theta.alpha,
        params.prior_theta.beta,
        params.prior_phi.alpha,
        params.prior_phi.beta,
        eps_theta,
        eps_phi,
        kl_scale_local,
        1.0 / n_total,
    )
    stats = ElboStats(
        objective=objective,
        log_likelihood=ll_mean,
        kl_local=kl_local,
        kl_global=kl_global,
    )
    return stats, grads


def adam_step(blocks, grads, state, config):
    """Bias-corrected Adam ascent step, in place.  Returns (blocks, state)."""
    t = state.step + 1
    c1 = 1.0 - config.adam_beta1 ** t
    c2 = 1.0 - config.adam_beta2 ** t
    for name, p in blocks.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient in parameter block '{name}'")
        if config.weight_decay:
            g = g - config.weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= config.adam_beta1
        m += (1.0 - config.adam_beta1) * g
        v *= config.adam_beta2
        v += (1.0 - config.adam_beta2) * (g * g)
        p += config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    state.step = t
    return blocks, state


def sgd_momentum_step(blocks, grads, state, config):
    """Momentum ascent step; the velocity lives in the first moments."""
    for name, p in blocks.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient in parameter block '{name}'")
        if config.weight_decay:
            g = g - config.weight_decay * p
        vel = state.m[name]
        vel *= config.momentum
        vel += g
        p += config.learning_rate * vel
    state.step += 1
    return blocks, state


def optimizer_step(blocks, grads, state, config):
    if config.optimizer == "adam":
        return adam_step(blocks, grads, state, config)
    return sgd_momentum_step(blocks, grads, state, config)


def _kink_free(params, features, fd_step):
    """Coordinate mask: False where a perturbation could cross a kink.

    Kinks: the ReLU at 0 and the scale floor for the scale heads, and
    the shape clamps for the shape heads.  A coordinate is skipped when
    any pre-activation it feeds sits within 2*fd_step (scaled by the
    feature magnitude) of one.
    """
    h = features
    pk = softplus(h @ params.wk + params.bk)
    pl = h @ params.wl + params.bl
    spg = softplus(params.w1)
    raw = params.w2 - params.alpha_sparsity

    def near(vals, kinks, scale):
        d = np.min(np.abs(vals[..., None] - np.asarray(kinks)), axis=-1)
        return d < 2.0 * fd_step * scale

    masks = {}
    habs = np.abs(h)
    col_scale = 1.0 + habs.max(axis=0)  # (D,) worst-case amplification
    shape_kinks = (SHAPE_MIN, SHAPE_MAX)
    scale_kinks = (0.0, SCALE_FLOOR)
    # weight coordinate (d, k) is unsafe if any sample's pre-activation
    # in column k is near a kink (conservative: uses the column scale).
    near_k = near(pk, shape_kinks, 1.0).any(axis=0)  # (K,)
    near_l = near(pl, scale_kinks, 1.0).any(axis=0)
    near_k_w = near(pk, shape_kinks, col_scale.max()).any(axis=0)
    near_l_w = near(pl, scale_kinks, col_scale.max()).any(axis=0)
    masks["wk"] = ~np.broadcast_to(near_k_w, params.wk.shape)
    masks["bk"] = ~near_k
    masks["wl"] = ~np.broadcast_to(near_l_w, params.wl.shape)
    masks["bl"] = ~near_l
    masks["w1"] = ~near(spg, shape_kinks, 1.0)
    masks["w2"] = ~near(raw, scale_kinks, 1.0)
    return masks


def grad_check(params, features, targets, noise, fd_step=1e-5,
               kl_scale_local=1.0, n_total=None):
    """Worst relative error of analytic gradients vs central differences.

    The same frozen noise feeds the analytic evaluation and both
    perturbed evaluations.  Coordinates within 2*fd_step of an
    activation kink are excluded (the subgradient convention there is
    0, which finite differences cannot reproduce).
    """
    h = np.ascontiguousarray(features, dtype=np.float64)
    _, grads = elbo_batch(params, h, targets, noise, kl_scale_local, n_total)
    safe = _kink_free(params, h, fd_step)
    worst = 0.0
    work = params.copy()
    for name, arr in work.blocks().items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        sflat = safe[name].reshape(-1)
        for i in range(flat.size):
            if not sflat[i]:
                continue
            orig = flat[i]
            flat[i] = orig + fd_step
            up, _ = elbo_batch(work, h, targets, noise, kl_scale_local, n_total)
            flat[i] = orig - fd_step
            dn, _ = elbo_batch(work, h, targets, noise, kl_scale_local, n_total)
            flat[i] = orig
            fd = (up.objective - dn.objective) / (2.0 * fd_step)
            denom = max(abs(gflat[i]), abs(fd), 1e-8)
            worst = max(worst, abs(gflat[i] - fd) / denom)
    return worst


def one_hot(labels, n_classes):
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _argmax_accuracy(params, features, labels):
    scores = expected_scores(params, features)
    return float(np.mean(np.argmax(scores, axis=1) == labels))


def train_soft(features, targets, config, params=None):
    """Train against per-sample target distributions.

    ``params`` lets callers supply a pre-built model (e.g. a collapse
    initialization); by default a fresh seeded model is created.
    Returns (ModelParams, list of EpochRecord).
    """
    config.validate()
    h = np.ascontiguousarray(features, dtype=np.float64)
    t = np.ascontiguousarray(targets, dtype=np.float64)
    n = h.shape[0]
    if t.shape[0] != n:
        raise IngestionError("feature and target counts disagree")
    if np.any(t < 0.0) or not np.all(np.isfinite(t)):
        raise ConfigError("targets must be finite and non-negative")
    if np.max(np.abs(t.sum(axis=1) - 1.0)) > 1e-8:
        raise ConfigError("target rows must sum to 1")
    if config.batch_size > n:
        raise ConfigError(
            f"batch_size {config.batch_size} exceeds dataset size {n}"
        )
    if params is None:
        params = init_model(
            h.shape[1], config.latent_dim, t.shape[1],
            alpha_sparsity=config.alpha_sparsity, seed=config.seed,
        )
    else:
        params.validate()
    hard_labels = np.argmax(t, axis=1)

    state = OptimizerState.zeros_like(params.blocks())
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(1,))
    )
    latent, classes = params.latent, params.classes
    draws = config.mc_samples_per_step
    history = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        obj_sum = ll_sum = kl_loc_sum = 0.0
        kl_glob = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            hb = h[idx]
            tb = t[idx]
            noise = draw_noise(rng, draws, idx.size, latent, classes)
            stats, grads = elbo_batch(
                params, hb, tb, noise,
                kl_scale_local=config.kl_scale_local, n_total=n,
            )
            optimizer_step(params.blocks(), grads, state, config)
            obj_sum += stats.objective * idx.size
            ll_sum += stats.log_likelihood * idx.size
            kl_loc_sum += stats.kl_local * idx.size
            kl_glob = stats.kl_global
        history.append(EpochRecord(
            epoch=epoch,
            objective=obj_sum / n,
            log_likelihood=ll_sum / n,
            kl_local=kl_loc_sum / n,
            kl_global=kl_glob,
            accuracy=_argmax_accuracy(params, h, hard_labels),
        ))
    return params, history, state


def train(dataset, config):
    """Epoch loop over seeded shuffled minibatches of a labeled dataset.

    Returns (ModelParams, history); fixed seed and single-threaded
    execution give bit-identical histories across runs.
    """
    labels = np.asarray(dataset.labels)
    if labels.shape[0] != dataset.features.shape[0]:
        raise IngestionError("feature and label counts disagree")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= dataset.n_classes:
        raise IngestionError(
            f"labels must lie in [0, {dataset.n_classes})"
        )
    targets = one_hot(labels, dataset.n_classes)
    params, history, _ = train_soft(dataset.features, targets, config)
    return params, history


# ---------------------------------------------------------------------------
# Checkpoint wire format (little-endian):
#   magic "BNDLCKPT" | u32 version | u32 D | u32 K | u32 C | f64 alpha
#   | parameter blocks wk, bk, wl, bl, w1, w2 (row-major f64)
#   | u8 optimizer flag | [first moments, then second moments, same order]
#   | u32 line count | per line: u32 byte length + UTF-8 "key=value"
# ---------------------------------------------------------------------------


def _echo_lines(ckpt):
    lines = []
    for f in fields(TrainConfig):
        lines.append(f"{f.name}={getattr(ckpt.config, f.name)!r}")
    p = ckpt.params
    lines.append(f"prior_theta={p.prior_theta.alpha!r},{p.prior_theta.beta!r}")
    lines.append(f"prior_phi={p.prior_phi.alpha!r},{p.prior_phi.beta!r}")
    if ckpt.opt_state is not None:
        lines.append(f"optimizer_step={ckpt.opt_state.step}")
    return lines


def save_checkpoint(path, ckpt):
    p = ckpt.params
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<IIII", ckpt.version, p.dim, p.latent, p.classes)
    out += struct.pack("<d", p.alpha_sparsity)
    for name in _BLOCK_ORDER:
        out += np.ascontiguousarray(p.blocks()[name], dtype="<f8").tobytes()
    if ckpt.opt_state is not None:
        out += struct.pack("<B", 1)
        for moments in (ckpt.opt_state.m, ckpt.opt_state.v):
            for name in _BLOCK_ORDER:
                out += np.ascontiguousarray(moments[name], dtype="<f8").tobytes()
    else:
        out += struct.pack("<B", 0)
    lines = [s.encode("utf-8") for s in _echo_lines(ckpt)]
    out += struct.pack("<I", len(lines))
    for line in lines:
        out += struct.pack("<I", len(line)) + line
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, n, what):
        if self.offset + n > len(self.data):
            raise FormatError(
                f"truncated checkpoint: needed {n} bytes for {what} "
                f"at offset {self.offset}"
            )
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def f64(self, what):
        return struct.unpack("<d", self.take(8, what))[0]

    def u8(self, what):
        return struct.unpack("<B", self.take(1, what))[0]

    def array(self, shape, what):
        n = int(np.prod(shape)) * 8
        raw = self.take(n, what)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def _parse_config(pairs):
    kwargs = {}
    for f in fields(TrainConfig):
        if f.name not in pairs:
            continue
        raw = pairs[f.name]
        if f.type in ("int", int):
            kwargs[f.name] = int(raw)
        elif f.type in ("float", float):
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = raw.strip("'\"")
    return TrainConfig(**kwargs)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    magic = r.take(8, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0")
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"unsupported checkpoint version {version} at offset 8"
        )
    d = r.u32("D")
    k = r.u32("K")
    c = r.u32("C")
    if d < 1 or k < 1 or c < 1:
        raise FormatError(f"invalid dimensions ({d}, {k}, {c}) at offset 12")
    alpha = r.f64("alpha_sparsity")
    shapes = {
        "wk": (d, k), "bk": (k,), "wl": (d, k), "bl": (k,),
        "w1": (k, c), "w2": (k, c),
    }
    blocks = {
        name: r.array(shapes[name], f"parameter block {name}")
        for name in _BLOCK_ORDER
    }
    flag = r.u8("optimizer flag")
    opt_state = None
    if flag == 1:
        m = {name: r.array(shapes[name], f"first moment {name}")
             for name in _BLOCK_ORDER}
        v = {name: r.array(shapes[name], f"second moment {name}")
             for name in _BLOCK_ORDER}
        opt_state = OptimizerState(m=m, v=v)
    elif flag != 0:
        raise FormatError(
            f"invalid optimizer flag {flag} at offset {r.offset - 1}"
        )
    n_lines = r.u32("config line count")
    pairs = {}
    for _ in range(n_lines):
        ln = r.u32("config line length")
        text = r.take(ln, "config line").decode("utf-8")
        key, _, value = text.partition("=")
        pairs[key] = value
    if r.offset != len(r.data):
        raise FormatError(
            f"{len(r.data) - r.offset} trailing bytes at offset {r.offset}"
        )
    config = _parse_config(pairs)
    prior_theta = GammaParams(*(float(x) for x in pairs.get("prior_theta", "1.0,1.0").split(",")))
    prior_phi = GammaParams(*(float(x) for x in pairs.get("prior_phi", "1.0,1.0").split(",")))
    params = ModelParams(
        alpha_sparsity=alpha,
        prior_theta=prior_theta,
        prior_phi=prior_phi,
        **blocks,
    )
    params.validate()
    if opt_state is not None and "optimizer_step" in pairs:
        opt_state.step = int(pairs["optimizer_step"])
    return Checkpoint(
        params=params, config=config, opt_state=opt_state, version=version
    )
