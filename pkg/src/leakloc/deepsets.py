"""Permutation-invariant set regressor for the focal point, trained in-module.

Each sensor contributes one feature triple (mean normalized power, known
range, known azimuth). A shared encoder lifts every triple to a latent
vector, attention pooling collapses the set into one vector regardless
of ordering or cardinality, and a decoder head per target maps the
pooled vector to a normalized coordinate. Training is plain minibatch
Adam on mean squared error with early stopping on validation loss.

Differentiation is reverse-mode, written out by hand for exactly this
graph: affine layers, GELU, tanh, and the softmax-weighted sum. There
is no tape and no operator overloading; every forward pass caches the
intermediates its backward pass needs, and the gradient of every
parameter is assembled explicitly. That keeps the whole trainer
dependent on nothing but numpy plus the error function, and makes the
finite-difference oracle in the test suite meaningful: it checks the
actual derivation, not a framework.

Shapes follow one convention: batches of samples stack to (B, K, 3),
latent activations to (B, K, width), pooled vectors to (B, width), and
parameters are stored in a flat name-to-array mapping so the optimizer,
the checkpoint format, and the finite-difference check can walk them
uniformly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf

from .geometry import SensorSet, UeLocation

__all__ = [
    "SetSample",
    "FeatureNormalizer",
    "DeepSetsModel",
    "TrainConfig",
    "TrainHistory",
    "TrainingDiverged",
    "init_params",
    "forward",
    "predict_batch",
    "attention_weights",
    "backward",
    "batch_loss",
    "train",
    "make_dataset",
    "evaluate_mse",
    "box_center_mse",
    "save_model",
    "load_model",
]

_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SetSample:
    """One labeled observation set.

    ``elements`` has shape (K, 3) with columns (mean normalized power,
    sensor range in meters, sensor azimuth in radians); row order
    carries no meaning.
    """

    elements: np.ndarray
    label: UeLocation

    def __post_init__(self) -> None:
        e = np.asarray(self.elements, dtype=np.float64)
        if e.ndim != 2 or e.shape[1] != 3 or e.shape[0] < 1:
            raise ValueError("elements must have shape (K >= 1, 3)")
        object.__setattr__(self, "elements", e)


@dataclass(frozen=True)
class FeatureNormalizer:
    """Frozen affine feature statistics plus the label box.

    Powers pass through log1p before standardization because they span
    orders of magnitude across noise settings; ranges and azimuths are
    standardized directly; labels map to [0, 1] over the feasible box.
    """

    z_mean: float
    z_std: float
    rng_mean: float
    rng_std: float
    az_mean: float
    az_std: float
    d_box: tuple[float, float]
    phi_box: tuple[float, float]

    @classmethod
    def fit(cls, samples: Sequence[SetSample], d_box: tuple[float, float],
            phi_box: tuple[float, float]) -> "FeatureNormalizer":
        stacked = np.concatenate([s.elements for s in samples], axis=0)
        logz = np.log1p(np.maximum(stacked[:, 0], 0.0))

        def stats(col: np.ndarray) -> tuple[float, float]:
            return float(col.mean()), float(max(col.std(), 1e-12))

        zm, zs = stats(logz)
        rm, rs = stats(stacked[:, 1])
        am, as_ = stats(stacked[:, 2])
        return cls(zm, zs, rm, rs, am, as_, tuple(d_box), tuple(phi_box))

    def encode_features(self, elements: np.ndarray) -> np.ndarray:
        out = np.empty_like(elements)
        out[..., 0] = (np.log1p(np.maximum(elements[..., 0], 0.0))
                       - self.z_mean) / self.z_std
        out[..., 1] = (elements[..., 1] - self.rng_mean) / self.rng_std
        out[..., 2] = (elements[..., 2] - self.az_mean) / self.az_std
        return out

    def encode_labels(self, labels: np.ndarray) -> np.ndarray:
        out = np.empty_like(labels)
        out[..., 0] = ((labels[..., 0] - self.d_box[0])
                       / (self.d_box[1] - self.d_box[0]))
        out[..., 1] = ((labels[..., 1] - self.phi_box[0])
                       / (self.phi_box[1] - self.phi_box[0]))
        return out

    def decode_labels(self, normalized: np.ndarray) -> np.ndarray:
        out = np.empty_like(normalized)
        out[..., 0] = (self.d_box[0]
                       + normalized[..., 0] * (self.d_box[1] - self.d_box[0]))
        out[..., 1] = (self.phi_box[0]
                       + normalized[..., 1] * (self.phi_box[1] - self.phi_box[0]))
        return out


_N_ENCODER_LAYERS = 4


def _decoder_widths(width: int) -> list[int]:
    return [width, width // 2, width // 4]


def _head_names(two_heads: bool) -> list[str]:
    return ["d", "phi"] if two_heads else ["psi"]


def init_params(width: int, two_heads: bool,
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Symmetric uniform fan-in initialization; small query vector."""

    def affine(name: str, fan_in: int, fan_out: int) -> None:
        bound = 1.0 / math.sqrt(fan_in)
        params[f"{name}_w"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        params[f"{name}_b"] = rng.uniform(-bound, bound, size=fan_out)

    params: dict[str, np.ndarray] = {}
    fan = 3
    for layer in range(_N_ENCODER_LAYERS):
        affine(f"enc{layer}", fan, width)
        fan = width
    bound = 1.0 / math.sqrt(width)
    params["att_w"] = rng.uniform(-bound, bound, size=(width, width))
    # near-zero query keeps the initial attention close to uniform
    params["att_q"] = rng.uniform(-0.01, 0.01, size=width)
    out_dim = 1 if two_heads else 2
    for head in _head_names(two_heads):
        dims = [width] + _decoder_widths(width) + [out_dim]
        for layer in range(len(dims) - 1):
            affine(f"{head}{layer}", dims[layer], dims[layer + 1])
    return params


@dataclass
class DeepSetsModel:
    """Parameters, frozen normalization, and the two architecture knobs."""

    params: dict[str, np.ndarray]
    normalizer: FeatureNormalizer
    width: int = 256
    two_heads: bool = True
    seed: int = 0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("epoch counts must be at least 1")
        if not self.learning_rate > 0.0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def _softmax(logits: np.ndarray) -> np.ndarray:
    """Rows sum to one; shifting a row by a constant changes nothing."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_core(params: dict[str, np.ndarray], x: np.ndarray, width: int,
                  two_heads: bool, want_cache: bool):
    """Normalized features (B, K, 3) to normalized outputs (B, 2)."""
    cache: dict[str, np.ndarray | list] = {"enc_in": [], "enc_pre": []}
    a = x
    for layer in range(_N_ENCODER_LAYERS):
        pre = a @ params[f"enc{layer}_w"].T + params[f"enc{layer}_b"]
        if want_cache:
            cache["enc_in"].append(a)
            cache["enc_pre"].append(pre)
        a = _gelu(pre)
    h = a                                                   # (B, K, w)

    t = np.tanh(h @ params["att_w"].T)                      # (B, K, w)
    logits = t @ params["att_q"]                            # (B, K)
    alpha = _softmax(logits)
    pooled = np.einsum("bk,bkw->bw", alpha, h)

    head_caches: dict[str, dict] = {}
    outs = []
    for head in _head_names(two_heads):
        c = pooled
        hc: dict[str, list | np.ndarray] = {"in": [], "pre": []}
        n_layers = len(_decoder_widths(width)) + 1
        for layer in range(n_layers):
            pre = c @ params[f"{head}{layer}_w"].T + params[f"{head}{layer}_b"]
            if want_cache:
                hc["in"].append(c)
                hc["pre"].append(pre)
            c = _gelu(pre) if layer < n_layers - 1 else pre
        outs.append(c)
        head_caches[head] = hc
    y = np.concatenate(outs, axis=-1) if two_heads else outs[0]

    if not want_cache:
        return y, None
    cache.update(h=h, t=t, alpha=alpha, pooled=pooled, heads=head_caches)
    return y, cache


def _stack_batch(model: DeepSetsModel,
                 samples: Sequence[SetSample]) -> tuple[np.ndarray, np.ndarray]:
    if len(samples) == 0:
        raise ValueError("batch must be nonempty")
    k = samples[0].elements.shape[0]
    if any(s.elements.shape[0] != k for s in samples):
        raise ValueError("all samples in a batch must share one set size")
    raw = np.stack([s.elements for s in samples])
    labels = np.array([[s.label.distance_m, s.label.azimuth_rad]
                       for s in samples])
    return model.normalizer.encode_features(raw), model.normalizer.encode_labels(
        labels)


def forward(model: DeepSetsModel, elements: np.ndarray) -> UeLocation:
    """Estimate for one observation set, in meters and radians.

    Normalized outputs are projected onto [0, 1] before decoding, so the
    estimate always lies inside the label box the model was fitted for
    and satisfies the location domain invariants even for an untrained
    network. Projection onto a convex set containing the truth never
    increases the error.
    """
    e = np.asarray(elements, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] != 3 or e.shape[0] < 1:
        raise ValueError("elements must have shape (K >= 1, 3)")
    x = model.normalizer.encode_features(e[None, :, :])
    y, _ = _forward_core(model.params, x, model.width, model.two_heads,
                         want_cache=False)
    raw = model.normalizer.decode_labels(np.clip(y, 0.0, 1.0))[0]
    return UeLocation(float(raw[0]), float(raw[1]))


def predict_batch(model: DeepSetsModel,
                  samples: Sequence[SetSample]) -> np.ndarray:
    """Estimates for many sets at once, shape (B, 2), raw units.

    Applies the same projection onto the label box as ``forward``.
    """
    x, _ = _stack_batch(model, samples)
    y, _ = _forward_core(model.params, x, model.width, model.two_heads,
                         want_cache=False)
    return model.normalizer.decode_labels(np.clip(y, 0.0, 1.0))


def attention_weights(model: DeepSetsModel, elements: np.ndarray) -> np.ndarray:
    """The softmax weights the pooling assigns to each element."""
    e = np.asarray(elements, dtype=np.float64)
    x = model.normalizer.encode_features(e[None, :, :])
    a = x
    for layer in range(_N_ENCODER_LAYERS):
        a = _gelu(a @ model.params[f"enc{layer}_w"].T
                  + model.params[f"enc{layer}_b"])
    t = np.tanh(a @ model.params["att_w"].T)
    return _softmax(t @ model.params["att_q"])[0]


def backward(model: DeepSetsModel, samples: Sequence[SetSample]
             ) -> tuple[dict[str, np.ndarray], float]:
    """Mean squared error over the batch and its parameter gradients.

    The loss averages over both samples and the two normalized targets.
    Every gradient below mirrors one cached piece of the forward pass;
    the finite-difference test drives each parameter individually.
    """
    params = model.params
    x, y_true = _stack_batch(model, samples)
    y, cache = _forward_core(params, x, model.width, model.two_heads,
                             want_cache=True)
    b = y.shape[0]
    resid = y - y_true
    loss = float(np.mean(resid**2))

    grads = {name: np.zeros_like(p) for name, p in params.items()}
    # d loss / d y: mean over B samples and 2 targets
    dy = resid * (2.0 / (b * 2.0))

    d_pooled = np.zeros_like(cache["pooled"])
    heads = _head_names(model.two_heads)
    n_layers = len(_decoder_widths(model.width)) + 1
    for idx, head in enumerate(heads):
        hc = cache["heads"][head]
        dc = dy[:, idx:idx + 1] if model.two_heads else dy
        for layer in reversed(range(n_layers)):
            pre = hc["pre"][layer]
            dpre = dc if layer == n_layers - 1 else dc * _gelu_grad(pre)
            grads[f"{head}{layer}_w"] += dpre.T @ hc["in"][layer]
            grads[f"{head}{layer}_b"] += dpre.sum(axis=0)
            dc = dpre @ params[f"{head}{layer}_w"]
        d_pooled += dc

    h, t, alpha = cache["h"], cache["t"], cache["alpha"]
    # pooled = sum_k alpha_k h_k
    d_alpha = np.einsum("bw,bkw->bk", d_pooled, h)
    dh = alpha[:, :, None] * d_pooled[:, None, :]
    # softmax backward: ds_k = alpha_k (da_k - sum_j alpha_j da_j)
    ds = alpha * (d_alpha - (alpha * d_alpha).sum(axis=-1, keepdims=True))
    grads["att_q"] += np.einsum("bk,bkw->w", ds, t)
    # t = tanh(att_w h)
    dt_pre = ds[:, :, None] * params["att_q"] * (1.0 - t * t)
    grads["att_w"] += np.einsum("bki,bkj->ij", dt_pre, h)
    dh += dt_pre @ params["att_w"]

    da = dh
    for layer in reversed(range(_N_ENCODER_LAYERS)):
        pre = cache["enc_pre"][layer]
        dpre = da * _gelu_grad(pre)
        grads[f"enc{layer}_w"] += np.einsum("bko,bki->oi", dpre,
                                            cache["enc_in"][layer])
        grads[f"enc{layer}_b"] += dpre.sum(axis=(0, 1))
        da = dpre @ params[f"enc{layer}_w"]
    return grads, loss


def batch_loss(model: DeepSetsModel, samples: Sequence[SetSample]) -> float:
    """The training loss alone, for finite differencing and validation."""
    x, y_true = _stack_batch(model, samples)
    y, _ = _forward_core(model.params, x, model.width, model.two_heads,
                         want_cache=False)
    return float(np.mean((y - y_true) ** 2))


def _split_loss(model: DeepSetsModel, samples: Sequence[SetSample],
                chunk: int = 512) -> float:
    """Loss over a whole split, chunked so large splits stay in cache."""
    total = 0.0
    for start in range(0, len(samples), chunk):
        part = samples[start:start + chunk]
        total += batch_loss(model, part) * len(part)
    return total / len(samples)


def train(
    train_samples: Sequence[SetSample],
    val_samples: Sequence[SetSample],
    config: TrainConfig,
    width: int = 256,
    two_heads: bool = True,
    d_box: tuple[float, float] | None = None,
    phi_box: tuple[float, float] | None = None,
) -> tuple[DeepSetsModel, TrainHistory]:
    """Minibatch Adam with early stopping; returns the best-validation model.

    The label box defaults to the extremes of the training labels; pass
    the scenario box explicitly when training on a narrow subset.
    Deterministic for a fixed config: initialization and shuffling come
    from one seeded generator and accumulation order is fixed.
    """
    if len(train_samples) == 0 or len(val_samples) == 0:
        raise ValueError("train and validation splits must be nonempty")
    labels_d = [s.label.distance_m for s in train_samples]
    labels_p = [s.label.azimuth_rad for s in train_samples]
    if d_box is None:
        d_box = (min(labels_d), max(labels_d))
    if phi_box is None:
        phi_box = (min(labels_p), max(labels_p))
    normalizer = FeatureNormalizer.fit(train_samples, d_box, phi_box)

    rng = np.random.default_rng(config.seed)
    params = init_params(width, two_heads, rng)
    model = DeepSetsModel(params, normalizer, width, two_heads, config.seed)

    adam_m = {k: np.zeros_like(v) for k, v in params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    history = TrainHistory()
    best_val = math.inf
    best_params: dict[str, np.ndarray] = {k: v.copy() for k, v in params.items()}
    stale = 0

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_samples))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_samples[i] for i in order[start:start + config.batch_size]]
            grads, loss = backward(model, batch)
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became {loss} at epoch {epoch}, step {step}")
            epoch_loss += loss * len(batch)
            step += 1
            bias1 = 1.0 - config.beta1**step
            bias2 = 1.0 - config.beta2**step
            # overflow in the moment accumulators is the divergence path;
            # the finiteness check on the next step's loss reports it, so
            # the elementwise warnings would only be noise
            with np.errstate(over="ignore", invalid="ignore"):
                for name, g in grads.items():
                    m = adam_m[name]
                    v = adam_v[name]
                    m += (1.0 - config.beta1) * (g - m)
                    v += (1.0 - config.beta2) * (g * g - v)
                    params[name] -= (config.learning_rate * (m / bias1)
                                     / (np.sqrt(v / bias2) + config.eps))
        history.train_loss.append(epoch_loss / len(train_samples))
        val = _split_loss(model, val_samples)
        history.val_loss.append(val)
        if val < best_val:
            best_val = val
            history.best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.params = best_params
    return model, history


def make_dataset(
    scenario,
    n_train: int = 35_000,
    n_val: int = 15_000,
    n_test: int = 1_000,
    seed: int = 0,
) -> tuple[list[SetSample], list[SetSample], list[SetSample]]:
    """Labeled observation sets for one fixed sensor geometry.

    ``scenario`` is anything carrying geom, sensors (a concrete sensor
    set), ue_box as ((d_lo, d_hi), (phi_lo, phi_hi)), p_t_watts,
    sigma2_watts, and n_snapshots; the harness scenario type qualifies.
    Focal points are uniform over the box; every sample reuses the same
    sensors, so the range and azimuth feature columns are constant
    across the dataset and only the powers vary. All randomness expands
    from the one seed, so a call with the same seed and sizes
    reproduces every sample exactly.
    """
    from .leakage import LeakageBackend, leakage_pattern
    from .observation import NoiseModel, sample_block

    counts = (n_train, n_val, n_test)
    if any(c < 0 for c in counts):
        raise ValueError("split sizes must be nonnegative")
    sensors: SensorSet = scenario.sensors
    (d_lo, d_hi), (p_lo, p_hi) = scenario.ue_box
    noise = NoiseModel(scenario.sigma2_watts)
    total = sum(counts)
    rng = np.random.default_rng(seed)
    distances = rng.uniform(d_lo, d_hi, size=total)
    azimuths = rng.uniform(p_lo, p_hi, size=total)
    block_seeds = np.random.SeedSequence(seed).generate_state(total,
                                                              dtype=np.uint64)
    feats = np.empty((len(sensors), 3))
    feats[:, 1] = sensors.ranges_m
    feats[:, 2] = sensors.azimuths_rad

    samples: list[SetSample] = []
    for i in range(total):
        psi = UeLocation(float(distances[i]), float(azimuths[i]))
        pattern = leakage_pattern(LeakageBackend.EXACT, scenario.geom, psi,
                                  sensors, scenario.p_t_watts)
        block = sample_block(pattern, noise, scenario.n_snapshots,
                             seed=int(block_seeds[i]))
        e = feats.copy()
        e[:, 0] = block.mean_normalized
        samples.append(SetSample(e, psi))
    split1 = counts[0]
    split2 = counts[0] + counts[1]
    return samples[:split1], samples[split1:split2], samples[split2:]


def evaluate_mse(model: DeepSetsModel,
                 samples: Sequence[SetSample]) -> tuple[float, float]:
    """Mean squared errors (m^2, rad^2) of the model on labeled sets."""
    preds = predict_batch(model, samples)
    truth = np.array([[s.label.distance_m, s.label.azimuth_rad]
                      for s in samples])
    err = np.mean((preds - truth) ** 2, axis=0)
    return float(err[0]), float(err[1])


def box_center_mse(samples: Sequence[SetSample],
                   d_box: tuple[float, float],
                   phi_box: tuple[float, float]) -> tuple[float, float]:
    """MSE of the data-blind predictor that always answers the box center."""
    truth = np.array([[s.label.distance_m, s.label.azimuth_rad]
                      for s in samples])
    center = np.array([0.5 * (d_box[0] + d_box[1]),
                       0.5 * (phi_box[0] + phi_box[1])])
    err = np.mean((truth - center) ** 2, axis=0)
    return float(err[0]), float(err[1])


def _checkpoint_path(path: str | Path) -> Path:
    p = Path(path)
    return p if p.suffix == ".npz" else p.with_suffix(p.suffix + ".npz")


def save_model(path: str | Path, model: DeepSetsModel) -> Path:
    """One-file checkpoint: parameters, normalizer, and hyperparameters.

    Returns the path actually written (an .npz suffix is enforced so
    saving and loading agree on the file name).
    """
    norm = model.normalizer
    meta = np.array([_CHECKPOINT_VERSION, model.width,
                     int(model.two_heads), model.seed], dtype=np.int64)
    norm_vec = np.array([norm.z_mean, norm.z_std, norm.rng_mean, norm.rng_std,
                         norm.az_mean, norm.az_std, *norm.d_box, *norm.phi_box])
    target = _checkpoint_path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    # write-then-rename so a crash never leaves a half-written checkpoint
    tmp = target.with_name(target.name + ".tmp.npz")
    np.savez(tmp, _meta=meta, _normalizer=norm_vec,
             **{f"param_{k}": v for k, v in model.params.items()})
    os.replace(tmp, target)
    return target


def load_model(path: str | Path) -> DeepSetsModel:
    with np.load(_checkpoint_path(path)) as data:
        meta = data["_meta"]
        if int(meta[0]) != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(meta[0])}")
        nv = [float(v) for v in data["_normalizer"]]
        normalizer = FeatureNormalizer(*nv[:6], (nv[6], nv[7]), (nv[8], nv[9]))
        params = {k[len("param_"):]: data[k] for k in data.files
                  if k.startswith("param_")}
    return DeepSetsModel(params, normalizer, int(meta[1]), bool(meta[2]),
                         int(meta[3]))
