"""LSTM sequence classifier written directly in numpy.

Stacked LSTM layers read a window of N timed I/O vectors; a dense layer
with 8 softmax outputs reads the last hidden state.  Training minimises the
categorical cross-entropy with backpropagation through time.

Gate blocks inside every ``4H`` weight matrix are ordered input, forget,
cell candidate, output::

    z_t = W x_t + U h_{t-1} + b
    i, f, o = sigmoid(z_i), sigmoid(z_f), sigmoid(z_o);   g = tanh(z_g)
    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .dataset import Dataset, FoldSplit, TimeScaling, WindowSample
from .errors import ModelError, TrainingError
from .faults import NUM_CLASSES
from . import metrics

PROB_FLOOR = 1e-12
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden: int = 64
    layers: int = 1
    num_classes: int = NUM_CLASSES
    window: int = 50
    time_scale: str = "divide:1000"

    def __post_init__(self):
        if self.num_classes != NUM_CLASSES:
            raise ModelError(f"the classifier has exactly {NUM_CLASSES} outputs")
        if self.hidden < 1 or self.layers < 1 or self.window < 1 or self.input_dim < 2:
            raise ModelError(f"invalid model configuration {self}")
        TimeScaling.parse(self.time_scale)

    @property
    def width(self) -> int:
        return self.input_dim - 1

    def shapes(self) -> dict:
        h = self.hidden
        out = {}
        for layer in range(self.layers):
            fan_in = self.input_dim if layer == 0 else h
            out[f"lstm{layer}.W"] = (4 * h, fan_in)
            out[f"lstm{layer}.U"] = (4 * h, h)
            out[f"lstm{layer}.b"] = (4 * h,)
        out["dense.W"] = (self.num_classes, h)
        out["dense.b"] = (self.num_classes,)
        return out


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    gradient_clip: Optional[float] = 5.0
    class_weighting: bool = False
    precision: str = "float32"  # arithmetic of the training loop; checkpoints stay float64

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise TrainingError("learning rate must be positive")
        if self.epochs < 1:
            raise TrainingError("epochs must be >= 1")
        if self.batch_size < 1:
            raise TrainingError("batch size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise TrainingError(f"unknown optimizer {self.optimizer!r}")
        if self.gradient_clip is not None and not self.gradient_clip > 0:
            raise TrainingError("gradient clip must be positive")
        if self.precision not in ("float32", "float64"):
            raise TrainingError(f"unknown precision {self.precision!r}")


class Model:
    def __init__(self, config: ModelConfig, params: dict):
        self.config = config
        self.params = params
        self.scale = TimeScaling.parse(config.time_scale)
        shapes = config.shapes()
        if set(params) != set(shapes):
            raise ModelError(f"parameter names {sorted(params)} do not match the configuration")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ModelError(f"{name} has shape {params[name].shape}, expected {shape}")

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})

    def features(self, window) -> np.ndarray:
        """``(1, N, input_dim)`` network input for one window."""
        if isinstance(window, WindowSample):
            t_rel, values = window.t_rel, window.values
        else:
            t_rel = np.array([v.t_rel for v in window], dtype=np.float64)
            values = np.array([v.values for v in window], dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or len(t_rel) != self.config.window or values.shape[1] != self.config.width:
            raise ModelError(
                f"window of shape {values.shape} does not match N={self.config.window}, width={self.config.width}"
            )
        x = np.empty((1, len(t_rel), self.config.input_dim))
        x[0, :, 0] = self.scale(t_rel)
        x[0, :, 1:] = values
        return x

    def proba(self, x: np.ndarray, batch: int = 256) -> np.ndarray:
        out = [forward(self.params, x[s:s + batch], self.config.layers)[0] for s in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros((0, NUM_CLASSES))


# --------------------------------------------------------------------------
# parameters


def init(config: ModelConfig, seed: int = 0) -> Model:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, forget bias 1."""
    rng = np.random.default_rng(seed)
    params = {}
    h = config.hidden
    for name, shape in config.shapes().items():
        if name.endswith(".b"):
            p = np.zeros(shape)
            if name.startswith("lstm"):
                p[h:2 * h] = 1.0
        else:
            limit = 1.0 / math.sqrt(shape[1])
            p = rng.uniform(-limit, limit, size=shape)
        params[name] = p
    return Model(config, params)


# --------------------------------------------------------------------------
# forward / backward


def _gate_constants(hid, dt):
    """Per-row (scale, mul, add): one tanh gives sigmoid for i, f, o and tanh for g.

    sigmoid(z) = 0.5 * (1 + tanh(z / 2)).
    """
    scale = np.full(4 * hid, 0.5, dt)
    scale[2 * hid:3 * hid] = 1.0
    add = np.full(4 * hid, 0.5, dt)
    add[2 * hid:3 * hid] = 0.0
    return scale, scale, add


def _log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(params: dict, x: np.ndarray, layers: int = 1):
    """Class distribution ``(B, 8)`` for inputs ``(B, N, D)``, plus the activation cache.

    The cache is time-major: per layer ``(seq, gates, cells, tanh(cells), hidden)``
    with arrays shaped ``(N, B, .)``.
    """
    x = np.asarray(x)
    dt = params["lstm0.W"].dtype
    if x.dtype != dt:
        x = x.astype(dt)
    if x.ndim != 3:
        raise ModelError(f"expected (batch, N, features) input, got shape {x.shape}")
    if x.shape[2] != params["lstm0.W"].shape[1]:
        raise ModelError(f"input has {x.shape[2]} features, model expects {params['lstm0.W'].shape[1]}")
    bsz, steps, _ = x.shape
    seq = np.ascontiguousarray(x.transpose(1, 0, 2))
    caches = []
    for layer in range(layers):
        W, U, b = params[f"lstm{layer}.W"], params[f"lstm{layer}.U"], params[f"lstm{layer}.b"]
        hid = U.shape[1]
        scale, mul, add = _gate_constants(hid, dt)
        xw = (seq.reshape(-1, seq.shape[2]) @ W.T).reshape(steps, bsz, -1) + b
        UT = np.ascontiguousarray(U.T)
        h = np.zeros((bsz, hid), dt)
        c = np.zeros((bsz, hid), dt)
        gates = np.empty((steps, bsz, 4 * hid), dt)
        cs = np.empty((steps, bsz, hid), dt)
        hs = np.empty((steps, bsz, hid), dt)
        for t in range(steps):
            a = gates[t]
            np.matmul(h, UT, out=a)
            a += xw[t]
            a *= scale
            np.tanh(a, out=a)
            a *= mul
            a += add
            c = a[:, hid:2 * hid] * c
            c += a[:, :hid] * a[:, 2 * hid:3 * hid]
            cs[t] = c
            h = np.multiply(a[:, 3 * hid:], np.tanh(c), out=hs[t])
        caches.append((seq, gates, cs, np.tanh(cs), hs))
        seq = hs
    h_last = seq[-1]
    logits = h_last @ params["dense.W"].T + params["dense.b"]
    logp = _log_softmax(logits)
    return np.exp(logp), {"caches": caches, "logp": logp, "h_last": h_last}


def loss(probs, label: int) -> float:
    """Categorical cross-entropy of one distribution against a one-hot label."""
    return -math.log(max(float(probs[label]), PROB_FLOOR))


def batch_loss(logp: np.ndarray, labels: np.ndarray, weights: Optional[np.ndarray] = None) -> float:
    picked = np.maximum(logp[np.arange(len(labels)), labels], math.log(PROB_FLOOR))
    if weights is None:
        return float(-picked.mean())
    w = weights[labels]
    return float(-(w * picked).sum() / w.sum())


def backward(params: dict, cache: dict, labels, layers: int = 1, weights: Optional[np.ndarray] = None) -> dict:
    """Gradients of the mean batch CCE with respect to every parameter."""
    labels = np.asarray(labels, dtype=np.int64)
    logp = cache["logp"]
    bsz = len(labels)
    probs = np.exp(logp)
    dlogits = probs.astype(params["dense.W"].dtype)
    dlogits[np.arange(bsz), labels] -= 1.0
    clamped = logp[np.arange(bsz), labels] < math.log(PROB_FLOOR)
    dlogits[clamped] = 0.0
    if weights is None:
        dlogits /= bsz
    else:
        w = weights[labels]
        dlogits *= (w / w.sum())[:, None]

    grads = {
        "dense.W": dlogits.T @ cache["h_last"],
        "dense.b": dlogits.sum(axis=0),
    }
    dh_top = dlogits @ params["dense.W"]
    dseq = None
    for layer in reversed(range(layers)):
        seq, gates, cs, tcs, hs = cache["caches"][layer]
        W, U = params[f"lstm{layer}.W"], params[f"lstm{layer}.U"]
        steps, bsz, hid = hs.shape
        dt = hs.dtype
        # gate derivatives with respect to pre-activations, all steps at once
        deriv = gates * (1.0 - gates)
        g = gates[..., 2 * hid:3 * hid]
        deriv[..., 2 * hid:3 * hid] = 1.0 - g * g
        o_dtanh = gates[..., 3 * hid:] * (1.0 - tcs * tcs)
        c_prev = np.concatenate([np.zeros((1, bsz, hid), dt), cs[:-1]])
        # d(c_t) / d(i, f, g) factors, stacked so one multiply covers all three
        cfac = np.stack([g, c_prev, gates[..., :hid]], axis=2)
        dz_all = np.empty((steps, bsz, 4 * hid), dt)
        dh = dh_top if dseq is None else np.zeros((bsz, hid), dt)
        dc = np.zeros((bsz, hid), dt)
        for t in reversed(range(steps)):
            if dseq is not None:
                dh = dh + dseq[t]
            dc = dc + dh * o_dtanh[t]
            dz = dz_all[t]
            np.multiply(dc[:, None, :], cfac[t], out=dz[:, :3 * hid].reshape(bsz, 3, hid))
            np.multiply(dh, tcs[t], out=dz[:, 3 * hid:])
            dz *= deriv[t]
            dc = dc * gates[t, :, hid:2 * hid]
            dh = dz @ U
        flat_dz = dz_all.reshape(-1, 4 * hid)
        h_prev = np.concatenate([np.zeros((1, bsz, hid), dt), hs[:-1]])
        grads[f"lstm{layer}.W"] = flat_dz.T @ seq.reshape(-1, seq.shape[2])
        grads[f"lstm{layer}.U"] = flat_dz.T @ h_prev.reshape(-1, hid)
        grads[f"lstm{layer}.b"] = flat_dz.sum(axis=0)
        dseq = (flat_dz @ W).reshape(steps, bsz, -1) if layer > 0 else None

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
    return grads


def loss_and_grads(model: Model, x: np.ndarray, labels, weights=None):
    probs, cache = forward(model.params, x, model.config.layers)
    labels = np.asarray(labels, dtype=np.int64)
    return batch_loss(cache["logp"], labels, weights), backward(model.params, cache, labels, model.config.layers, weights)


def grad_check(model: Model, sample, eps: float = 1e-5, label: Optional[int] = None) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    The finite-difference probes run in extended precision so that round-off
    in the loss difference does not swamp gradients of order 1e-8.
    """
    if not eps > 0:
        raise ModelError("eps must be positive")
    if isinstance(sample, WindowSample):
        x, label = model.features(sample), sample.label
    else:
        x = np.asarray(sample, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
    labels = np.array([label])
    _, grads = loss_and_grads(model, x, labels)
    wide = {k: v.astype(np.longdouble) for k, v in model.params.items()}
    xw = x.astype(np.longdouble)
    floor = np.log(np.longdouble(PROB_FLOOR))

    def probe():
        logp = forward(wide, xw, model.config.layers)[1]["logp"]
        return -np.maximum(logp[0, label], floor)

    step = np.longdouble(eps)
    worst = 0.0
    for name, p in wide.items():
        flat = p.reshape(-1)
        gflat = grads[name].reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + step
            up = probe()
            flat[j] = keep - step
            down = probe()
            flat[j] = keep
            numeric = float((up - down) / (2 * step))
            analytic = float(gflat[j])
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def predict(model: Model, window):
    """``(argmax class, distribution)``; ties resolve to the lowest index."""
    x = window if isinstance(window, np.ndarray) and window.ndim == 3 else model.features(window)
    probs = forward(model.params, x, model.config.layers)[0][0]
    return int(np.argmax(probs)), probs


# --------------------------------------------------------------------------
# training


class _Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        cfg = self.cfg
        self.t += 1
        c1 = 1.0 - cfg.beta1 ** self.t
        c2 = 1.0 - cfg.beta2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g
            params[k] -= cfg.learning_rate * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + cfg.epsilon)


class _SGD:
    def __init__(self, params, cfg):
        self.cfg = cfg

    def step(self, params, grads):
        for k in sorted(params):
            params[k] -= self.cfg.learning_rate * grads[k]


def clip_grads(grads: dict, max_norm: Optional[float]) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class EpochStats:
    fold: int
    epoch: int
    train_cce: float
    val_cce: Optional[float] = None
    val_ac: Optional[float] = None
    precision: list = field(default_factory=list)
    recall: list = field(default_factory=list)


def class_weights(labels) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=NUM_CLASSES).astype(np.float64)
    w = np.zeros(NUM_CLASSES)
    present = counts > 0
    w[present] = counts[present].sum() / (present.sum() * counts[present])
    return w


def evaluate(model: Model, data: Dataset, idx=None):
    """``(mean CCE, confusion matrix, predictions)`` on ``data[idx]``."""
    idx = np.arange(len(data)) if idx is None else np.asarray(idx)
    probs = model.proba(data.features(model.scale, idx)) if len(idx) else np.zeros((0, NUM_CLASSES))
    truths = data.labels[idx]
    preds = np.argmax(probs, axis=1)
    picked = np.maximum(probs[np.arange(len(idx)), truths], PROB_FLOOR)
    cce = float(-np.log(picked).mean()) if len(idx) else float("nan")
    return cce, metrics.confusion(preds, truths), preds


def fit(
    model: Model,
    data: Dataset,
    train_idx,
    cfg: TrainConfig,
    val_idx=None,
    fold: int = 0,
    seed: Optional[int] = None,
    on_epoch: Optional[Callable] = None,
    stop: Optional[Callable] = None,
) -> list:
    """Train ``model`` in place; returns one EpochStats per epoch.

    ``stop(model, stats)`` may end training early by returning True.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if len(train_idx) == 0:
        raise TrainingError("empty training set")
    if data.width != model.config.width or data.n != model.config.window:
        raise ModelError(
            f"dataset (N={data.n}, width={data.width}) does not match the model "
            f"(N={model.config.window}, width={model.config.width})"
        )
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed if seed is None else seed, fold, 1]))
    dt = np.dtype(cfg.precision)
    # updates run on a working copy in the training precision; the model's
    # float64 parameters are refreshed from it after every epoch
    work = model.params if dt == np.float64 else {k: v.astype(dt) for k, v in model.params.items()}
    opt = _Adam(work, cfg) if cfg.optimizer == "adam" else _SGD(work, cfg)
    weights = class_weights(data.labels[train_idx]) if cfg.class_weighting else None
    layers = model.config.layers
    history = []
    for epoch in range(cfg.epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            batch = order[s:s + cfg.batch_size]
            x = data.features(model.scale, batch)
            labels = data.labels[batch]
            _, cache = forward(work, x, layers)
            value = batch_loss(cache["logp"], labels, weights)
            if not math.isfinite(value):
                raise TrainingError(f"fold {fold}, epoch {epoch}: non-finite training loss")
            grads = backward(work, cache, labels, layers, weights)
            clip_grads(grads, cfg.gradient_clip)
            opt.step(work, grads)
            total += value * len(batch)
        if work is not model.params:
            for k, v in work.items():
                model.params[k][...] = v
        stats = EpochStats(fold, epoch, total / len(order))
        if val_idx is not None and len(val_idx):
            cce, cm, _ = evaluate(model, data, val_idx)
            stats.val_cce = cce
            stats.val_ac = metrics.average_accuracy(cm)
            stats.precision = [metrics.precision(cm, i) for i in range(NUM_CLASSES)]
            stats.recall = [metrics.recall(cm, i) for i in range(NUM_CLASSES)]
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
        if stop is not None and stop(model, stats):
            break
    return history


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def train(
    data: Dataset,
    folds: FoldSplit,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    threads: Optional[int] = None,
    on_epoch: Optional[Callable] = None,
):
    """k-fold cross-validated training: returns (models, curves)."""
    if len(data) == 0:
        raise TrainingError("dataset is empty")
    if len(folds.assignment) != len(data):
        raise TrainingError("fold assignment does not match the dataset")
    if threads is None:
        threads = int(os.environ.get("DESLAB_THREADS", "1") or 1)

    def run(j):
        model = init(model_cfg, fold_seed(train_cfg.seed, j))
        hist = fit(model, data, folds.training(j), train_cfg, folds.validation(j), fold=j, on_epoch=on_epoch)
        return model, hist

    if threads > 1 and folds.k > 1:
        with ThreadPoolExecutor(max_workers=min(threads, folds.k)) as pool:
            results = list(pool.map(run, range(folds.k)))
    else:
        results = [run(j) for j in range(folds.k)]
    models = [m for m, _ in results]
    curves = [s for _, hist in results for s in hist]
    return models, curves


# --------------------------------------------------------------------------
# persistence


def curves_to_csv(curves) -> str:
    cols = ["fold", "epoch", "train_cce", "val_cce", "val_ac"]
    cols += [f"p_{i}" for i in range(NUM_CLASSES)] + [f"r_{i}" for i in range(NUM_CLASSES)]
    lines = [",".join(cols)]
    for s in curves:
        row = [str(s.fold), str(s.epoch), _num(s.train_cce), _num(s.val_cce), _num(s.val_ac)]
        row += [_num(v) for v in (s.precision or [None] * NUM_CLASSES)]
        row += [_num(v) for v in (s.recall or [None] * NUM_CLASSES)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _num(v) -> str:
    return metrics.UNDEFINED if v is None else format(v, ".17g")


def save_checkpoint(model: Model, path) -> None:
    cfg = model.config
    lines = [
        f"format={CHECKPOINT_FORMAT}",
        f"input_dim={cfg.input_dim} hidden={cfg.hidden} layers={cfg.layers} classes={cfg.num_classes} "
        f"window={cfg.window} time_scale={cfg.time_scale}",
    ]
    for name in cfg.shapes():
        p = model.params[name]
        shape = "x".join(str(d) for d in p.shape)
        lines.append(f"{name} {shape} " + " ".join(format(v, ".17g") for v in p.reshape(-1)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"format={CHECKPOINT_FORMAT}":
        raise ModelError(f"{path}: unsupported checkpoint format")
    try:
        kv = dict(item.split("=", 1) for item in lines[1].split())
        cfg = ModelConfig(
            input_dim=int(kv["input_dim"]),
            hidden=int(kv["hidden"]),
            layers=int(kv["layers"]),
            num_classes=int(kv["classes"]),
            window=int(kv["window"]),
            time_scale=kv["time_scale"],
        )
    except (KeyError, ValueError, IndexError):
        raise ModelError(f"{path}: bad config block") from None
    params = {}
    for line in lines[2:]:
        if not line.strip():
            continue
        name, shape, *values = line.split()
        dims = tuple(int(d) for d in shape.split("x"))
        arr = np.array([float(v) for v in values], dtype=np.float64)
        if arr.size != int(np.prod(dims)):
            raise ModelError(f"{path}: {name} has {arr.size} values for shape {dims}")
        params[name] = arr.reshape(dims)
    return Model(cfg, params)


def with_config(cfg: ModelConfig, **changes) -> ModelConfig:
    return replace(cfg, **changes)
