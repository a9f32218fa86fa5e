"""Cluster classifier and center regressor, written out by hand in numpy.

Three small networks:

* an LSTM over the per-frame cluster features, pooled by additive
  attention over the frames where the cluster is present;
* an MLP head turning the pooled context into uav / background logits;
* a shared-MLP + max-pool point-set network that predicts a center offset
  from the points of the cluster's latest frame.

Forward passes return caches that the matching backward passes consume.
The LSTM recurrence runs in :mod:`aerotrack.kernels`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import kernels
from .core import Rng
from .dynpoints import N_FEATURES, LabeledWindowSample, augment

CHECKPOINT_VERSION = 1
BACKGROUND, UAV = 0, 1


class _Params:
    """Mixin for dataclasses whose fields are all float arrays."""

    def tensors(self) -> Dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def zeros_like(self):
        return type(self)(**{k: np.zeros_like(v) for k, v in self.tensors().items()})

    def copy(self):
        return type(self)(**{k: v.copy() for k, v in self.tensors().items()})


@dataclass
class LstmParams(_Params):
    Wx: np.ndarray   # (4H, D) gates stacked as input, forget, cell, output
    Uh: np.ndarray   # (4H, H)
    b: np.ndarray    # (4H,)
    a: np.ndarray    # (H,) attention vector
    ab: np.ndarray   # (1,) attention bias

    @property
    def hidden(self) -> int:
        return self.Uh.shape[1]


@dataclass
class MlpParams(_Params):
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


@dataclass
class PointSetRegressorParams(_Params):
    E1: np.ndarray   # (32, 3)
    e1: np.ndarray
    E2: np.ndarray   # (64, 32)
    e2: np.ndarray
    F1: np.ndarray   # (32, 64)
    f1: np.ndarray
    F2: np.ndarray   # (3, 32)
    f2: np.ndarray


def _uniform(rng: Rng, shape, fan_in: int) -> np.ndarray:
    s = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-s, s, shape)


def init_lstm(rng: Rng, hidden: int = 32, n_in: int = N_FEATURES) -> LstmParams:
    H = hidden
    b = np.zeros(4 * H)
    b[H:2 * H] = 1.0
    return LstmParams(
        Wx=_uniform(rng, (4 * H, n_in), n_in + H),
        Uh=_uniform(rng, (4 * H, H), n_in + H),
        b=b,
        a=_uniform(rng, (H,), H),
        ab=np.zeros(1),
    )


def init_mlp(rng: Rng, sizes=(32, 32, 2)) -> MlpParams:
    h0, h1, h2 = sizes
    return MlpParams(_uniform(rng, (h1, h0), h0), np.zeros(h1),
                     _uniform(rng, (h2, h1), h1), np.zeros(h2))


def init_regressor(rng: Rng, enc=(3, 32, 64), head=(64, 32, 3)) -> PointSetRegressorParams:
    return PointSetRegressorParams(
        _uniform(rng, (enc[1], enc[0]), enc[0]), np.zeros(enc[1]),
        _uniform(rng, (enc[2], enc[1]), enc[1]), np.zeros(enc[2]),
        _uniform(rng, (head[1], head[0]), head[0]), np.zeros(head[1]),
        _uniform(rng, (head[2], head[1]), head[1]), np.zeros(head[2]),
    )


# -- attention LSTM ------------------------------------------------------------

@dataclass
class LstmCache:
    X: np.ndarray
    M: np.ndarray
    Hs: np.ndarray
    Cs: np.ndarray
    G: np.ndarray
    attn: np.ndarray


def lstm_attn_forward_batch(p: LstmParams, X, M):
    X = np.asarray(X, dtype=np.float64)
    M = np.asarray(M, dtype=bool)
    Hs, Cs, G, attn, ctx = kernels.lstm_forward(p.Wx, p.Uh, p.b, p.a, float(p.ab[0]), X, M)
    return ctx, attn, LstmCache(X, M, Hs, Cs, G, attn)


def lstm_attn_backward_batch(p: LstmParams, cache: LstmCache, dctx) -> LstmParams:
    dWx, dUh, db, da, dab = kernels.lstm_backward(
        p.Wx, p.Uh, p.a, cache.X, cache.M, cache.Hs, cache.Cs, cache.G, cache.attn,
        np.asarray(dctx, dtype=np.float64))
    return LstmParams(dWx, dUh, db, da, np.array([dab]))


def lstm_attn_forward(p: LstmParams, seq, mask):
    """Single sequence: returns ``(context, attn, cache)``."""
    seq = np.asarray(seq, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty sequence")
    ctx, attn, cache = lstm_attn_forward_batch(p, seq[None], mask[None])
    return ctx[0], attn[0], cache


# -- classifier head -----------------------------------------------------------

def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def mlp_forward(m: MlpParams, x):
    x = np.asarray(x, dtype=np.float64)
    pre = x @ m.W1.T + m.b1
    hid = np.maximum(pre, 0.0)
    logits = hid @ m.W2.T + m.b2
    return logits, (x, pre, hid)


def mlp_backward(m: MlpParams, cache, dlogits):
    x, pre, hid = cache
    dW2 = dlogits.T @ hid
    db2 = dlogits.sum(axis=0)
    dhid = dlogits @ m.W2
    dpre = dhid * (pre > 0)
    dW1 = dpre.T @ x
    db1 = dpre.sum(axis=0)
    dx = dpre @ m.W1
    return MlpParams(dW1, db1, dW2, db2), dx


def classify_forward(m: MlpParams, context):
    """Logits and softmax probabilities (background, uav)."""
    ctx = np.asarray(context, dtype=np.float64)
    single = ctx.ndim == 1
    logits, _ = mlp_forward(m, ctx[None] if single else ctx)
    probs = softmax(logits)
    return (logits[0], probs[0]) if single else (logits, probs)


def weighted_ce(logits, labels, weights):
    """Mean over the batch of ``w_i * -log p_i[y_i]`` and its logit gradient."""
    probs = softmax(logits)
    B = len(labels)
    idx = np.arange(B)
    loss = float(np.sum(weights * -np.log(np.maximum(probs[idx, labels], 1e-300))) / B)
    d = probs.copy()
    d[idx, labels] -= 1.0
    d *= (weights / B)[:, None]
    return loss, d


# -- point-set center regressor ------------------------------------------------

def exact_centroid(points: np.ndarray) -> np.ndarray:
    """Order-independent mean (correctly rounded sums)."""
    n = len(points)
    return np.array([math.fsum(points[:, k]) / n for k in range(3)])


def regressor_forward(r: PointSetRegressorParams, points):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("regress_center needs at least one point")
    c = exact_centroid(pts)
    x = pts - c
    p1 = x @ r.E1.T + r.e1
    a1 = np.maximum(p1, 0.0)
    p2 = a1 @ r.E2.T + r.e2
    a2 = np.maximum(p2, 0.0)
    arg = np.argmax(a2, axis=0)
    g = a2[arg, np.arange(a2.shape[1])]
    q1 = r.F1 @ g + r.f1
    b1 = np.maximum(q1, 0.0)
    off = r.F2 @ b1 + r.f2
    return c + off, (x, p1, a1, p2, a2, arg, g, q1, b1, off)


def regressor_backward(r: PointSetRegressorParams, cache, dout) -> PointSetRegressorParams:
    x, p1, a1, p2, a2, arg, g, q1, b1, _ = cache
    dout = np.asarray(dout, dtype=np.float64)
    dF2 = np.outer(dout, b1)
    df2 = dout.copy()
    dq1 = (r.F2.T @ dout) * (q1 > 0)
    dF1 = np.outer(dq1, g)
    df1 = dq1
    dg = r.F1.T @ dq1
    da2 = np.zeros_like(a2)
    da2[arg, np.arange(a2.shape[1])] = dg
    dp2 = da2 * (p2 > 0)
    dE2 = dp2.T @ a1
    de2 = dp2.sum(axis=0)
    dp1 = (dp2 @ r.E2) * (p1 > 0)
    dE1 = dp1.T @ x
    de1 = dp1.sum(axis=0)
    return PointSetRegressorParams(dE1, de1, dE2, de2, dF1, df1, dF2, df2)


def regress_center(r: PointSetRegressorParams, points) -> np.ndarray:
    """Centroid of ``points`` plus the learned offset."""
    return regressor_forward(r, points)[0]


def center_offset(r: PointSetRegressorParams, points) -> np.ndarray:
    """The learned offset alone; depends only on the centered points."""
    return regressor_forward(r, points)[1][-1]


# -- the detector bundle -------------------------------------------------------

@dataclass
class SeqModel:
    lstm: LstmParams
    mlp: MlpParams
    reg: PointSetRegressorParams
    feat_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    feat_scale: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))

    def normalize(self, X, M):
        X = np.asarray(X, dtype=np.float64)
        M = np.asarray(M, dtype=bool)
        Z = (X - self.feat_mean) / self.feat_scale
        return np.where(M[..., None], Z, 0.0)

    def predict_proba(self, X, M) -> np.ndarray:
        """uav probability per sample."""
        X = np.asarray(X, dtype=np.float64)
        if len(X) == 0:
            return np.zeros(0)
        ctx, _, _ = lstm_attn_forward_batch(self.lstm, self.normalize(X, M), M)
        _, probs = classify_forward(self.mlp, ctx)
        return probs[:, UAV]


def init_model(seed: int, hidden: int = 32) -> SeqModel:
    rng = Rng(seed)
    return SeqModel(init_lstm(rng.spawn("lstm"), hidden), init_mlp(rng.spawn("mlp"), (hidden, 32, 2)),
                    init_regressor(rng.spawn("regressor")))


def _group_tensors(model: SeqModel):
    return {"lstm": model.lstm, "mlp": model.mlp, "reg": model.reg}


def save_model(model: SeqModel, path) -> None:
    tensors = {}
    for group, params in _group_tensors(model).items():
        for name, arr in params.tensors().items():
            tensors[f"{group}.{name}"] = {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
    for name in ("feat_mean", "feat_scale"):
        arr = getattr(model, name)
        tensors[name] = {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
    doc = {"version": CHECKPOINT_VERSION, "hidden": model.lstm.hidden, "tensors": tensors}
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


class CheckpointError(ValueError):
    pass


def load_model(path, hidden: Optional[int] = None) -> SeqModel:
    """Load a checkpoint; every tensor shape is checked against ``hidden``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    H = int(doc["hidden"]) if hidden is None else hidden
    if hidden is not None and int(doc["hidden"]) != hidden:
        raise CheckpointError(f"{path}: hidden size {doc['hidden']} != configured {hidden}")
    template = init_model(0, H)
    tens = doc["tensors"]

    def take(key, like):
        if key not in tens:
            raise CheckpointError(f"{path}: missing tensor {key}")
        shape = tuple(tens[key]["shape"])
        if shape != like.shape:
            raise CheckpointError(f"{path}: tensor {key} has shape {shape}, expected {like.shape}")
        return np.array(tens[key]["data"], dtype=np.float64).reshape(shape)

    groups = {}
    for group, params in _group_tensors(template).items():
        groups[group] = type(params)(**{n: take(f"{group}.{n}", a) for n, a in params.tensors().items()})
    return SeqModel(groups["lstm"], groups["mlp"], groups["reg"],
                    take("feat_mean", template.feat_mean), take("feat_scale", template.feat_scale))


# -- losses over a batch ---------------------------------------------------------

def classifier_loss_and_grads(lstm: LstmParams, mlp: MlpParams, X, M, labels, weights):
    ctx, _, cache = lstm_attn_forward_batch(lstm, X, M)
    logits, mcache = mlp_forward(mlp, ctx)
    loss, dlogits = weighted_ce(logits, np.asarray(labels), np.asarray(weights, dtype=np.float64))
    gmlp, dctx = mlp_backward(mlp, mcache, dlogits)
    glstm = lstm_attn_backward_batch(lstm, cache, dctx)
    return loss, glstm, gmlp


def regressor_loss_and_grads(reg: PointSetRegressorParams, point_sets, targets):
    """Mean over samples of the squared center error."""
    grads = reg.zeros_like()
    loss = 0.0
    n = len(point_sets)
    for pts, tgt in zip(point_sets, targets):
        out, cache = regressor_forward(reg, pts)
        d = out - tgt
        loss += float(d @ d) / n
        g = regressor_backward(reg, cache, 2.0 * d / n)
        for k, v in g.tensors().items():
            grads.tensors()[k] += v
    return loss, grads


# -- finite-difference checking --------------------------------------------------

def _numeric_grad(f, arr: np.ndarray, eps: float) -> np.ndarray:
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||analytic - numeric|| / max(||numeric||, 1e-8)`` over a whole tensor."""
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8))


def gradcheck(seed: int = 0, hidden: int = 4, W: int = 5, batch: int = 3, n_points: int = 7,
              eps: float = 1e-5) -> Dict[str, float]:
    """Relative error of every parameter tensor against central differences.

    Keys are ``lstm.*``, ``mlp.*`` and ``reg.*``.
    """
    rng = Rng(seed)
    lstm = init_lstm(rng.spawn("lstm"), hidden)
    # non-trivial biases so every gate path carries gradient
    lstm.b += rng.uniform(-0.5, 0.5, lstm.b.shape)
    lstm.ab += 0.1
    mlp = init_mlp(rng.spawn("mlp"), (hidden, 6, 2))
    mlp.b1 += rng.uniform(0.05, 0.3, mlp.b1.shape)
    reg = init_regressor(rng.spawn("reg"), (3, 8, 10), (10, 6, 3))
    reg.e1 += 0.1
    reg.e2 += 0.1
    reg.f1 += 0.1
    X = rng.normal(0.0, 1.0, (batch, W, N_FEATURES))
    M = rng.random((batch, W)) < 0.7
    M[:, 0] = True
    M[0, :] = True
    X[~M] = 0.0
    labels = np.arange(batch) % 2
    weights = np.where(labels == UAV, 2.0, 1.0)
    point_sets = [rng.normal(0.0, 1.0, (n_points, 3)) for _ in range(2)]
    targets = [rng.normal(0.0, 0.3, 3) for _ in range(2)]

    _, glstm, gmlp = classifier_loss_and_grads(lstm, mlp, X, M, labels, weights)
    _, greg = regressor_loss_and_grads(reg, point_sets, targets)

    def cls_loss():
        return classifier_loss_and_grads(lstm, mlp, X, M, labels, weights)[0]

    def reg_loss():
        return regressor_loss_and_grads(reg, point_sets, targets)[0]

    out = {}
    for group, params, grads, f in (("lstm", lstm, glstm, cls_loss), ("mlp", mlp, gmlp, cls_loss),
                                    ("reg", reg, greg, reg_loss)):
        gt = grads.tensors()
        for name, arr in params.tensors().items():
            out[f"{group}.{name}"] = rel_error(gt[name], _numeric_grad(f, arr, eps))
    return out


# -- training ------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    uav_weight: Optional[float] = None   # None: balance classes by frequency
    hidden: int = 32
    holdout: float = 0.2
    threshold: float = 0.3
    reg_lr: float = 0.002
    clip: float = 5.0
    p_drop: float = 0.1
    p_reverse: float = 0.5
    p_rotate: float = 1.0
    gradient_check: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.hidden < 1:
            raise ValueError("invalid training configuration")


@dataclass
class TrainMetrics:
    train_loss: List[float]
    heldout_accuracy: float
    heldout_recall: float
    n_train: int
    n_heldout: int
    center_mse_before: float
    center_mse_after: float
    max_gradcheck_error: Optional[float] = None

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _stack(samples: Sequence[LabeledWindowSample]):
    X = np.stack([s.feature.seq for s in samples])
    M = np.stack([s.feature.mask for s in samples])
    y = np.array([UAV if s.is_uav else BACKGROUND for s in samples])
    return X, M, y


def _sgd(params, grads, vel, lr, mom):
    for k, p in params.tensors().items():
        v = vel.tensors()[k]
        v *= mom
        v -= lr * grads.tensors()[k]
        p += v


def _clip(*grads, limit):
    total = math.sqrt(sum(float(np.sum(g * g)) for gs in grads for g in gs.tensors().values()))
    if total > limit:
        s = limit / total
        for gs in grads:
            for g in gs.tensors().values():
                g *= s


def split_holdout(n: int, frac: float, rng: Rng):
    perm = rng.permutation(n)
    n_hold = int(round(n * frac))
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def evaluate(model: SeqModel, samples, threshold: float):
    """Accuracy and uav recall at ``threshold``, and center MSE before/after regression."""
    if not samples:
        return float("nan"), float("nan"), float("nan"), float("nan")
    X, M, y = _stack(samples)
    pred = (model.predict_proba(X, M) >= threshold).astype(int)
    acc = float(np.mean(pred == y))
    pos = y == UAV
    recall = float(np.mean(pred[pos] == UAV)) if pos.any() else float("nan")
    uavs = [s for s in samples if s.is_uav]
    if uavs:
        before = float(np.mean([np.sum((exact_centroid(s.feature.anchor_points) - s.target_center) ** 2)
                                for s in uavs]))
        after = float(np.mean([np.sum((regress_center(model.reg, s.feature.anchor_points)
                                       - s.target_center) ** 2) for s in uavs]))
    else:
        before = after = float("nan")
    return acc, recall, before, after


def train(samples: Sequence[LabeledWindowSample], cfg: TrainConfig = TrainConfig()):
    """Fit classifier and regressor with momentum SGD.

    Returns ``(model, metrics)``. Identical inputs and seed give identical
    parameters.
    """
    labels = {s.label for s in samples}
    if labels != {"uav", "background"}:
        raise ValueError("training data must contain both uav and background samples")
    rng = Rng(cfg.seed)
    model = init_model(cfg.seed, cfg.hidden)
    tr_idx, ho_idx = split_holdout(len(samples), cfg.holdout, rng.spawn("split"))
    train_set = [samples[i] for i in tr_idx]
    held = [samples[i] for i in ho_idx]
    if not any(s.is_uav for s in train_set) or all(s.is_uav for s in train_set):
        raise ValueError("training split is single-class")

    X, M, _ = _stack(train_set)
    present = X[M]
    model.feat_mean = present.mean(axis=0)
    model.feat_mean[:3] = 0.0  # keep velocity sign symmetric under rotation and reversal
    scale = present.std(axis=0)
    model.feat_scale = np.where(scale > 1e-9, scale, 1.0)

    n_uav = sum(s.is_uav for s in train_set)
    w_uav = cfg.uav_weight if cfg.uav_weight is not None else (len(train_set) - n_uav) / n_uav
    vel = {"lstm": model.lstm.zeros_like(), "mlp": model.mlp.zeros_like(), "reg": model.reg.zeros_like()}
    aug_rng = rng.spawn("augment")
    order_rng = rng.spawn("shuffle")
    history = []
    for _ in range(cfg.epochs):
        perm = order_rng.permutation(len(train_set))
        total, count = 0.0, 0
        for start in range(0, len(perm), cfg.batch_size):
            batch = [augment(train_set[i], aug_rng, cfg.p_drop, cfg.p_reverse, cfg.p_rotate)
                     for i in perm[start:start + cfg.batch_size]]
            Xb, Mb, yb = _stack(batch)
            wb = np.where(yb == UAV, w_uav, 1.0)
            loss, glstm, gmlp = classifier_loss_and_grads(model.lstm, model.mlp,
                                                          model.normalize(Xb, Mb), Mb, yb, wb)
            _clip(glstm, gmlp, limit=cfg.clip)
            _sgd(model.lstm, glstm, vel["lstm"], cfg.lr, cfg.momentum)
            _sgd(model.mlp, gmlp, vel["mlp"], cfg.lr, cfg.momentum)
            uavs = [s for s in batch if s.is_uav]
            if uavs:
                _, greg = regressor_loss_and_grads(model.reg, [s.feature.anchor_points for s in uavs],
                                                   [s.target_center for s in uavs])
                _clip(greg, limit=cfg.clip)
                _sgd(model.reg, greg, vel["reg"], cfg.reg_lr, cfg.momentum)
            total += loss * len(batch)
            count += len(batch)
        history.append(total / max(count, 1))
    acc, recall, before, after = evaluate(model, held, cfg.threshold)
    metrics = TrainMetrics(history, acc, recall, len(train_set), len(held), before, after)
    if cfg.gradient_check:
        metrics.max_gradcheck_error = max(gradcheck(cfg.seed).values())
    return model, metrics
