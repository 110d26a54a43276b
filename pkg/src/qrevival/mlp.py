"""Feedforward regressor w->32->16->1 with hand-derived backpropagation.

Two ReLU hidden layers and a tanh output keep predictions inside (-1, 1),
matching the range of the spin observable being regressed. Loss is the plain
squared residual (y_hat - y)^2 (no 1/2 convention); gradients below are the
exact chain-rule derivatives of that loss, verified against central finite
differences. Optimization is Adam with bias-corrected moments.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .dataset import WindowDataset, WindowSample, chronological_split, stack

H1 = 32
H2 = 16

_FIELDS = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass
class MLPParams:
    w1: np.ndarray          # (H1, n_in)
    b1: np.ndarray          # (H1,)
    w2: np.ndarray          # (H2, H1)
    b2: np.ndarray          # (H2,)
    w3: np.ndarray          # (H2,)
    b3: float

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=float)
        self.b1 = np.asarray(self.b1, dtype=float)
        self.w2 = np.asarray(self.w2, dtype=float)
        self.b2 = np.asarray(self.b2, dtype=float)
        self.w3 = np.asarray(self.w3, dtype=float)
        self.b3 = float(self.b3)
        h1, n_in = self.w1.shape
        h2 = self.w2.shape[0]
        if (self.b1.shape != (h1,) or self.w2.shape != (h2, h1)
                or self.b2.shape != (h2,) or self.w3.shape != (h2,)):
            raise ValueError("inconsistent layer shapes")

    @property
    def n_in(self) -> int:
        return self.w1.shape[1]

    def finite(self) -> bool:
        return all(np.all(np.isfinite(np.asarray(getattr(self, f)))) for f in _FIELDS)


@dataclass
class Cache:
    x: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray
    z3: float
    y_hat: float


@dataclass
class AdamState:
    m: MLPParams
    v: MLPParams
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    shuffle_within_train: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")


def init_params(rng: np.random.Generator, n_in: int = 5) -> MLPParams:
    """Uniform in +-sqrt(1/fan_in) per layer."""
    def layer(rows, cols):
        s = math.sqrt(1.0 / cols)
        return rng.uniform(-s, s, size=(rows, cols)), rng.uniform(-s, s, size=rows)
    w1, b1 = layer(H1, n_in)
    w2, b2 = layer(H2, H1)
    w3row, b3 = layer(1, H2)
    return MLPParams(w1=w1, b1=b1, w2=w2, b2=b2, w3=w3row[0], b3=float(b3[0]))


def zeros_like_params(p: MLPParams) -> MLPParams:
    return MLPParams(w1=np.zeros_like(p.w1), b1=np.zeros_like(p.b1),
                     w2=np.zeros_like(p.w2), b2=np.zeros_like(p.b2),
                     w3=np.zeros_like(p.w3), b3=0.0)


def _map_params(fn, *ps: MLPParams) -> MLPParams:
    vals = {}
    for f in _FIELDS:
        out = fn(*[np.asarray(getattr(p, f), dtype=float) for p in ps])
        vals[f] = float(out) if f == "b3" else out
    return MLPParams(**vals)


def forward(p: MLPParams, x) -> Tuple[float, Cache]:
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n_in,):
        raise ValueError(f"expected input of shape ({p.n_in},), got {x.shape}")
    z1 = p.w1 @ x + p.b1
    h1 = np.maximum(z1, 0.0)
    z2 = p.w2 @ h1 + p.b2
    h2 = np.maximum(z2, 0.0)
    z3 = float(p.w3 @ h2 + p.b3)
    y_hat = math.tanh(z3)
    return y_hat, Cache(x=x, z1=z1, h1=h1, z2=z2, h2=h2, z3=z3, y_hat=y_hat)


def mse(preds, labels) -> float:
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise ValueError("mse of empty arrays")
    return float(np.mean((preds - labels) ** 2))


def backward(p: MLPParams, cache: Cache, x, y: float) -> MLPParams:
    """Exact gradient of (y_hat - y)^2; ReLU subgradient at 0 taken as 0.

    d loss/d z3 = 2 (y_hat - y) (1 - y_hat^2); the rest is the chain rule
    through h2 = relu(z2) and h1 = relu(z1).
    """
    x = np.asarray(x, dtype=float)
    r = 2.0 * (cache.y_hat - y) * (1.0 - cache.y_hat ** 2)
    g_w3 = r * cache.h2
    g_b3 = r
    d_z2 = np.where(cache.z2 > 0.0, r * p.w3, 0.0)
    g_w2 = np.outer(d_z2, cache.h1)
    g_b2 = d_z2
    d_z1 = np.where(cache.z1 > 0.0, p.w2.T @ d_z2, 0.0)
    g_w1 = np.outer(d_z1, x)
    g_b1 = d_z1
    return MLPParams(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2, w3=g_w3, b3=g_b3)


def init_adam(p: MLPParams, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(m=zeros_like_params(p), v=zeros_like_params(p),
                     step_count=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(p: MLPParams, grad: MLPParams, st: AdamState) -> Tuple[MLPParams, AdamState]:
    t = st.step_count + 1
    m = _map_params(lambda mo, g: st.beta1 * mo + (1.0 - st.beta1) * g, st.m, grad)
    v = _map_params(lambda vo, g: st.beta2 * vo + (1.0 - st.beta2) * g * g, st.v, grad)
    c1 = 1.0 - st.beta1 ** t
    c2 = 1.0 - st.beta2 ** t
    p_new = _map_params(
        lambda w, mo, vo: w - st.lr * (mo / c1) / (np.sqrt(vo / c2) + st.eps),
        p, m, v)
    if not p_new.finite():
        raise ValueError("optimizer produced non-finite parameters")
    return p_new, AdamState(m=m, v=v, step_count=t, lr=st.lr, beta1=st.beta1,
                            beta2=st.beta2, eps=st.eps)


def train(ds: WindowDataset, cfg: TrainConfig) -> Tuple[MLPParams, np.ndarray]:
    """Adam/minibatch training on the chronological train half only.

    Returns the final parameters and the per-epoch mean train MSE, evaluated
    after each epoch's updates. Fully seeded: initialization and the
    within-train shuffle both draw from cfg.seed.
    """
    train_view, _ = chronological_split(ds)
    if not train_view:
        raise ValueError("empty train split")
    xs, ys = stack(train_view)
    n = len(train_view)
    rng = np.random.default_rng(cfg.seed)
    p = init_params(rng, n_in=ds.window_len)
    st = init_adam(p, lr=cfg.lr)
    curve = np.empty(cfg.epochs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle_within_train else np.arange(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            acc = zeros_like_params(p)
            for i in idx:
                _, cache = forward(p, xs[i])
                g = backward(p, cache, xs[i], ys[i])
                acc = _map_params(lambda a, b: a + b, acc, g)
            grad = _map_params(lambda a: a / len(idx), acc)
            p, st = adam_step(p, grad, st)
        preds = np.array([forward(p, xs[i])[0] for i in range(n)])
        curve[epoch] = mse(preds, ys)
    return p, curve


def predict_series(p: MLPParams, samples: Sequence[WindowSample]) -> np.ndarray:
    """One forward pass per sample, order preserved; pure function."""
    return np.array([forward(p, s.x)[0] for s in samples])


# ---------- finite-difference verifier ----------

def _shapes(p: MLPParams):
    return [(f, np.asarray(getattr(p, f)).shape) for f in _FIELDS]


def _to_vector(p: MLPParams) -> np.ndarray:
    return np.concatenate([np.asarray(getattr(p, f), dtype=float).ravel()
                           for f in _FIELDS])


def _from_vector(vec: np.ndarray, like: MLPParams) -> MLPParams:
    vals = {}
    pos = 0
    for f, shape in _shapes(like):
        size = int(np.prod(shape, dtype=int)) if shape else 1
        chunk = vec[pos:pos + size]
        vals[f] = float(chunk[0]) if f == "b3" else chunk.reshape(shape)
        pos += size
    return MLPParams(**vals)


def _loss_from_vector(vec: np.ndarray, like: MLPParams, x: np.ndarray, y: float) -> float:
    # reshape views into the flat vector; cheap enough for dense sweeps
    n_in = like.n_in
    h1 = like.w1.shape[0]
    h2 = like.w2.shape[0]
    o = 0
    w1 = vec[o:o + h1 * n_in].reshape(h1, n_in); o += h1 * n_in
    b1 = vec[o:o + h1]; o += h1
    w2 = vec[o:o + h2 * h1].reshape(h2, h1); o += h2 * h1
    b2 = vec[o:o + h2]; o += h2
    w3 = vec[o:o + h2]; o += h2
    b3 = vec[o]
    a1 = np.maximum(w1 @ x + b1, 0.0)
    a2 = np.maximum(w2 @ a1 + b2, 0.0)
    y_hat = math.tanh(float(w3 @ a2 + b3))
    return (y_hat - y) ** 2


def fd_gradients(p: MLPParams, x, y: float, h: float = 1e-5) -> MLPParams:
    """Central-difference gradient of the squared loss over every parameter."""
    x = np.asarray(x, dtype=float)
    vec = _to_vector(p)
    out = np.empty_like(vec)
    for j in range(vec.size):
        keep = vec[j]
        vec[j] = keep + h
        up = _loss_from_vector(vec, p, x, y)
        vec[j] = keep - h
        dn = _loss_from_vector(vec, p, x, y)
        vec[j] = keep
        out[j] = (up - dn) / (2.0 * h)
    return _from_vector(out, p)


def gradient_max_rel_error(p: MLPParams, x, y: float, h: float = 1e-5) -> float:
    """max_j |analytic_j - fd_j| / max(|analytic_j|, |fd_j|, 1e-8)."""
    _, cache = forward(p, x)
    analytic = _to_vector(backward(p, cache, x, y))
    numeric = _to_vector(fd_gradients(p, x, y, h))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------- parameter and loss-curve files ----------

def save_params(p: MLPParams, path) -> None:
    obj = {
        "w1": p.w1.tolist(), "b1": p.b1.tolist(),
        "w2": p.w2.tolist(), "b2": p.b2.tolist(),
        "w3": p.w3.tolist(), "b3": p.b3,
    }
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def load_params(path) -> MLPParams:
    with open(path) as f:
        obj = json.load(f)
    missing = [k for k in _FIELDS if k not in obj]
    if missing:
        raise ValueError(f"parameter file {path} missing keys {missing}")
    return MLPParams(w1=np.array(obj["w1"]), b1=np.array(obj["b1"]),
                     w2=np.array(obj["w2"]), b2=np.array(obj["b2"]),
                     w3=np.array(obj["w3"]), b3=float(obj["b3"]))


def write_loss_curve(curve, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "mse"])
        for i, val in enumerate(np.asarray(curve, dtype=float), start=1):
            w.writerow([str(i), f"{val:.12g}"])


def read_loss_curve(path) -> np.ndarray:
    vals = []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != ["epoch", "mse"]:
            raise ValueError(f"bad loss-curve header {header!r} in {path}")
        for k, row in enumerate(r, start=1):
            if len(row) != 2 or int(row[0]) != k:
                raise ValueError(f"bad loss-curve row {row!r} in {path}")
            vals.append(float(row[1]))
    return np.array(vals)
