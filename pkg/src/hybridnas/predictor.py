"""Accuracy predictor: a small 1-D convolutional regressor over subnet encodings.

Forward pass for a batch ``X`` of shape ``(B, 44, 24)``::

    h1 = relu(conv3(X))          24 -> C channels, same padding
    h2 = relu(conv3(h1))         C  -> C
    g  = mean over the 44 rows   (B, C)
    z  = relu(g @ W3 + b3)       C  -> H
    y  = z @ W4 + b4             H  -> 1

The network predicts standardized accuracy; the target mean and scale are
stored with the model.  Gradients are written out by hand and checked
against finite differences in :func:`grad_check`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .encoding import encode
from .latency import spearman
from .space import SearchSpace, build_default_space
from .subnet import SubnetArch

PARAM_ORDER = ("conv1.w", "conv1.b", "conv2.w", "conv2.b", "fc1.w", "fc1.b", "fc2.w", "fc2.b")


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class Hyper:
    channels: int = 32
    hidden: int = 32
    kernel: int = 3
    lr: float = 0.02
    momentum: float = 0.9
    epochs: int = 40
    batch_size: int = 32
    lr_decay: str = "cosine"  # or "none"


@dataclass(frozen=True)
class LabeledPair:
    arch: SubnetArch
    accuracy: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")


def init_params(hyper: Hyper, in_features: int, rng: np.random.Generator) -> dict:
    c, h, k = hyper.channels, hyper.hidden, hyper.kernel
    return {
        "conv1.w": rng.normal(0, math.sqrt(2.0 / (k * in_features)), (k, in_features, c)),
        # positive bias keeps all-padding rows away from the ReLU kink
        "conv1.b": np.full(c, 0.01),
        "conv2.w": rng.normal(0, math.sqrt(2.0 / (k * c)), (k, c, c)),
        "conv2.b": np.full(c, 0.01),
        "fc1.w": rng.normal(0, math.sqrt(2.0 / c), (c, h)),
        "fc1.b": np.full(h, 0.01),
        "fc2.w": rng.normal(0, math.sqrt(1.0 / h), (h, 1)),
        "fc2.b": np.zeros(1),
    }


def _patches(x, k):
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    n = x.shape[1]
    return np.concatenate([xp[:, j:j + n, :] for j in range(k)], axis=2)


def _unpatch(dp, k, c):
    b, n, _ = dp.shape
    pad = k // 2
    dxp = np.zeros((b, n + 2 * pad, c))
    for j in range(k):
        dxp[:, j:j + n, :] += dp[:, :, j * c:(j + 1) * c]
    return dxp[:, pad:pad + n, :]


def forward(params: dict, x: np.ndarray, cache: bool = False):
    k = params["conv1.w"].shape[0]
    p1 = _patches(x, k)
    z1 = p1 @ params["conv1.w"].reshape(-1, params["conv1.w"].shape[2]) + params["conv1.b"]
    h1 = np.maximum(z1, 0)
    p2 = _patches(h1, k)
    z2 = p2 @ params["conv2.w"].reshape(-1, params["conv2.w"].shape[2]) + params["conv2.b"]
    h2 = np.maximum(z2, 0)
    g = h2.mean(axis=1)
    z3 = g @ params["fc1.w"] + params["fc1.b"]
    h3 = np.maximum(z3, 0)
    out = (h3 @ params["fc2.w"] + params["fc2.b"])[:, 0]
    if cache:
        return out, (x, p1, z1, h1, p2, z2, g, z3, h3)
    return out


def l1_loss_and_grads(params: dict, x: np.ndarray, y: np.ndarray):
    """Mean absolute error and its (sub)gradient; the sign at zero residual is 0."""
    out, (x, p1, z1, h1, p2, z2, g, z3, h3) = forward(params, x, cache=True)
    r = out - y
    loss = float(np.mean(np.abs(r)))
    b = len(y)
    dout = np.sign(r) / b
    grads = {}
    grads["fc2.w"] = h3.T @ dout[:, None]
    grads["fc2.b"] = np.array([dout.sum()])
    dz3 = (dout[:, None] @ params["fc2.w"].T) * (z3 > 0)
    grads["fc1.w"] = g.T @ dz3
    grads["fc1.b"] = dz3.sum(axis=0)
    dg = dz3 @ params["fc1.w"].T
    n = x.shape[1]
    dz2 = np.broadcast_to(dg[:, None, :] / n, z2.shape) * (z2 > 0)
    k, c_in, c_out = params["conv2.w"].shape
    grads["conv2.w"] = np.einsum("bnp,bnc->pc", p2, dz2).reshape(k, c_in, c_out)
    grads["conv2.b"] = dz2.sum(axis=(0, 1))
    dp2 = dz2 @ params["conv2.w"].reshape(-1, c_out).T
    dz1 = _unpatch(dp2, k, c_in) * (z1 > 0)
    k1, f_in, c1 = params["conv1.w"].shape
    grads["conv1.w"] = np.einsum("bnp,bnc->pc", p1, dz1).reshape(k1, f_in, c1)
    grads["conv1.b"] = dz1.sum(axis=(0, 1))
    return loss, grads


@dataclass
class PredictorModel:
    params: dict
    hyper: Hyper = field(default_factory=Hyper)
    y_mean: float = 0.0
    y_scale: float = 1.0
    space: SearchSpace = field(default_factory=build_default_space)
    seed: Optional[int] = None
    history: list = field(default_factory=list)

    def predict_encoded(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[None]
        return forward(self.params, x) * self.y_scale + self.y_mean

    def predict(self, arch: SubnetArch) -> float:
        return float(self.predict_encoded(encode(arch, self.space))[0])

    def predict_many(self, archs: Sequence[SubnetArch]) -> np.ndarray:
        if not archs:
            return np.zeros(0)
        return self.predict_encoded(np.stack([encode(a, self.space) for a in archs]))

    # -- persistence ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "hyper": asdict(self.hyper),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "seed": self.seed,
            "space": self.space.to_dict(),
            "params": {name: {"shape": list(self.params[name].shape),
                              "data": [float(v) for v in self.params[name].ravel()]}
                       for name in PARAM_ORDER},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorModel":
        params = {name: np.array(p["data"], dtype=float).reshape(p["shape"]) for name, p in d["params"].items()}
        return cls(params, Hyper(**d["hyper"]), float(d["y_mean"]), float(d["y_scale"]),
                   SearchSpace.from_dict(d["space"]), d.get("seed"))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "PredictorModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def predict(model: PredictorModel, arch: SubnetArch) -> float:
    return model.predict(arch)


def _xy(pairs, space):
    x = np.stack([encode(p.arch, space) for p in pairs]).astype(float)
    y = np.array([p.accuracy for p in pairs], dtype=float)
    return x, y


def train(pairs_train: Sequence[LabeledPair], pairs_val: Sequence[LabeledPair],
          hyper: Optional[Hyper] = None, rng_seed: int = 0,
          space: Optional[SearchSpace] = None, min_sizes: bool = True) -> PredictorModel:
    """Minimize mean absolute error with momentum SGD.

    The returned parameters are those of the epoch with the highest
    validation Spearman correlation (lowest validation L1 on ties).  Per-epoch diagnostics are stored in
    ``model.history``.
    """
    hyper = hyper or Hyper()
    space = space or build_default_space()
    if min_sizes and (len(pairs_train) < 100 or len(pairs_val) < 20):
        raise ValueError("need at least 100 training and 20 validation pairs")
    rng = np.random.default_rng(rng_seed)
    xt, yt = _xy(pairs_train, space)
    xv, yv = _xy(pairs_val, space)
    y_mean = float(yt.mean())
    y_scale = float(yt.std()) or 1.0
    yt_n = (yt - y_mean) / y_scale
    params = init_params(hyper, xt.shape[2], rng)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    model = PredictorModel(params, hyper, y_mean, y_scale, space, rng_seed)
    best_key, best = None, {k: v.copy() for k, v in params.items()}
    n = len(yt)
    steps_per_epoch = math.ceil(n / hyper.batch_size)
    total = hyper.epochs * steps_per_epoch
    step = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        running = 0.0
        for s in range(steps_per_epoch):
            idx = order[s * hyper.batch_size:(s + 1) * hyper.batch_size]
            loss, grads = l1_loss_and_grads(params, xt[idx], yt_n[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss={loss} at epoch {epoch} step {s}")
            lr = hyper.lr
            if hyper.lr_decay == "cosine":
                lr *= 0.5 * (1 + math.cos(math.pi * step / total))
            for k in params:
                velocity[k] = hyper.momentum * velocity[k] - lr * grads[k]
                params[k] += velocity[k]
            running += loss * len(idx)
            step += 1
        pv = model.predict_encoded(xv)
        rho = spearman(pv, yv)
        val_l1 = float(np.mean(np.abs(pv - yv)))
        model.history.append({"epoch": epoch, "train_l1": running / n * y_scale,
                              "val_l1": val_l1, "val_spearman": rho})
        # constant validation targets give nan; validation L1 breaks ties
        key = (rho if math.isfinite(rho) else -2.0, -val_l1)
        if best_key is None or key > best_key:
            best_key, best = key, {k: v.copy() for k, v in params.items()}
    model.params = best
    return model


def grad_check(model: PredictorModel, sample_batch, targets: Optional[np.ndarray] = None,
               step: float = 1e-5, kink_eps: float = 1e-6, max_params: Optional[int] = None,
               rng_seed: int = 0) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``sample_batch`` is either a list of :class:`LabeledPair` or an encoded
    array ``(B, 44, 24)`` together with normalized ``targets``.  Samples
    whose residual lies within ``kink_eps`` of zero are dropped, and
    coordinates whose perturbation flips a ReLU or residual sign are
    skipped.  Gradient entries below 1e-6 in magnitude are compared
    absolutely.
    """
    if targets is None:
        x, y = _xy(sample_batch, model.space)
        y = (y - model.y_mean) / model.y_scale
    else:
        x, y = np.asarray(sample_batch, dtype=float), np.asarray(targets, dtype=float)
    params = {k: v.astype(float).copy() for k, v in model.params.items()}
    out = forward(params, x)
    keep = np.abs(out - y) > kink_eps
    x, y = x[keep], y[keep]
    if len(y) == 0:
        return 0.0
    _, grads = l1_loss_and_grads(params, x, y)

    def pattern(p):
        out, (_, _, z1, _, _, z2, _, z3, _) = forward(p, x, cache=True)
        return (z1 > 0, z2 > 0, z3 > 0, out > y)

    def loss(p):
        return float(np.mean(np.abs(forward(p, x) - y)))

    base = pattern(params)
    coords = [(name, i) for name in PARAM_ORDER for i in range(params[name].size)]
    if max_params is not None and len(coords) > max_params:
        pick = np.random.default_rng(rng_seed).choice(len(coords), max_params, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    worst = 0.0
    for name, i in coords:
        flat = params[name].reshape(-1)
        orig = flat[i]
        h = step * max(1.0, abs(orig))
        flat[i] = orig + h
        lp, pp = loss(params), pattern(params)
        flat[i] = orig - h
        lm, pm = loss(params), pattern(params)
        flat[i] = orig
        if any((a != b).any() for a, b in zip(base, pp)) or any((a != b).any() for a, b in zip(base, pm)):
            continue
        num = (lp - lm) / (2 * h)
        ana = float(grads[name].reshape(-1)[i])
        err = abs(num - ana) / max(abs(num), abs(ana), 1e-6)
        worst = max(worst, err)
    return worst
