"""Per-joint LSTM torque predictor written directly in numpy.

One single-layer LSTM with a linear head per joint, trained with a mean
squared error on free-space data. The six networks share nothing but the
input windows; internally they are stacked along a leading "group" axis so a
single batched pass trains all of them. Every slice of that axis only ever
reads its own parameters, gradients and optimizer state.

Gate order inside the packed matrices is (i, f, o, g), which keeps the three
sigmoid gates contiguous.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datagen import ConfigError, Dataset

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
GATES = ("i", "f", "o", "g")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LstmParams:
    """Parameters of one LSTM cell plus its scalar linear head."""

    W_i: np.ndarray
    W_f: np.ndarray
    W_g: np.ndarray
    W_o: np.ndarray
    U_i: np.ndarray
    U_f: np.ndarray
    U_g: np.ndarray
    U_o: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray
    W_out: np.ndarray
    b_out: float

    @property
    def hidden_dim(self) -> int:
        return self.U_i.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_i.shape[1]

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmParams":
        H, D = hidden_dim, input_dim
        return cls(
            *(np.zeros((H, D)) for _ in range(4)),
            *(np.zeros((H, H)) for _ in range(4)),
            *(np.zeros(H) for _ in range(4)),
            np.zeros((1, H)),
            0.0,
        )

    @classmethod
    def random(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator, scale: float | None = None):
        k = 1.0 / np.sqrt(hidden_dim) if scale is None else scale
        p = cls.zeros(input_dim, hidden_dim)
        for name in field_names():
            val = getattr(p, name)
            if name == "b_out":
                setattr(p, name, float(rng.uniform(-k, k)))
            else:
                setattr(p, name, rng.uniform(-k, k, np.shape(val)))
        return p

    def check(self):
        H, D = self.hidden_dim, self.input_dim
        shapes = {"W": (H, D), "U": (H, H), "b": (H,)}
        for g in "ifgo":
            for kind, shape in shapes.items():
                arr = getattr(self, f"{kind}_{g}")
                if arr.shape != shape:
                    raise ValueError(f"{kind}_{g} has shape {arr.shape}, expected {shape}")
        if np.shape(self.W_out) != (1, H):
            raise ValueError(f"W_out has shape {np.shape(self.W_out)}, expected (1, {H})")
        for name in field_names():
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} is not finite")

    def copy(self) -> "LstmParams":
        return LstmParams(**{n: np.copy(getattr(self, n)) if n != "b_out" else float(self.b_out) for n in field_names()})

    def scaled(self, c: float) -> "LstmParams":
        return LstmParams(**{n: getattr(self, n) * c for n in field_names()})

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(getattr(self, n)) for n in field_names()])

    def to_dict(self) -> dict:
        return {n: (float(self.b_out) if n == "b_out" else getattr(self, n).tolist()) for n in field_names()}

    @classmethod
    def from_dict(cls, d: dict) -> "LstmParams":
        p = cls(**{n: (float(d[n]) if n == "b_out" else np.asarray(d[n], dtype=float)) for n in field_names()})
        p.check()
        return p


def field_names() -> tuple[str, ...]:
    return tuple(LstmParams.__dataclass_fields__)


@dataclass
class _Stack:
    """Parameters of G networks packed for batched evaluation."""

    Wx: np.ndarray  # (G, 4H, D)
    U: np.ndarray  # (G, 4H, H)
    b: np.ndarray  # (G, 4H)
    w_out: np.ndarray  # (G, H)
    b_out: np.ndarray  # (G,)

    @property
    def arrays(self):
        return (self.Wx, self.U, self.b, self.w_out, self.b_out)

    @classmethod
    def pack(cls, params: list[LstmParams]) -> "_Stack":
        return cls(
            np.stack([np.concatenate([getattr(p, f"W_{g}") for g in GATES]) for p in params]),
            np.stack([np.concatenate([getattr(p, f"U_{g}") for g in GATES]) for p in params]),
            np.stack([np.concatenate([getattr(p, f"b_{g}") for g in GATES]) for p in params]),
            np.stack([np.ravel(p.W_out) for p in params]),
            np.array([float(p.b_out) for p in params]),
        )

    def unpack(self, k: int) -> LstmParams:
        H = self.U.shape[2]
        out = {}
        for j, g in enumerate(GATES):
            out[f"W_{g}"] = self.Wx[k, j * H:(j + 1) * H].copy()
            out[f"U_{g}"] = self.U[k, j * H:(j + 1) * H].copy()
            out[f"b_{g}"] = self.b[k, j * H:(j + 1) * H].copy()
        out["W_out"] = self.w_out[k][None, :].copy()
        out["b_out"] = float(self.b_out[k])
        return LstmParams(**out)

    def copy(self) -> "_Stack":
        return _Stack(*(a.copy() for a in self.arrays))


def _forward(P: _Stack, x: np.ndarray, keep: bool = True):
    """Run G networks over windows ``x`` of shape (G or 1, B, W, D); returns outputs (G, B)."""
    G, H4, D = P.Wx.shape
    H = H4 // 4
    gx, B, W, _ = x.shape
    xp = np.matmul(x.reshape(gx, B * W, D), P.Wx.transpose(0, 2, 1)).reshape(G, B, W, H4)
    xp += P.b[:, None, None, :]
    UT = P.U.transpose(0, 2, 1)
    h = np.zeros((G, B, H))
    c = np.zeros((G, B, H))
    if keep:
        acts = np.empty((G, B, W, H4))
        hs = np.empty((G, B, W + 1, H))
        cs = np.empty((G, B, W + 1, H))
        tcs = np.empty((G, B, W, H))
        hs[:, :, 0] = 0.0
        cs[:, :, 0] = 0.0
    for t in range(W):
        z = xp[:, :, t] + np.matmul(h, UT)
        a = np.empty_like(z)
        a[..., : 3 * H] = sigmoid(z[..., : 3 * H])
        a[..., 3 * H:] = np.tanh(z[..., 3 * H:])
        c = a[..., H:2 * H] * c + a[..., :H] * a[..., 3 * H:]
        tc = np.tanh(c)
        h = a[..., 2 * H:3 * H] * tc
        if keep:
            acts[:, :, t] = a
            hs[:, :, t + 1] = h
            cs[:, :, t + 1] = c
            tcs[:, :, t] = tc
    y = np.einsum("gbh,gh->gb", h, P.w_out) + P.b_out[:, None]
    cache = (x, acts, hs, cs, tcs) if keep else None
    return y, cache


def _backward(P: _Stack, cache, dy: np.ndarray) -> _Stack:
    """Reverse-mode pass through the unrolled recurrence given dL/dy of shape (G, B)."""
    x, acts, hs, cs, tcs = cache
    G, H4, D = P.Wx.shape
    H = H4 // 4
    _, B, W, _ = acts.shape
    g_wout = np.einsum("gb,gbh->gh", dy, hs[:, :, W])
    g_bout = dy.sum(axis=1)
    dh = dy[:, :, None] * P.w_out[:, None, :]
    dc = np.zeros((G, B, H))
    dz = np.empty((G, B, W, H4))
    for t in range(W - 1, -1, -1):
        a = acts[:, :, t]
        i, f, o, g = a[..., :H], a[..., H:2 * H], a[..., 2 * H:3 * H], a[..., 3 * H:]
        tc = tcs[:, :, t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dzt = dz[:, :, t]
        dzt[..., :H] = dc * g * i * (1.0 - i)
        dzt[..., H:2 * H] = dc * cs[:, :, t] * f * (1.0 - f)
        dzt[..., 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dzt[..., 3 * H:] = dc * i * (1.0 - g * g)
        dc = dc * f
        dh = np.matmul(dzt, P.U)
    gx = x.shape[0]
    dz2 = dz.reshape(G, B * W, H4).transpose(0, 2, 1)
    g_wx = np.matmul(dz2, x.reshape(gx, B * W, D))
    g_u = np.matmul(dz2, hs[:, :, :W].reshape(G, B * W, H))
    g_b = dz.sum(axis=(1, 2))
    return _Stack(g_wx, g_u, g_b, g_wout, g_bout)


def cell_step(params: LstmParams, x, h, c):
    """One LSTM recurrence step; returns ``(h', c')``."""
    x, h, c = (np.asarray(v, dtype=float) for v in (x, h, c))
    H, D = params.hidden_dim, params.input_dim
    if x.shape[-1] != D or h.shape[-1] != H or c.shape[-1] != H:
        raise ValueError(f"shape mismatch: x {x.shape}, h {h.shape}, c {c.shape} for D={D}, H={H}")
    i = sigmoid(params.W_i @ x + params.U_i @ h + params.b_i)
    f = sigmoid(params.W_f @ x + params.U_f @ h + params.b_f)
    g = np.tanh(params.W_g @ x + params.U_g @ h + params.b_g)
    o = sigmoid(params.W_o @ x + params.U_o @ h + params.b_o)
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def forward_window(params: LstmParams, window, window_len: int | None = None,
                   out_mean: float = 0.0, out_std: float = 1.0):
    """Prediction at the last step of one normalized window (W, D), or a batch (B, W, D).

    The head output is mapped back to torque units with ``out_mean``/``out_std``.
    """
    window = np.asarray(window, dtype=float)
    single = window.ndim == 2
    xb = window[None] if single else window
    if window_len is not None and xb.shape[1] != window_len:
        raise ValueError(f"window has {xb.shape[1]} steps, expected {window_len}")
    if xb.shape[2] != params.input_dim:
        raise ValueError(f"window feature dim {xb.shape[2]} != input_dim {params.input_dim}")
    y, _ = _forward(_Stack.pack([params]), xb[None], keep=False)
    y = y[0] * out_std + out_mean
    return float(y[0]) if single else y


def loss(pred, target):
    """Squared error, averaged when given arrays."""
    err = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return float(np.mean(err * err))


def backward_window(params: LstmParams, window, target, loss_scale: float = 1.0) -> LstmParams:
    """Exact gradient of ``loss_scale * mean (y - target)^2`` w.r.t. every parameter.

    ``window`` is (W, D) with a scalar target, or (B, W, D) with B targets.
    The output is an ``LstmParams`` holding gradients.
    """
    window = np.asarray(window, dtype=float)
    xb = window[None] if window.ndim == 2 else window
    tgt = np.atleast_1d(np.asarray(target, dtype=float))
    P = _Stack.pack([params])
    y, cache = _forward(P, xb[None])
    dy = loss_scale * 2.0 * (y - tgt[None, :]) / tgt.size
    return _backward(P, cache, dy).unpack(0)


@dataclass
class PredictorConfig:
    input_dim: int = 12
    hidden_dim: int = 64
    window_len: int = 50
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 50
    early_stop_patience: int = 5
    seed: int = 0

    def validate(self):
        if self.input_dim not in (2, 12):
            raise ConfigError("input_dim must be 2 (own joint) or 12 (all joints)")
        if self.hidden_dim < 1 or self.window_len < 1 or self.batch_size < 1:
            raise ConfigError("hidden_dim, window_len and batch_size must be >= 1")
        if self.max_epochs < 1 or self.early_stop_patience < 0:
            raise ConfigError("max_epochs must be >= 1 and early_stop_patience >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray) -> "Normalizer":
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def normalize(self, x):
        return (x - self.mean) / self.std

    def denormalize(self, z):
        return z * self.std + self.mean


@dataclass
class JointModel:
    params: LstmParams
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")


@dataclass
class JointModelSet:
    """Six trained joint networks plus the normalization they were trained with."""

    config: PredictorConfig
    input_norm: Normalizer
    output_norm: Normalizer
    models: list[JointModel]
    method_tag: str = "nn"

    def __post_init__(self):
        if len(self.models) != 6:
            raise ValueError(f"expected 6 joint models, got {len(self.models)}")

    def joint_inputs(self, features: np.ndarray) -> np.ndarray:
        """Normalized per-joint input streams, shape (1 or 6, n, D)."""
        z = self.input_norm.normalize(features)
        if self.config.input_dim == 12:
            return z[None]
        return np.stack([z[:, [j, 6 + j]] for j in range(6)])

    def predict_series(self, dataset: Dataset, chunk: int = 2048):
        return predict_series(self, dataset, chunk)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "lstm_joint_models",
            "config": self.config.to_dict(),
            "input_mean": self.input_norm.mean.tolist(),
            "input_std": self.input_norm.std.tolist(),
            "output_mean": self.output_norm.mean.tolist(),
            "output_std": self.output_norm.std.tolist(),
            "joints": [
                {
                    "params": m.params.to_dict(),
                    "train_loss": list(m.train_loss),
                    "val_loss": list(m.val_loss),
                    "best_epoch": m.best_epoch,
                    "best_val_loss": m.best_val_loss,
                }
                for m in self.models
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JointModelSet":
        validate_model_document(d)
        cfg = d["config"]
        cfg = PredictorConfig(**{**cfg, "betas": tuple(cfg["betas"])})
        models = [
            JointModel(LstmParams.from_dict(j["params"]), list(j["train_loss"]), list(j["val_loss"]),
                       int(j["best_epoch"]), float(j["best_val_loss"]))
            for j in d["joints"]
        ]
        return cls(
            cfg,
            Normalizer(np.asarray(d["input_mean"]), np.asarray(d["input_std"])),
            Normalizer(np.asarray(d["output_mean"]), np.asarray(d["output_std"])),
            models,
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "JointModelSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def validate_model_document(d: dict) -> None:
    """Structural check of a serialized model; raises ``ValueError`` naming the first problem."""
    required = ("format_version", "config", "input_mean", "input_std", "output_mean", "output_std", "joints")
    for key in required:
        if key not in d:
            raise ValueError(f"model document missing {key!r}")
    if d["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {d['format_version']!r}")
    if len(d["joints"]) != 6:
        raise ValueError("model document must hold 6 joints")
    if len(d["input_mean"]) != 12 or len(d["input_std"]) != 12:
        raise ValueError("input statistics must have 12 entries")
    if len(d["output_mean"]) != 6 or len(d["output_std"]) != 6:
        raise ValueError("output statistics must have 6 entries")
    H, D = d["config"]["hidden_dim"], d["config"]["input_dim"]
    for k, j in enumerate(d["joints"]):
        p = j.get("params", {})
        missing = [n for n in field_names() if n not in p]
        if missing:
            raise ValueError(f"joint {k} params missing {missing}")
        if np.shape(p["W_i"]) != (H, D) or np.shape(p["U_i"]) != (H, H):
            raise ValueError(f"joint {k} parameter shapes do not match hidden_dim={H}, input_dim={D}")


def _windows(stream: np.ndarray, ends: np.ndarray, W: int) -> np.ndarray:
    """Gather windows ending at ``ends`` from a (G, n, D) stream -> (G, B, W, D)."""
    idx = ends[:, None] + np.arange(1 - W, 1)[None, :]
    return stream[:, idx]


class _Adam:
    def __init__(self, P: _Stack, lr, betas, eps):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = [np.zeros_like(a) for a in P.arrays]
        self.v = [np.zeros_like(a) for a in P.arrays]
        self.t = np.zeros(P.b_out.shape[0], dtype=int)

    def step(self, P: _Stack, grads: _Stack, active: np.ndarray):
        self.t[active] += 1
        t = np.maximum(self.t, 1).astype(float)
        c1 = 1.0 - self.b1 ** t
        c2 = 1.0 - self.b2 ** t
        for p, g, m, v in zip(P.arrays, grads.arrays, self.m, self.v):
            sel = active
            m[sel] = self.b1 * m[sel] + (1 - self.b1) * g[sel]
            v[sel] = self.b2 * v[sel] + (1 - self.b2) * g[sel] ** 2
            shape = (-1,) + (1,) * (p.ndim - 1)
            mhat = m[sel] / c1[sel].reshape(shape)
            vhat = v[sel] / c2[sel].reshape(shape)
            p[sel] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _eval_loss(P, stream, targets, ends, W, chunk=4096):
    """Mean squared error per group over the windows ending at ``ends``."""
    total = np.zeros(P.b_out.shape[0])
    for a in range(0, len(ends), chunk):
        e = ends[a:a + chunk]
        y, _ = _forward(P, _windows(stream, e, W), keep=False)
        total += ((y - targets[:, e]) ** 2).sum(axis=1)
    return total / max(len(ends), 1)


def train(dataset: Dataset, cfg: PredictorConfig, joints=range(6), progress=None) -> JointModelSet:
    """Fit one network per joint on the free-space train split, keeping the best-validation weights.

    ``joints`` restricts which joints are optimized; the others keep their
    initial weights. Each joint's result depends only on its own targets,
    its own initialization stream and the shared batch order.
    """
    cfg.validate()
    W = cfg.window_len
    tr0, tr1 = dataset.partition["train"]
    va0, va1 = dataset.partition["val"]
    if tr1 - tr0 < W + 1:
        raise ConfigError(f"train split has {tr1 - tr0} samples; need at least window_len + 1 = {W + 1}")
    if va1 <= va0:
        raise ConfigError("dataset has an empty validation split")
    feats = dataset.features
    in_norm = Normalizer.fit(feats[tr0:tr1])
    out_norm = Normalizer.fit(dataset.tau_measured[tr0:tr1])
    models = JointModelSet(cfg, in_norm, out_norm, [JointModel(LstmParams.zeros(cfg.input_dim, cfg.hidden_dim))] * 6)
    stream = models.joint_inputs(feats)
    targets = out_norm.normalize(dataset.tau_measured).T.copy()  # (6, n)

    init = [LstmParams.random(cfg.input_dim, cfg.hidden_dim, np.random.default_rng([cfg.seed, j])) for j in range(6)]
    P = _Stack.pack(init)
    best = P.copy()
    opt = _Adam(P, cfg.lr, cfg.betas, cfg.eps)
    active = np.zeros(6, dtype=bool)
    active[list(joints)] = True
    best_val = np.full(6, np.inf)
    best_epoch = np.zeros(6, dtype=int)
    stale = np.zeros(6, dtype=int)
    hist_tr = [[] for _ in range(6)]
    hist_va = [[] for _ in range(6)]

    train_ends = np.arange(tr0 + W - 1, tr1)
    val_ends = np.arange(max(va0, W - 1), va1)
    rng = np.random.default_rng([cfg.seed, 1_000])
    for epoch in range(cfg.max_epochs):
        if not active.any():
            break
        order = rng.permutation(train_ends)
        running = np.zeros(6)
        for a in range(0, len(order), cfg.batch_size):
            e = order[a:a + cfg.batch_size]
            y, cache = _forward(P, _windows(stream, e, W))
            err = y - targets[:, e]
            running += (err ** 2).sum(axis=1)
            grads = _backward(P, cache, 2.0 * err / len(e))
            opt.step(P, grads, active)
        tr_loss = running / len(order)
        va_loss = _eval_loss(P, stream, targets, val_ends, W)
        for j in np.flatnonzero(active):
            hist_tr[j].append(float(tr_loss[j]))
            hist_va[j].append(float(va_loss[j]))
            if va_loss[j] < best_val[j]:
                best_val[j] = va_loss[j]
                best_epoch[j] = epoch
                stale[j] = 0
                for dst, src in zip(best.arrays, P.arrays):
                    dst[j] = src[j]
            else:
                stale[j] += 1
                if stale[j] > cfg.early_stop_patience:
                    active[j] = False
        if progress is not None:
            progress(epoch, tr_loss, va_loss, active.copy())
        log.info("epoch %d train %s val %s", epoch, np.round(tr_loss, 5), np.round(va_loss, 5))

    for j in range(6):
        if not hist_va[j]:
            for dst, src in zip(best.arrays, P.arrays):
                dst[j] = src[j]
    models.models = [
        JointModel(best.unpack(j), hist_tr[j], hist_va[j], int(best_epoch[j]), float(best_val[j]))
        for j in range(6)
    ]
    return models


def validation_loss(models: JointModelSet, dataset: Dataset) -> np.ndarray:
    """Per-joint normalized MSE over the validation windows, as tracked during training."""
    W = models.config.window_len
    va0, va1 = dataset.partition["val"]
    stream = models.joint_inputs(dataset.features)
    targets = models.output_norm.normalize(dataset.tau_measured).T
    P = _Stack.pack([m.params for m in models.models])
    return _eval_loss(P, stream, targets, np.arange(max(va0, W - 1), va1), W)


def predict_series(models: JointModelSet, dataset: Dataset, chunk: int = 2048):
    """Per-timestep torque predictions (n, 6) and an availability mask.

    A prediction at step t uses only samples t-W+1..t; the first W-1 steps
    have no full window and are reported as NaN / unavailable.
    """
    W = models.config.window_len
    n = len(dataset)
    tau_hat = np.full((n, 6), np.nan)
    available = np.zeros(n, dtype=bool)
    if n < W:
        return tau_hat, available
    stream = models.joint_inputs(dataset.features)
    P = _Stack.pack([m.params for m in models.models])
    ends = np.arange(W - 1, n)
    for a in range(0, len(ends), chunk):
        e = ends[a:a + chunk]
        y, _ = _forward(P, _windows(stream, e, W), keep=False)
        tau_hat[e] = models.output_norm.denormalize(y.T)
    available[W - 1:] = True
    return tau_hat, available
