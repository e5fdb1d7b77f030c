"""MC-GRU, GRU and LSTM sequence models with hand-written BPTT.

The MC-GRU layer is a GRU whose candidate state receives an additive
structural embedding ``S = W_sh*stiffness + W_mh*mass + b_s``; S is computed
once per (sample, layer) and broadcast over time. Every layer owns its own
projections. A linear head maps the top hidden state to the output at every
time step, and all hidden states start at zero.

Shapes: ``gm`` is (T,), (B, T) or (B, T, input_size1); ``struct`` is (2,) or
(B, 2). Parameters are float64 numpy arrays stored on :class:`Model`;
:meth:`Model.parameters` exposes them by name so optimisers and checkpoints
work on a flat mapping.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy.special import expit as sigmoid

from .container import read_container, write_container
from .errors import CacheMismatch, InvalidConfig, ShapeMismatch

CELLS = ("mcgru", "gru", "lstm")


@dataclass(frozen=True)
class ModelArch:
    cell: str = "mcgru"
    num_layers: int = 2
    hidden_size: int = 64
    input_size1: int = 1
    input_size2: int = 2
    output_size: int = 1

    def __post_init__(self):
        if self.cell not in CELLS:
            raise InvalidConfig(f"unknown cell {self.cell!r}; expected one of {CELLS}", "arch.cell")
        for name in ("num_layers", "hidden_size", "input_size1", "output_size"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1", f"arch.{name}")
        if self.cell == "mcgru" and self.input_size2 != 2:
            raise InvalidConfig("MC-GRU takes exactly two structural inputs (stiffness, mass)", "arch.input_size2")

    def layer_input(self, layer: int) -> int:
        return self.input_size1 if layer == 0 else self.hidden_size

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LayerParams:
    """One GRU / MC-GRU layer. The structural projections are None for plain GRU."""

    W_xr: np.ndarray
    W_xz: np.ndarray
    W_xh: np.ndarray
    W_hr: np.ndarray
    W_hz: np.ndarray
    W_hh: np.ndarray
    b_r: np.ndarray
    b_z: np.ndarray
    b_h: np.ndarray
    W_sh: np.ndarray | None = None
    W_mh: np.ndarray | None = None
    b_s: np.ndarray | None = None

    @property
    def structural(self) -> bool:
        return self.W_sh is not None


@dataclass
class LSTMLayerParams:
    W_xi: np.ndarray
    W_xf: np.ndarray
    W_xg: np.ndarray
    W_xo: np.ndarray
    W_hi: np.ndarray
    W_hf: np.ndarray
    W_hg: np.ndarray
    W_ho: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray


@dataclass
class OutputHead:
    W_out: np.ndarray
    b_out: np.ndarray


@dataclass
class Model:
    arch: ModelArch
    layers: list
    head: OutputHead
    seed: int | None = None

    def parameters(self) -> dict[str, np.ndarray]:
        """Name -> array views; in-place edits change the model."""
        out = {}
        for l, layer in enumerate(self.layers):
            for f in fields(layer):
                arr = getattr(layer, f.name)
                if arr is not None:
                    out[f"layers.{l}.{f.name}"] = arr
        out["head.W_out"] = self.head.W_out
        out["head.b_out"] = self.head.b_out
        return out

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        if set(own) != set(params):
            raise ShapeMismatch(f"parameter names differ: {sorted(set(own) ^ set(params))}")
        for name, arr in params.items():
            if own[name].shape != np.shape(arr):
                raise ShapeMismatch(f"{name}: expected {own[name].shape}, got {np.shape(arr)}")
            own[name][...] = arr

    def copy(self) -> "Model":
        clone = init_params(self.arch, 0)
        clone.load_parameters(self.parameters())
        clone.seed = self.seed
        return clone

    def n_params(self) -> int:
        return sum(a.size for a in self.parameters().values())


def _gru_layer(rng, n_in, n_h, structural, bound):
    def u(*shape):
        return rng.uniform(-bound, bound, size=shape)

    p = LayerParams(
        W_xr=u(n_h, n_in), W_xz=u(n_h, n_in), W_xh=u(n_h, n_in),
        W_hr=u(n_h, n_h), W_hz=u(n_h, n_h), W_hh=u(n_h, n_h),
        b_r=np.zeros(n_h), b_z=np.zeros(n_h), b_h=np.zeros(n_h),
    )
    if structural:
        p.W_sh = u(n_h, 1)
        p.W_mh = u(n_h, 1)
        p.b_s = np.zeros(n_h)
    return p


def _lstm_layer(rng, n_in, n_h, bound):
    def u(*shape):
        return rng.uniform(-bound, bound, size=shape)

    return LSTMLayerParams(
        W_xi=u(n_h, n_in), W_xf=u(n_h, n_in), W_xg=u(n_h, n_in), W_xo=u(n_h, n_in),
        W_hi=u(n_h, n_h), W_hf=u(n_h, n_h), W_hg=u(n_h, n_h), W_ho=u(n_h, n_h),
        b_i=np.zeros(n_h), b_f=np.zeros(n_h), b_g=np.zeros(n_h), b_o=np.zeros(n_h),
    )


def init_params(arch: ModelArch, seed: int) -> Model:
    """Weights uniform in +-1/sqrt(hidden_size), biases zero."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(arch.hidden_size)
    layers = []
    for l in range(arch.num_layers):
        n_in = arch.layer_input(l)
        if arch.cell == "lstm":
            layers.append(_lstm_layer(rng, n_in, arch.hidden_size, bound))
        else:
            layers.append(_gru_layer(rng, n_in, arch.hidden_size, arch.cell == "mcgru", bound))
    head = OutputHead(
        W_out=rng.uniform(-bound, bound, size=(arch.output_size, arch.hidden_size)),
        b_out=np.zeros(arch.output_size),
    )
    return Model(arch=arch, layers=layers, head=head, seed=seed)


# ---------------------------------------------------------------------------
# single-step cells (reference formulations)


def structural_embedding(stiffness_norm: float, mass_norm: float, layer: LayerParams) -> np.ndarray:
    if not layer.structural:
        return np.zeros(layer.b_h.shape)
    return layer.W_sh[:, 0] * stiffness_norm + layer.W_mh[:, 0] * mass_norm + layer.b_s


def mcgru_cell_step(x_t, h_prev, S, layer: LayerParams):
    """One MC-GRU update. Returns ``(h_t, cache)`` with cache keys r, z, h_tilde."""
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    r = sigmoid(layer.W_xr @ x_t + layer.W_hr @ h_prev + layer.b_r)
    z = sigmoid(layer.W_xz @ x_t + layer.W_hz @ h_prev + layer.b_z)
    h_tilde = np.tanh(layer.W_xh @ x_t + layer.W_hh @ (r * h_prev) + S + layer.b_h)
    h = (1.0 - z) * h_prev + z * h_tilde
    return h, {"x": x_t, "h_prev": h_prev, "r": r, "z": z, "h_tilde": h_tilde, "S": S}


def gru_cell_step(x_t, h_prev, layer: LayerParams):
    return mcgru_cell_step(x_t, h_prev, np.zeros_like(layer.b_h), layer)


def lstm_cell_step(x_t, h_prev, c_prev, layer: LSTMLayerParams):
    """One LSTM update. Returns ``(h_t, c_t, cache)``."""
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    i = sigmoid(layer.W_xi @ x_t + layer.W_hi @ h_prev + layer.b_i)
    f = sigmoid(layer.W_xf @ x_t + layer.W_hf @ h_prev + layer.b_f)
    g = np.tanh(layer.W_xg @ x_t + layer.W_hg @ h_prev + layer.b_g)
    o = sigmoid(layer.W_xo @ x_t + layer.W_ho @ h_prev + layer.b_o)
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c, {"i": i, "f": f, "g": g, "o": o, "c": c}


# ---------------------------------------------------------------------------
# fused sequence passes


@dataclass
class ForwardCache:
    arch: ModelArch
    batch: int
    steps: int
    squeeze: bool
    struct: np.ndarray
    layers: list = field(default_factory=list)
    param_ids: tuple = ()


def _gru_forward(p: LayerParams, X, S):
    B, T, _ = X.shape
    H = p.b_h.size
    Wx = np.concatenate([p.W_xr, p.W_xz, p.W_xh])
    A = X @ Wx.T + np.concatenate([p.b_r, p.b_z, p.b_h])
    if S is not None:
        A[..., 2 * H:] += S[:, None, :]
    Whrz_T = np.concatenate([p.W_hr, p.W_hz]).T
    Whh_T = p.W_hh.T
    Hs = np.empty((B, T, H))
    R = np.empty((B, T, H))
    Z = np.empty((B, T, H))
    C = np.empty((B, T, H))
    h = np.zeros((B, H))
    for t in range(T):
        a = A[:, t]
        rz = sigmoid(a[:, : 2 * H] + h @ Whrz_T)
        r = rz[:, :H]
        z = rz[:, H:]
        c = np.tanh(a[:, 2 * H:] + (r * h) @ Whh_T)
        h = (1.0 - z) * h + z * c
        Hs[:, t] = h
        R[:, t] = r
        Z[:, t] = z
        C[:, t] = c
    return Hs, {"X": X, "H": Hs, "R": R, "Z": Z, "C": C, "S": S}


def _gru_backward(p: LayerParams, cache, dH, struct):
    X, Hs, R, Z, C = cache["X"], cache["H"], cache["R"], cache["Z"], cache["C"]
    B, T, H = Hs.shape
    Wx = np.concatenate([p.W_xr, p.W_xz, p.W_xh])
    Whrz = np.concatenate([p.W_hr, p.W_hz])
    Whh = p.W_hh
    dA = np.empty((B, T, 3 * H))
    dh_next = np.zeros((B, H))
    zero = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dH[:, t] + dh_next
        hp = Hs[:, t - 1] if t > 0 else zero
        z = Z[:, t]
        r = R[:, t]
        c = C[:, t]
        dac = dh * z * (1.0 - c * c)
        drh = dac @ Whh
        dhp = dh * (1.0 - z) + drh * r
        dA[:, t, :H] = drh * hp * r * (1.0 - r)
        dA[:, t, H : 2 * H] = dh * (c - hp) * z * (1.0 - z)
        dA[:, t, 2 * H:] = dac
        dh_next = dhp + dA[:, t, : 2 * H] @ Whrz

    Hprev = np.concatenate([np.zeros((B, 1, H)), Hs[:, :-1]], axis=1)
    flatA = dA.reshape(B * T, 3 * H)
    dWx = flatA.T @ X.reshape(B * T, -1)
    db = flatA.sum(axis=0)
    dWhrz = flatA[:, : 2 * H].T @ Hprev.reshape(B * T, H)
    dWhh = flatA[:, 2 * H:].T @ (R * Hprev).reshape(B * T, H)
    grads = {
        "W_xr": dWx[:H], "W_xz": dWx[H : 2 * H], "W_xh": dWx[2 * H:],
        "W_hr": dWhrz[:H], "W_hz": dWhrz[H:], "W_hh": dWhh,
        "b_r": db[:H], "b_z": db[H : 2 * H], "b_h": db[2 * H:],
    }
    if p.structural:
        dS = dA[..., 2 * H:].sum(axis=1)
        grads["W_sh"] = dS.T @ struct[:, 0:1]
        grads["W_mh"] = dS.T @ struct[:, 1:2]
        grads["b_s"] = dS.sum(axis=0)
    dX = dA @ Wx
    return grads, dX


def _lstm_forward(p: LSTMLayerParams, X):
    B, T, _ = X.shape
    H = p.b_i.size
    Wx = np.concatenate([p.W_xi, p.W_xf, p.W_xg, p.W_xo])
    A = X @ Wx.T + np.concatenate([p.b_i, p.b_f, p.b_g, p.b_o])
    Wh_T = np.concatenate([p.W_hi, p.W_hf, p.W_hg, p.W_ho]).T
    Hs = np.empty((B, T, H))
    Cs = np.empty((B, T, H))
    G = np.empty((B, T, 4 * H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        a = A[:, t] + h @ Wh_T
        g = np.empty_like(a)
        g[:, : 2 * H] = sigmoid(a[:, : 2 * H])
        g[:, 2 * H : 3 * H] = np.tanh(a[:, 2 * H : 3 * H])
        g[:, 3 * H:] = sigmoid(a[:, 3 * H:])
        c = g[:, H : 2 * H] * c + g[:, :H] * g[:, 2 * H : 3 * H]
        h = g[:, 3 * H:] * np.tanh(c)
        Hs[:, t] = h
        Cs[:, t] = c
        G[:, t] = g
    return Hs, {"X": X, "H": Hs, "Cs": Cs, "G": G}


def _lstm_backward(p: LSTMLayerParams, cache, dH):
    X, Hs, Cs, G = cache["X"], cache["H"], cache["Cs"], cache["G"]
    B, T, H = Hs.shape
    Wx = np.concatenate([p.W_xi, p.W_xf, p.W_xg, p.W_xo])
    Wh = np.concatenate([p.W_hi, p.W_hf, p.W_hg, p.W_ho])
    dA = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    zero = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = G[:, t]
        i, f, gg, o = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H:]
        c = Cs[:, t]
        cp = Cs[:, t - 1] if t > 0 else zero
        tc = np.tanh(c)
        dh = dH[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dA[:, t, :H] = dc * gg * i * (1.0 - i)
        dA[:, t, H : 2 * H] = dc * cp * f * (1.0 - f)
        dA[:, t, 2 * H : 3 * H] = dc * i * (1.0 - gg * gg)
        dA[:, t, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dA[:, t] @ Wh

    Hprev = np.concatenate([np.zeros((B, 1, H)), Hs[:, :-1]], axis=1)
    flatA = dA.reshape(B * T, 4 * H)
    dWx = flatA.T @ X.reshape(B * T, -1)
    dWh = flatA.T @ Hprev.reshape(B * T, H)
    db = flatA.sum(axis=0)
    names = "ifgo"
    grads = {}
    for j, n in enumerate(names):
        sl = slice(j * H, (j + 1) * H)
        grads[f"W_x{n}"] = dWx[sl]
        grads[f"W_h{n}"] = dWh[sl]
        grads[f"b_{n}"] = db[sl]
    return grads, dA @ Wx


def _as_batch(model: Model, gm, struct):
    gm = np.asarray(gm, dtype=float)
    squeeze = gm.ndim == 1
    if squeeze:
        gm = gm[None, :, None]
    elif gm.ndim == 2:
        gm = gm[:, :, None]
    if gm.shape[-1] != model.arch.input_size1:
        raise ShapeMismatch(f"ground-motion width {gm.shape[-1]} != input_size1 {model.arch.input_size1}")
    B = gm.shape[0]
    if struct is None:
        struct = np.zeros((B, model.arch.input_size2))
    struct = np.asarray(struct, dtype=float)
    if struct.ndim == 1:
        struct = np.broadcast_to(struct, (B, struct.size))
    if struct.shape[0] != B:
        raise ShapeMismatch(f"{struct.shape[0]} structure rows for a batch of {B}")
    return gm, np.ascontiguousarray(struct), squeeze


def forward(model: Model, gm, struct=None):
    """Evaluate the network. Returns ``(pred, cache)``.

    ``pred`` is (T, output_size) for a single 1-D sequence, else
    (B, T, output_size).
    """
    X, sf, squeeze = _as_batch(model, gm, struct)
    B, T, _ = X.shape
    cache = ForwardCache(
        arch=model.arch, batch=B, steps=T, squeeze=squeeze, struct=sf,
        param_ids=tuple(id(a) for a in model.parameters().values()),
    )
    inp = X
    for layer in model.layers:
        if model.arch.cell == "lstm":
            out, lc = _lstm_forward(layer, inp)
        else:
            S = None
            if layer.structural:
                S = sf[:, 0:1] @ layer.W_sh.T + sf[:, 1:2] @ layer.W_mh.T + layer.b_s
            out, lc = _gru_forward(layer, inp, S)
        cache.layers.append(lc)
        inp = out
    pred = inp @ model.head.W_out.T + model.head.b_out
    return (pred[0] if squeeze else pred), cache


def predict(model: Model, gm, struct=None, batch_size: int = 256) -> np.ndarray:
    """Forward pass in batches without keeping caches; returns (B, T, out) or (T, out)."""
    gm = np.asarray(gm, dtype=float)
    if gm.ndim == 1:
        return forward(model, gm, struct)[0]
    if struct is not None and np.ndim(struct) == 1:
        struct = np.broadcast_to(struct, (len(gm), len(struct)))
    parts = []
    for lo in range(0, len(gm), batch_size):
        s = None if struct is None else struct[lo : lo + batch_size]
        parts.append(forward(model, gm[lo : lo + batch_size], s)[0])
    return np.concatenate(parts)


def backward(model: Model, cache: ForwardCache, dpred) -> dict[str, np.ndarray]:
    """Exact BPTT. ``dpred`` has the shape of ``forward``'s prediction.

    Returns gradients keyed like :meth:`Model.parameters`.
    """
    if cache.arch != model.arch or cache.param_ids != tuple(id(a) for a in model.parameters().values()):
        raise CacheMismatch("cache was produced by a different model")
    dpred = np.asarray(dpred, dtype=float)
    if cache.squeeze:
        dpred = dpred[None]
    expected = (cache.batch, cache.steps, model.arch.output_size)
    if dpred.shape != expected:
        raise CacheMismatch(f"upstream gradient shape {dpred.shape} does not match cache {expected}")

    grads: dict[str, np.ndarray] = {}
    top = cache.layers[-1]["H"]
    B, T, H = top.shape
    flat = dpred.reshape(B * T, -1)
    grads["head.W_out"] = flat.T @ top.reshape(B * T, H)
    grads["head.b_out"] = flat.sum(axis=0)
    dH = dpred @ model.head.W_out
    for l in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[l]
        if model.arch.cell == "lstm":
            lg, dH = _lstm_backward(layer, cache.layers[l], dH)
        else:
            lg, dH = _gru_backward(layer, cache.layers[l], dH, cache.struct)
        for name, g in lg.items():
            grads[f"layers.{l}.{name}"] = g
    params = model.parameters()
    return {name: grads[name] for name in params}


# ---------------------------------------------------------------------------
# gradient verification


def _mse(pred, target):
    d = pred - target
    return float(np.mean(d * d)), 2.0 * d / d.size


def gradient_check(
    model: Model,
    sample: tuple,
    eps: float = 1e-6,
    names: Iterable[str] | None = None,
    grad_hook: Callable[[dict], None] | None = None,
    floor: float | None = None,
) -> float:
    """Worst per-coordinate relative error of the analytic gradient.

    ``sample`` is ``(gm, struct, target)``; the loss is the MSE of the
    prediction. Each coordinate is compared against a central difference
    with step ``eps``; the relative error is
    ``|a - n| / max(|a|, |n|, floor)``. The default ``floor`` is 1e-3 of the
    largest checked analytic gradient magnitude, which keeps coordinates lying
    near the finite-difference roundoff level (~1e-10 at eps=1e-6) from
    dominating. ``grad_hook`` may mutate the analytic gradients before
    comparison (used for mutation tests).
    """
    gm, struct, target = sample
    target = np.asarray(target, dtype=float)
    pred, cache = forward(model, gm, struct)
    target = target.reshape(pred.shape)
    _, dpred = _mse(pred, target)
    grads = backward(model, cache, dpred)
    if grad_hook is not None:
        grad_hook(grads)
    params = model.parameters()
    selected = list(params) if names is None else list(names)
    if floor is None:
        scale = max(float(np.max(np.abs(grads[n]))) for n in selected)
        floor = max(1e-3 * scale, 1e-12)

    worst = 0.0
    for name in selected:
        p = params[name]
        g = grads[name]
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lp, _ = _mse(forward(model, gm, struct)[0], target)
            flat[j] = orig - eps
            lm, _ = _mse(forward(model, gm, struct)[0], target)
            flat[j] = orig
            num = (lp - lm) / (2.0 * eps)
            err = abs(gflat[j] - num) / max(abs(gflat[j]), abs(num), floor)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, model: Model, meta: dict | None = None) -> None:
    header = {"arch": model.arch.to_dict(), "seed": model.seed, **(meta or {})}
    write_container(path, "checkpoint", header, model.parameters())


def load_checkpoint(path: str | Path) -> tuple[Model, dict]:
    meta, arrays = read_container(path, kind="checkpoint")
    arch = ModelArch(**meta["arch"])
    model = init_params(arch, 0)
    model.load_parameters(arrays)
    model.seed = meta.get("seed")
    return model, meta
