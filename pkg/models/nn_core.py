"""Minimal neural kernels with exact reverse-mode gradients.

Every layer is a pair of functions:

    y, cache = <layer>_forward(store, prefix, x, ...)
    dx = <layer>_backward(store, prefix, cache, dy)

Backward accumulates parameter gradients into the ParameterStore and returns
the gradient with respect to the layer input. Sequence inputs are (T, d) or
batched (B, T, d).
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, expit

logger = logging.getLogger(__name__)


class ShapeMismatchError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


def check_finite(name: str, arr: np.ndarray):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


# ---------------------------
# Parameter store
# ---------------------------
@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray
    trainable: bool = True


class ParameterStore:
    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value, trainable: bool = True):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        value = np.array(value, dtype=self.dtype)
        self._params[name] = Parameter(value=value, grad=np.zeros_like(value), trainable=trainable)

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(self._params)

    def __getitem__(self, name) -> np.ndarray:
        return self._params[name].value

    def param(self, name) -> Parameter:
        return self._params[name]

    def grad(self, name) -> np.ndarray:
        return self._params[name].grad

    def accumulate(self, name: str, g: np.ndarray):
        p = self._params[name]
        if g.shape != p.value.shape:
            raise ShapeMismatchError(f"gradient for {name}: {g.shape} != {p.value.shape}")
        p.grad += g

    def zero_grad(self):
        for p in self._params.values():
            p.grad.fill(0.0)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def set_trainable(self, prefix: str, flag: bool):
        for n in self.names(prefix):
            self._params[n].trainable = flag

    def trainable_names(self) -> list[str]:
        return [n for n, p in self._params.items() if p.trainable]

    def astype(self, dtype) -> "ParameterStore":
        out = ParameterStore(dtype)
        for n, p in self._params.items():
            out.add(n, p.value, trainable=p.trainable)
        return out

    def copy(self) -> "ParameterStore":
        return self.astype(self.dtype)

    def merge(self, other: "ParameterStore", trainable: bool | None = None):
        for n in other:
            p = other.param(n)
            self.add(n, p.value, trainable=p.trainable if trainable is None else trainable)

    def global_grad_norm(self) -> float:
        total = 0.0
        for p in self._params.values():
            if p.trainable:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        return float(np.sqrt(total))

    def n_values(self) -> int:
        return int(sum(p.value.size for p in self._params.values()))


# ---------------------------
# Layouts / initialization
# ---------------------------
def linear_layout(prefix: str, n_in: int, n_out: int):
    return [(f"{prefix}.W", (n_in, n_out), "uniform"), (f"{prefix}.b", (n_out,), "zeros")]


def layer_norm_layout(prefix: str, d: int):
    return [(f"{prefix}.gamma", (d,), "ones"), (f"{prefix}.beta", (d,), "zeros")]


@dataclass
class LstmStackConfig:
    n_layers: int = 3
    hidden: int = 128
    input_dim: int = 192

    def validate(self):
        if self.n_layers < 1 or self.hidden < 1 or self.input_dim < 1:
            raise ValueError(f"invalid LSTM config: {self}")
        return self

    def layout(self, prefix: str = "lstm"):
        H = self.hidden
        out = []
        for l in range(self.n_layers):
            n_in = self.input_dim if l == 0 else H
            p = f"{prefix}.l{l}"
            out += [
                (f"{p}.Wx", (n_in, 4 * H), "uniform"),
                (f"{p}.Wh", (H, 4 * H), "uniform"),
                (f"{p}.b", (4 * H,), "forget_bias"),
                (f"{p}.h0", (H,), "zeros"),
                (f"{p}.c0", (H,), "zeros"),
            ]
        return out


@dataclass
class TransformerConfig:
    n_layers: int = 2
    n_heads: int = 4
    model_dim: int = 64
    ff_dim: int = 128

    def validate(self):
        if self.n_layers < 1 or self.n_heads < 1 or self.ff_dim < 1:
            raise ValueError(f"invalid transformer config: {self}")
        if self.model_dim % self.n_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}")
        if self.model_dim % 2:
            raise ValueError("model_dim must be even for the temporal encoding")
        return self

    def layout(self, prefix: str = "encoder"):
        d = self.model_dim
        out = []
        for l in range(self.n_layers):
            p = f"{prefix}.l{l}"
            out += layer_norm_layout(f"{p}.ln1", d)
            for proj in ("q", "k", "v", "o"):
                out += linear_layout(f"{p}.attn.{proj}", d, d)
            out += layer_norm_layout(f"{p}.ln2", d)
            out += linear_layout(f"{p}.ff1", d, self.ff_dim)
            out += linear_layout(f"{p}.ff2", self.ff_dim, d)
        return out


def init_parameters(cfg, seed: int, dtype=np.float32, store: ParameterStore | None = None) -> ParameterStore:
    """Weights ~ U(±1/sqrt(fan_in)); biases zero; LSTM forget bias 1; h0/c0 zero.

    ``cfg`` is anything with a ``layout()`` method or a layout list of
    (name, shape, kind) tuples. Draws happen in layout order, so a seed fully
    determines the store.
    """
    layout = cfg.layout() if hasattr(cfg, "layout") else cfg
    rng = np.random.default_rng(seed)
    store = store if store is not None else ParameterStore(dtype)

    for name, shape, kind in layout:
        if kind == "uniform":
            bound = 1.0 / np.sqrt(shape[0])
            value = rng.uniform(-bound, bound, size=shape)
        elif kind == "zeros":
            value = np.zeros(shape)
        elif kind == "ones":
            value = np.ones(shape)
        elif kind == "forget_bias":
            value = np.zeros(shape)
            H = shape[0] // 4
            value[H:2 * H] = 1.0
        else:
            raise ValueError(f"unknown init kind {kind!r} for {name}")
        store.add(name, value)
    return store


# ---------------------------
# Helpers
# ---------------------------
def _batched(x: np.ndarray):
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeMismatchError(f"expected rank 2 or 3 input, got shape {x.shape}")


# ---------------------------
# Linear
# ---------------------------
def linear_forward(store: ParameterStore, prefix: str, x: np.ndarray):
    W = store[f"{prefix}.W"]
    b = store[f"{prefix}.b"]
    if x.shape[-1] != W.shape[0]:
        raise ShapeMismatchError(f"{prefix}: input width {x.shape[-1]} != {W.shape[0]}")
    return x @ W + b, x


def linear_backward(store: ParameterStore, prefix: str, cache, dy: np.ndarray) -> np.ndarray:
    x = cache
    W = store[f"{prefix}.W"]
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    store.accumulate(f"{prefix}.W", x2.T @ dy2)
    store.accumulate(f"{prefix}.b", dy2.sum(axis=0))
    return dy @ W.T


# ---------------------------
# Temporal encoding
# ---------------------------
def temporal_encoding(T: int, d: int) -> np.ndarray:
    if d % 2:
        raise ValueError(f"temporal encoding width must be even, got {d}")
    pos = np.arange(T)[:, None]
    two_i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, two_i / d)
    pe = np.zeros((T, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


# ---------------------------
# LayerNorm / GELU
# ---------------------------
LN_EPS = 1e-5


def layer_norm_forward(store: ParameterStore, prefix: str, x: np.ndarray):
    gamma = store[f"{prefix}.gamma"]
    beta = store[f"{prefix}.beta"]
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std)


def layer_norm_backward(store: ParameterStore, prefix: str, cache, dy: np.ndarray) -> np.ndarray:
    xhat, inv_std = cache
    gamma = store[f"{prefix}.gamma"]
    d = xhat.shape[-1]
    store.accumulate(f"{prefix}.gamma", (dy * xhat).reshape(-1, d).sum(axis=0))
    store.accumulate(f"{prefix}.beta", dy.reshape(-1, d).sum(axis=0))
    dxhat = dy * gamma
    return inv_std / d * (
        d * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )


def gelu_forward(x: np.ndarray):
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    return x * cdf, (x, cdf)


def gelu_backward(cache, dy: np.ndarray) -> np.ndarray:
    x, cdf = cache
    pdf = np.exp(-0.5 * x ** 2) / np.sqrt(2.0 * np.pi)
    return dy * (cdf + x * pdf)


# ---------------------------
# Multi-head self-attention
# ---------------------------
def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def mha_forward(store: ParameterStore, prefix: str, x: np.ndarray, n_heads: int):
    x3, squeeze = _batched(x)
    B, T, d = x3.shape
    if d % n_heads:
        raise ShapeMismatchError(f"{prefix}: width {d} not divisible by {n_heads} heads")
    dh = d // n_heads

    q, cq = linear_forward(store, f"{prefix}.q", x3)
    k, ck = linear_forward(store, f"{prefix}.k", x3)
    v, cv = linear_forward(store, f"{prefix}.v", x3)

    def split(t):
        return t.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)

    Q, K, V = split(q), split(k), split(v)
    scale = 1.0 / np.sqrt(dh)
    attn = softmax(Q @ K.transpose(0, 1, 3, 2) * scale, axis=-1)
    heads = attn @ V
    concat = heads.transpose(0, 2, 1, 3).reshape(B, T, d)
    out, co = linear_forward(store, f"{prefix}.o", concat)

    cache = {"q": cq, "k": ck, "v": cv, "o": co, "Q": Q, "K": K, "V": V,
             "attn": attn, "scale": scale, "squeeze": squeeze}
    return (out[0] if squeeze else out), cache


def mha_backward(store: ParameterStore, prefix: str, cache, dy: np.ndarray) -> np.ndarray:
    squeeze = cache["squeeze"]
    dy3 = dy[None] if squeeze else dy
    Q, K, V, attn = cache["Q"], cache["K"], cache["V"], cache["attn"]
    B, h, T, dh = Q.shape

    def merge(t):
        return t.transpose(0, 2, 1, 3).reshape(B, T, h * dh)

    dconcat = linear_backward(store, f"{prefix}.o", cache["o"], dy3)
    dheads = dconcat.reshape(B, T, h, dh).transpose(0, 2, 1, 3)

    dattn = dheads @ V.transpose(0, 1, 3, 2)
    dV = attn.transpose(0, 1, 3, 2) @ dheads
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * cache["scale"]
    dQ = dscores @ K
    dK = dscores.transpose(0, 1, 3, 2) @ Q

    dx = (
        linear_backward(store, f"{prefix}.q", cache["q"], merge(dQ))
        + linear_backward(store, f"{prefix}.k", cache["k"], merge(dK))
        + linear_backward(store, f"{prefix}.v", cache["v"], merge(dV))
    )
    return dx[0] if squeeze else dx


# ---------------------------
# Transformer encoder (pre-norm)
# ---------------------------
def transformer_layer_forward(store: ParameterStore, prefix: str, x: np.ndarray, n_heads: int):
    n1, c_n1 = layer_norm_forward(store, f"{prefix}.ln1", x)
    a, c_a = mha_forward(store, f"{prefix}.attn", n1, n_heads)
    h = x + a
    n2, c_n2 = layer_norm_forward(store, f"{prefix}.ln2", h)
    f1, c_f1 = linear_forward(store, f"{prefix}.ff1", n2)
    g, c_g = gelu_forward(f1)
    f2, c_f2 = linear_forward(store, f"{prefix}.ff2", g)
    y = h + f2
    return y, (c_n1, c_a, c_n2, c_f1, c_g, c_f2)


def transformer_layer_backward(store: ParameterStore, prefix: str, cache, dy: np.ndarray) -> np.ndarray:
    c_n1, c_a, c_n2, c_f1, c_g, c_f2 = cache
    dg = linear_backward(store, f"{prefix}.ff2", c_f2, dy)
    df1 = gelu_backward(c_g, dg)
    dn2 = linear_backward(store, f"{prefix}.ff1", c_f1, df1)
    dh = dy + layer_norm_backward(store, f"{prefix}.ln2", c_n2, dn2)
    dn1 = mha_backward(store, f"{prefix}.attn", c_a, dh)
    return dh + layer_norm_backward(store, f"{prefix}.ln1", c_n1, dn1)


def transformer_encoder_forward(store: ParameterStore, prefix: str, x: np.ndarray, cfg: TransformerConfig):
    caches = []
    for l in range(cfg.n_layers):
        x, c = transformer_layer_forward(store, f"{prefix}.l{l}", x, cfg.n_heads)
        caches.append(c)
    check_finite(prefix, x)
    return x, caches


def transformer_encoder_backward(store: ParameterStore, prefix: str, caches, dy: np.ndarray) -> np.ndarray:
    for l in reversed(range(len(caches))):
        dy = transformer_layer_backward(store, f"{prefix}.l{l}", caches[l], dy)
    return dy


# ---------------------------
# Multi-layer LSTM with learnable initial states
# ---------------------------
def _lstm_layer_forward(store: ParameterStore, p: str, x: np.ndarray):
    Wx, Wh, b = store[f"{p}.Wx"], store[f"{p}.Wh"], store[f"{p}.b"]
    h0, c0 = store[f"{p}.h0"], store[f"{p}.c0"]
    if x.shape[-1] != Wx.shape[0]:
        raise ShapeMismatchError(f"{p}: input width {x.shape[-1]} != {Wx.shape[0]}")

    B, T, _ = x.shape
    H = Wh.shape[0]
    xw = x @ Wx + b

    h = np.broadcast_to(h0, (B, H)).copy()
    c = np.broadcast_to(c0, (B, H)).copy()
    hs = np.empty((B, T, H), dtype=xw.dtype)
    cs = np.empty_like(hs)
    h_prev = np.empty_like(hs)
    c_prev = np.empty_like(hs)
    gates = np.empty((B, T, 4 * H), dtype=xw.dtype)

    for t in range(T):
        a = xw[:, t] + h @ Wh
        i = expit(a[:, :H])
        f = expit(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = expit(a[:, 3 * H:])
        h_prev[:, t] = h
        c_prev[:, t] = c
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t, :H], gates[:, t, H:2 * H], gates[:, t, 2 * H:3 * H], gates[:, t, 3 * H:] = i, f, g, o
        cs[:, t] = c
        hs[:, t] = h

    if not np.all(np.isfinite(cs)):
        raise NumericError(f"{p}: non-finite cell state in recurrence")
    return hs, {"x": x, "gates": gates, "cs": cs, "h_prev": h_prev, "c_prev": c_prev}


def _lstm_layer_backward(store: ParameterStore, p: str, cache, dhs: np.ndarray) -> np.ndarray:
    Wx, Wh = store[f"{p}.Wx"], store[f"{p}.Wh"]
    x, gates, cs, c_prev = cache["x"], cache["gates"], cache["cs"], cache["c_prev"]
    B, T, H = cs.shape

    da_all = np.empty_like(gates)
    dh_next = np.zeros((B, H), dtype=cs.dtype)
    dc_next = np.zeros((B, H), dtype=cs.dtype)

    for t in reversed(range(T)):
        i, f, g, o = gates[:, t, :H], gates[:, t, H:2 * H], gates[:, t, 2 * H:3 * H], gates[:, t, 3 * H:]
        tc = np.tanh(cs[:, t])
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc ** 2)
        da_all[:, t, :H] = dc * g * i * (1.0 - i)
        da_all[:, t, H:2 * H] = dc * c_prev[:, t] * f * (1.0 - f)
        da_all[:, t, 2 * H:3 * H] = dc * i * (1.0 - g ** 2)
        da_all[:, t, 3 * H:] = dh * tc * o * (1.0 - o)
        dh_next = da_all[:, t] @ Wh.T
        dc_next = dc * f

    da2 = da_all.reshape(-1, 4 * H)
    store.accumulate(f"{p}.Wx", x.reshape(-1, x.shape[-1]).T @ da2)
    store.accumulate(f"{p}.Wh", cache["h_prev"].reshape(-1, H).T @ da2)
    store.accumulate(f"{p}.b", da2.sum(axis=0))
    store.accumulate(f"{p}.h0", dh_next.sum(axis=0))
    store.accumulate(f"{p}.c0", dc_next.sum(axis=0))
    return da_all @ Wx.T


def lstm_stack_forward(store: ParameterStore, prefix: str, z: np.ndarray, n_layers: int):
    z3, squeeze = _batched(z)
    caches = []
    for l in range(n_layers):
        z3, c = _lstm_layer_forward(store, f"{prefix}.l{l}", z3)
        caches.append(c)
    return (z3[0] if squeeze else z3), {"layers": caches, "squeeze": squeeze}


def lstm_stack_backward(store: ParameterStore, prefix: str, cache, dy: np.ndarray) -> np.ndarray:
    squeeze = cache["squeeze"]
    d = dy[None] if squeeze else dy
    for l in reversed(range(len(cache["layers"]))):
        d = _lstm_layer_backward(store, f"{prefix}.l{l}", cache["layers"][l], d)
    return d[0] if squeeze else d
