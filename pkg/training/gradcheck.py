"""Central finite-difference verification of the hand-written backward passes."""
import logging
from dataclasses import dataclass, field

import numpy as np

from models.generator import (
    GenerationConfig,
    combined_loss_and_grad,
    fuse_backward,
    fuse_forward,
    predict_backward,
    predict_forward,
)
from models.nn_core import (
    LstmStackConfig,
    ParameterStore,
    TransformerConfig,
    init_parameters,
    linear_backward,
    linear_forward,
    linear_layout,
    lstm_stack_backward,
    lstm_stack_forward,
    mha_backward,
    mha_forward,
    transformer_layer_backward,
    transformer_layer_forward,
)
from models.style_encoder import StyleEncoderConfig, encode_backward, encode_forward, nt_xent_loss

logger = logging.getLogger(__name__)

STEP = 1e-5
ZERO_GRAD_FLOOR = 1e-8
THRESHOLDS = {
    "linear": 1e-6,
    "attention": 1e-5,
    "transformer_layer": 1e-5,
    "lstm_stack": 1e-5,
    "style_encoder": 1e-5,
    "generator": 1e-4,
}
SELECTORS = tuple(THRESHOLDS)


@dataclass
class GradCheckResult:
    selector: str
    threshold: float
    groups: dict = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.groups.values()) if self.groups else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold

    def to_dict(self) -> dict:
        return {
            "selector": self.selector,
            "max_rel_error": self.max_rel_error,
            "threshold": self.threshold,
            "passed": self.passed,
            "groups": self.groups,
        }


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # both at round-off level, e.g. attention key biases under softmax shift invariance
    den = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if den < ZERO_GRAD_FLOOR:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / den)


def numeric_gradient(loss_fn, arr: np.ndarray, h: float = STEP) -> np.ndarray:
    """Perturbs ``arr`` in place element by element; restores it afterwards."""
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + h
        f_plus = loss_fn()
        arr[idx] = orig - h
        f_minus = loss_fn()
        arr[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


# ---------------------------
# Cases
# ---------------------------
# Each case returns (store, inputs, forward, backward): forward() -> (loss, cache),
# backward(cache) -> {input name: gradient}, accumulating parameter grads in store.

def _projection_loss(y, R):
    return float(np.sum(y * R))


def _randomize(store: ParameterStore, rng, names, scale=0.5):
    for n in names:
        store[n][...] = rng.normal(scale=scale, size=store[n].shape)


def _case_linear(rng, seed):
    store = init_parameters(linear_layout("lin", 5, 4), seed, np.float64)
    _randomize(store, rng, ["lin.b"])
    x = rng.normal(size=(3, 5))
    R = rng.normal(size=(3, 4))

    def forward():
        y, c = linear_forward(store, "lin", x)
        return _projection_loss(y, R), c

    def backward(c):
        return {"x": linear_backward(store, "lin", c, R)}

    return store, {"x": x}, forward, backward


def _case_attention(rng, seed):
    layout = []
    for proj in ("q", "k", "v", "o"):
        layout += linear_layout(f"attn.{proj}", 8, 8)
    store = init_parameters(layout, seed, np.float64)
    _randomize(store, rng, [n for n in store if n.endswith(".b")])
    x = rng.normal(size=(2, 8))
    R = rng.normal(size=(2, 8))

    def forward():
        y, c = mha_forward(store, "attn", x, n_heads=2)
        return _projection_loss(y, R), c

    def backward(c):
        return {"x": mha_backward(store, "attn", c, R)}

    return store, {"x": x}, forward, backward


def _case_transformer_layer(rng, seed):
    cfg = TransformerConfig(n_layers=1, n_heads=2, model_dim=8, ff_dim=12)
    store = init_parameters(cfg.layout("enc"), seed, np.float64)
    _randomize(store, rng, [n for n in store if n.endswith((".b", ".gamma", ".beta"))], scale=0.3)
    x = rng.normal(size=(2, 3, 8))
    R = rng.normal(size=(2, 3, 8))

    def forward():
        y, c = transformer_layer_forward(store, "enc.l0", x, cfg.n_heads)
        return _projection_loss(y, R), c

    def backward(c):
        return {"x": transformer_layer_backward(store, "enc.l0", c, R)}

    return store, {"x": x}, forward, backward


def _case_lstm_stack(rng, seed):
    cfg = LstmStackConfig(n_layers=2, hidden=3, input_dim=2)
    store = init_parameters(cfg.layout("lstm"), seed, np.float64)
    _randomize(store, rng, [n for n in store if n.endswith((".h0", ".c0", ".b"))])
    z = rng.normal(size=(2, 4, 2))
    R = rng.normal(size=(2, 4, 3))

    def forward():
        y, c = lstm_stack_forward(store, "lstm", z, cfg.n_layers)
        return _projection_loss(y, R), c

    def backward(c):
        return {"z": lstm_stack_backward(store, "lstm", c, R)}

    return store, {"z": z}, forward, backward


def _case_style_encoder(rng, seed):
    cfg = StyleEncoderConfig(window=4, style_dim=8, n_layers=1, n_heads=2, ff_dim=8)
    store = init_parameters(cfg.layout(), seed, np.float64)
    _randomize(store, rng, [n for n in store if n.endswith(".b")], scale=0.3)
    x = rng.normal(size=(4, 4, 7))
    tau = 0.5

    def forward():
        S, c = encode_forward(store, cfg, x)
        loss, dS = nt_xent_loss(S, tau)
        return loss, (c, dS)

    def backward(cache):
        c, dS = cache
        return {"windows": encode_backward(store, cfg, c, dS)}

    return store, {"windows": x}, forward, backward


def _case_generator(rng, seed):
    cfg = GenerationConfig(past=6, future=3, model_dim=4, style_dim=3, lam=0.7,
                           lstm_layers=2, lstm_hidden=5, feature_dim=4)
    store = init_parameters(cfg.layout(), seed, np.float64)
    _randomize(store, rng, [n for n in store if n.endswith((".h0", ".c0"))])
    past = rng.normal(size=(2, 6, 7))
    audio = rng.normal(size=(2, 6, 4))
    style = rng.normal(size=(2, 3))
    future = rng.normal(size=(2, 3, 7))

    def forward():
        Z, c_f = fuse_forward(store, cfg, audio, past, style)
        Y, c_p = predict_forward(store, cfg, Z)
        loss, _, dY = combined_loss_and_grad(Y, future, cfg.lam)
        return loss, (c_f, c_p, dY)

    def backward(cache):
        c_f, c_p, dY = cache
        dZ = predict_backward(store, cfg, c_p, dY)
        d_audio, d_motion, d_style = fuse_backward(store, cfg, c_f, dZ)
        return {"audio": d_audio, "past": d_motion, "style": d_style}

    return store, {"audio": audio, "past": past, "style": style}, forward, backward


CASES = {
    "linear": _case_linear,
    "attention": _case_attention,
    "transformer_layer": _case_transformer_layer,
    "lstm_stack": _case_lstm_stack,
    "style_encoder": _case_style_encoder,
    "generator": _case_generator,
}


def finite_difference_check(selector: str, seed: int = 0) -> GradCheckResult:
    """Compare analytic and central-difference gradients (f64, h=1e-5) for every
    parameter group and input of the selected composite."""
    if selector not in CASES:
        raise ValueError(f"unknown selector {selector!r}; choose from {SELECTORS}")

    rng = np.random.default_rng(seed)
    store, inputs, forward, backward = CASES[selector](rng, seed)

    store.zero_grad()
    _, cache = forward()
    d_inputs = backward(cache)

    def loss_fn():
        return forward()[0]

    result = GradCheckResult(selector=selector, threshold=THRESHOLDS[selector])
    for name in store:
        result.groups[name] = relative_error(store.grad(name), numeric_gradient(loss_fn, store[name]))
    for name, arr in inputs.items():
        result.groups[f"input:{name}"] = relative_error(d_inputs[name], numeric_gradient(loss_fn, arr))

    logger.info("gradcheck %s: max rel err %.3e (threshold %.0e)", selector, result.max_rel_error, result.threshold)
    return result


def run_all(seed: int = 0, selectors=SELECTORS) -> list[GradCheckResult]:
    return [finite_difference_check(s, seed) for s in selectors]
