"""Dual-input convolutional encoder-decoder with hand-written backprop.

The network consumes a local patch and its global context patch. The global
patch is resized to the local size and channel-concatenated, giving a
6-channel input. A small U-Net-shaped encoder-decoder follows: per level
two 3x3 convs + ReLU and a 2x2 maxpool, a residual bottleneck, then a
mirrored decoder with nearest-neighbor upsampling and skip concatenation.
The fused 6-channel input is concatenated once more before the final 1x1
conv + sigmoid, so the prediction sees both views directly.

Batches are float64 arrays of shape (B, H, W, C); weights are (kh, kw,
cin, cout). The forward pass scales intensity inputs by 1/255.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import SeededRng, Tensor
from .errors import ConfigError, ShapeMismatchError, StaleCacheError
from .patching import PatchPair, resize_bilinear

_INPUT_SCALE = 1.0 / 255.0
# Clamp probabilities to the open interval (0, 1) at the float64 boundary.
_PROB_MIN = 5e-324
_PROB_MAX = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class ModelConfig:
    patch_size: int
    levels: int = 3
    base_channels: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.patch_size < 1 or self.patch_size % (2**self.levels) != 0:
            raise ValueError(
                f"patch_size {self.patch_size} must be divisible by 2^levels = {2**self.levels}"
            )


class ConvLayer:
    """3x3 (or 1x1) same-padding convolution parameters."""

    def __init__(self, name: str, kernel: int, cin: int, cout: int, rng: SeededRng):
        fan_in = kernel * kernel * cin
        self.name = name
        self.kernel = kernel
        self.weight = Tensor(
            rng.normal(0.0, math.sqrt(2.0 / fan_in), (kernel, kernel, cin, cout))
        )
        self.bias = Tensor(np.zeros(cout, dtype=np.float64))


class Model:
    """Parameter container; all computation lives in forward/backward."""

    def __init__(self, config: ModelConfig, enc, bottleneck, dec, head):
        self.config = config
        self.enc = enc  # [(conv_a, conv_b)] per level, shallow to deep
        self.bottleneck = bottleneck  # (conv_a, conv_b), residual around both
        self.dec = dec  # [(conv_a, conv_b)] indexed by level, shallow to deep
        self.head = head  # 1x1 conv to a single logit channel

    def conv_layers(self) -> list[ConvLayer]:
        """All conv layers in declaration (checkpoint) order."""
        layers = []
        for pair in self.enc:
            layers.extend(pair)
        layers.extend(self.bottleneck)
        for lvl in reversed(range(len(self.dec))):
            layers.extend(self.dec[lvl])
        layers.append(self.head)
        return layers

    def parameters(self) -> list[Tensor]:
        params = []
        for layer in self.conv_layers():
            params.append(layer.weight)
            params.append(layer.bias)
        return params

    def parameter_names(self) -> list[str]:
        names = []
        for layer in self.conv_layers():
            names.append(f"{layer.name}.weight")
            names.append(f"{layer.name}.bias")
        return names

    def _param_ids(self) -> tuple[int, ...]:
        return tuple(id(p.data) for p in self.parameters())


def build_model(config: ModelConfig) -> Model:
    """Deterministically initialize a model from its config seed.

    He fan-in normal for conv weights, zero biases; draws happen in
    declaration order so the same (config, seed) is bit-reproducible.
    """
    rng = SeededRng(config.seed)
    levels = config.levels
    enc = []
    c_prev = 6
    for lvl in range(levels):
        c = config.base_channels * 2**lvl
        enc.append(
            (
                ConvLayer(f"enc{lvl}a", 3, c_prev, c, rng),
                ConvLayer(f"enc{lvl}b", 3, c, c, rng),
            )
        )
        c_prev = c
    bottleneck = (
        ConvLayer("bottleneck_a", 3, c_prev, c_prev, rng),
        ConvLayer("bottleneck_b", 3, c_prev, c_prev, rng),
    )
    dec: list = [None] * levels
    up_c = c_prev
    for lvl in reversed(range(levels)):
        skip_c = config.base_channels * 2**lvl
        dec[lvl] = (
            ConvLayer(f"dec{lvl}a", 3, up_c + skip_c, skip_c, rng),
            ConvLayer(f"dec{lvl}b", 3, skip_c, skip_c, rng),
        )
        up_c = skip_c
    head = ConvLayer("head", 1, config.base_channels + 6, 1, rng)
    return Model(config, enc, bottleneck, dec, head)


def count_parameters(model: Model) -> int:
    return sum(p.data.size for p in model.parameters())


# ---------------------------------------------------------------------------
# Primitive ops


def _conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    kh, kw, cin, cout = weight.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (B, H, W, cin, kh, kw)
    b, h, w = win.shape[:3]
    cols = win.reshape(b * h * w, cin * kh * kw)
    wmat = weight.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
    return (cols @ wmat + bias).reshape(b, h, w, cout)


def _conv_backward(x, weight, dout, need_dx=True):
    kh, kw, cin, cout = weight.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    b, h, w = win.shape[:3]
    cols = win.reshape(b * h * w, cin * kh * kw)
    dmat = dout.reshape(b * h * w, cout)
    dw = (cols.T @ dmat).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
    db = dout.sum(axis=(0, 1, 2))
    dx = None
    if need_dx:
        # Gradient wrt input = same-padding conv with the spatially flipped,
        # channel-transposed kernel.
        w_flip = weight[::-1, ::-1].transpose(0, 1, 3, 2)
        dx = _conv_forward(dout, np.ascontiguousarray(w_flip), np.zeros(cin))
    return dx, dw, db


def _maxpool_forward(x):
    b, h, w, c = x.shape
    xr = (
        x.reshape(b, h // 2, 2, w // 2, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(b, h // 2, w // 2, c, 4)
    )
    idx = xr.argmax(axis=4)
    y = np.take_along_axis(xr, idx[..., None], axis=4)[..., 0]
    return y, idx


def _maxpool_backward(dout, idx, in_shape):
    b, h, w, c = in_shape
    buf = np.zeros((b, h // 2, w // 2, c, 4), dtype=np.float64)
    np.put_along_axis(buf, idx[..., None], dout[..., None], axis=4)
    return (
        buf.reshape(b, h // 2, w // 2, c, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(b, h, w, c)
    )


def _upsample_forward(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def _upsample_backward(dout):
    b, h2, w2, c = dout.shape
    return dout.reshape(b, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4))


def _sigmoid(z):
    # Overflow-free in both tails; output clamped strictly inside (0, 1).
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, _PROB_MIN, _PROB_MAX)


def _sigmoid_grad(z):
    # Derivative computed from z directly; stays nonzero out to |z| ~ 745,
    # so saturated pixels keep a usable descent direction.
    e = np.exp(-np.abs(z))
    return e / (1.0 + e) ** 2


# ---------------------------------------------------------------------------
# Forward / backward


class ForwardCache:
    """Per-layer activations needed by backward, bound to one forward call."""

    def __init__(self, model: Model):
        self.model_id = id(model)
        self.param_ids = model._param_ids()
        self.x0 = None
        self.enc = []
        self.bott = None
        self.dec = None
        self.head = None
        self.probs = None


def _check_batch(name, arr):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ShapeMismatchError(f"{name} batch must be (B, H, W, 3), got {arr.shape}")
    if arr.shape[1] != arr.shape[2]:
        raise ShapeMismatchError(f"{name} patches must be square, got {arr.shape}")
    return arr


def forward(model: Model, local_batch: np.ndarray, global_batch: np.ndarray):
    """Run the network; returns (probabilities in (0, 1), cache for backward)."""
    local = _check_batch("local", local_batch)
    glob = _check_batch("global", global_batch)
    p = model.config.patch_size
    if local.shape[1] != p:
        raise ShapeMismatchError(f"local patch size {local.shape[1]} != config {p}")
    if glob.shape[0] != local.shape[0]:
        raise ShapeMismatchError(
            f"batch sizes differ: local {local.shape[0]}, global {glob.shape[0]}"
        )
    batch = local.shape[0]
    cache = ForwardCache(model)

    if glob.shape[1] == p:
        g_res = glob
    else:
        g_res = np.stack([resize_bilinear(glob[i], p, p) for i in range(batch)])
    x0 = np.concatenate([local, g_res], axis=3) * _INPUT_SCALE
    cache.x0 = x0

    x = x0
    for conv_a, conv_b in model.enc:
        ya = np.maximum(_conv_forward(x, conv_a.weight.data, conv_a.bias.data), 0.0)
        yb = np.maximum(_conv_forward(ya, conv_b.weight.data, conv_b.bias.data), 0.0)
        pooled, idx = _maxpool_forward(yb)
        cache.enc.append({"x_in": x, "ya": ya, "yb": yb, "pool_idx": idx})
        x = pooled

    conv_a, conv_b = model.bottleneck
    b_ya = np.maximum(_conv_forward(x, conv_a.weight.data, conv_a.bias.data), 0.0)
    b_yb = np.maximum(_conv_forward(b_ya, conv_b.weight.data, conv_b.bias.data), 0.0)
    cache.bott = {"x_in": x, "ya": b_ya, "yb": b_yb}
    x = b_yb + x  # identity skip around the bottleneck

    levels = model.config.levels
    cache.dec = [None] * levels
    for lvl in reversed(range(levels)):
        up = _upsample_forward(x)
        cat = np.concatenate([up, cache.enc[lvl]["yb"]], axis=3)
        conv_a, conv_b = model.dec[lvl]
        d_ya = np.maximum(_conv_forward(cat, conv_a.weight.data, conv_a.bias.data), 0.0)
        d_yb = np.maximum(_conv_forward(d_ya, conv_b.weight.data, conv_b.bias.data), 0.0)
        cache.dec[lvl] = {"cat": cat, "ya": d_ya, "yb": d_yb, "up_channels": up.shape[3]}
        x = d_yb

    hcat = np.concatenate([x0, x], axis=3)
    z = _conv_forward(hcat, model.head.weight.data, model.head.bias.data)
    probs = _sigmoid(z)
    cache.head = {"hcat": hcat, "z": z}
    cache.probs = probs
    return probs, cache


def backward(model: Model, cache: ForwardCache, output_grad: np.ndarray) -> list[np.ndarray]:
    """Analytic gradients of every parameter for a sum-over-batch objective.

    Returns grads aligned with model.parameters() and stores each on the
    parameter's grad slot.
    """
    if cache.model_id != id(model) or cache.param_ids != model._param_ids():
        raise StaleCacheError("cache does not match the model's current parameters")
    dout = np.ascontiguousarray(output_grad, dtype=np.float64)
    if dout.shape != cache.probs.shape:
        raise ShapeMismatchError(
            f"output_grad shape {dout.shape} != probs shape {cache.probs.shape}"
        )

    grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    levels = model.config.levels

    dz = dout * _sigmoid_grad(cache.head["z"])
    dhcat, dw, db = _conv_backward(cache.head["hcat"], model.head.weight.data, dz)
    grads[model.head.name] = (dw, db)
    d = dhcat[..., 6:]  # the first 6 channels are the fused input

    d_skip = [None] * levels
    for lvl in range(levels):
        c = cache.dec[lvl]
        conv_a, conv_b = model.dec[lvl]
        dzb = d * (c["yb"] > 0)
        d_ya, dw, db = _conv_backward(c["ya"], conv_b.weight.data, dzb)
        grads[conv_b.name] = (dw, db)
        dza = d_ya * (c["ya"] > 0)
        d_cat, dw, db = _conv_backward(c["cat"], conv_a.weight.data, dza)
        grads[conv_a.name] = (dw, db)
        d_skip[lvl] = d_cat[..., c["up_channels"] :]
        d = _upsample_backward(d_cat[..., : c["up_channels"]])

    bc = cache.bott
    conv_a, conv_b = model.bottleneck
    dzb = d * (bc["yb"] > 0)
    d_ya, dw, db = _conv_backward(bc["ya"], conv_b.weight.data, dzb)
    grads[conv_b.name] = (dw, db)
    dza = d_ya * (bc["ya"] > 0)
    d_conv_in, dw, db = _conv_backward(bc["x_in"], conv_a.weight.data, dza)
    grads[conv_a.name] = (dw, db)
    d_pool = d + d_conv_in  # identity skip adds the incoming gradient

    for lvl in reversed(range(levels)):
        ec = cache.enc[lvl]
        conv_a, conv_b = model.enc[lvl]
        d_yb = _maxpool_backward(d_pool, ec["pool_idx"], ec["yb"].shape) + d_skip[lvl]
        dzb = d_yb * (ec["yb"] > 0)
        d_ya, dw, db = _conv_backward(ec["ya"], conv_b.weight.data, dzb)
        grads[conv_b.name] = (dw, db)
        dza = d_ya * (ec["ya"] > 0)
        d_x, dw, db = _conv_backward(ec["x_in"], conv_a.weight.data, dza, need_dx=lvl > 0)
        grads[conv_a.name] = (dw, db)
        d_pool = d_x

    out = []
    for layer in model.conv_layers():
        dw, db = grads[layer.name]
        layer.weight.grad = dw
        layer.bias.grad = db
        out.append(dw)
        out.append(db)
    return out


def predict_patch(model: Model, pair: PatchPair) -> np.ndarray:
    """Probability raster for one local/global pair (no cache retained)."""
    if pair.patch_size != model.config.patch_size:
        raise ShapeMismatchError(
            f"pair patch size {pair.patch_size} != config {model.config.patch_size}"
        )
    probs, _ = forward(model, pair.local[None], pair.global_raw[None])
    return probs[0]


# ---------------------------------------------------------------------------
# Checkpoints: one-line JSON header + raw little-endian float64 parameters
# in declaration order.

_CHECKPOINT_FORMAT = "histoseg-checkpoint-v1"


def save_model(model: Model, path) -> None:
    params = model.parameters()
    header = {
        "format": _CHECKPOINT_FORMAT,
        "config": {
            "patch_size": model.config.patch_size,
            "levels": model.config.levels,
            "base_channels": model.config.base_channels,
            "seed": model.config.seed,
        },
        "params": [
            {"name": name, "shape": list(p.shape)}
            for name, p in zip(model.parameter_names(), params)
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    newline = blob.find(b"\n")
    if newline < 0:
        raise ConfigError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: unreadable checkpoint header: {exc}") from exc
    if header.get("format") != _CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: unknown checkpoint format {header.get('format')!r}")
    config = ModelConfig(**header["config"])
    model = build_model(config)
    params = model.parameters()
    names = model.parameter_names()
    if [e["name"] for e in header["params"]] != names:
        raise ConfigError(f"{path}: checkpoint parameter list does not match architecture")
    data = blob[newline + 1 :]
    offset = 0
    for entry, param in zip(header["params"], params):
        shape = tuple(entry["shape"])
        if shape != param.shape:
            raise ConfigError(f"{path}: shape mismatch for {entry['name']}")
        nbytes = param.data.size * 8
        chunk = data[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ConfigError(f"{path}: checkpoint truncated at {entry['name']}")
        param.data = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise ConfigError(f"{path}: trailing bytes after parameters")
    return model
