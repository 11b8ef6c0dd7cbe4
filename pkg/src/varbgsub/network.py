"""Convolutional autoencoder with hand-rolled forward and backward passes.

The architecture family: four stride-2 5x5 convolutions (1 -> 64 -> 64 ->
64 -> 64 channels, each followed by tanh), a flatten, two fully-connected
layers around a 1-d bottleneck (tanh after each), a reshape back to the
64-channel spatial grid, and four stride-2 5x5 transposed convolutions
mirroring the encoder.  The last layer outputs ``0.5 * tanh`` so
reconstructions stay inside the normalized ``[-0.5, 0.5]`` intensity
range.  Input height and width must be divisible by 16 (four halvings).

Everything is plain numpy.  Batches are ``(n, c, h, w)`` arrays; a
network is a list of :class:`LayerSpec` plus a :class:`NetworkParams`
holding the tensors and Adam state.  ``forward`` returns the
reconstruction together with a cache consumed by ``backward``.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_LR = 1e-4

_CHECKPOINT_MAGIC = b"VBGSCKPT"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """Shape-checked description of one layer.

    ``in_shape``/``out_shape`` are per-sample shapes; stacking them must
    close: each layer's output shape is the next layer's input shape.
    """

    kind: str                      # conv | tconv | dense | tanh | flatten | reshape
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    output_padding: int = 0
    scale: float = 1.0             # output multiplier for tanh layers


def conv_spec(in_shape: tuple[int, int, int], out_ch: int, kernel: int = 5,
              stride: int = 2, padding: int = 2) -> LayerSpec:
    c, h, w = in_shape
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"convolution output collapses for input {in_shape}")
    return LayerSpec("conv", in_shape, (out_ch, oh, ow), kernel, stride, padding)


def tconv_spec(in_shape: tuple[int, int, int], out_ch: int, kernel: int = 5,
               stride: int = 2, padding: int = 2, output_padding: int = 1) -> LayerSpec:
    if output_padding >= stride:
        raise ValueError("output_padding must be smaller than stride")
    c, h, w = in_shape
    oh = (h - 1) * stride - 2 * padding + kernel + output_padding
    ow = (w - 1) * stride - 2 * padding + kernel + output_padding
    if oh < 1 or ow < 1:
        raise ValueError(f"transposed convolution output collapses for input {in_shape}")
    return LayerSpec("tconv", in_shape, (out_ch, oh, ow), kernel, stride, padding, output_padding)


def dense_spec(in_features: int, out_features: int) -> LayerSpec:
    return LayerSpec("dense", (in_features,), (out_features,))


def tanh_spec(shape: tuple[int, ...], scale: float = 1.0) -> LayerSpec:
    return LayerSpec("tanh", shape, shape, scale=scale)


def flatten_spec(in_shape: tuple[int, ...]) -> LayerSpec:
    return LayerSpec("flatten", in_shape, (int(np.prod(in_shape)),))


def reshape_spec(in_features: int, out_shape: tuple[int, ...]) -> LayerSpec:
    if int(np.prod(out_shape)) != in_features:
        raise ValueError(f"cannot reshape {in_features} features to {out_shape}")
    return LayerSpec("reshape", (in_features,), out_shape)


def validate_specs(specs: list[LayerSpec]) -> None:
    for a, b in zip(specs, specs[1:]):
        if a.out_shape != b.in_shape:
            raise ValueError(f"shape mismatch between layers: {a.out_shape} -> {b.in_shape}")


def build_network(h: int, w: int, bottleneck: int = 2048) -> list[LayerSpec]:
    """Autoencoder spec list for an ``(1, h, w)`` input.

    Four stride-2 downsamplings force divisibility by 16; for 576x704 the
    spatial grid at the bottleneck is 64x36x44.
    """
    if h % 16 or w % 16:
        raise ValueError(f"input size must be divisible by 16, got {h}x{w}")
    if h < 16 or w < 16:
        raise ValueError(f"input too small: {h}x{w}")
    specs: list[LayerSpec] = []
    shape = (1, h, w)
    for _ in range(4):
        conv = conv_spec(shape, 64)
        specs += [conv, tanh_spec(conv.out_shape)]
        shape = conv.out_shape
    grid = shape
    flat = int(np.prod(grid))
    specs += [
        flatten_spec(grid),
        dense_spec(flat, bottleneck),
        tanh_spec((bottleneck,)),
        dense_spec(bottleneck, flat),
        tanh_spec((flat,)),
        reshape_spec(flat, grid),
    ]
    for i in range(4):
        out_ch = 1 if i == 3 else 64
        tconv = tconv_spec(shape if i == 0 else specs[-1].out_shape, out_ch)
        specs.append(tconv)
        specs.append(tanh_spec(tconv.out_shape, scale=0.5 if i == 3 else 1.0))
    validate_specs(specs)
    assert specs[-1].out_shape == (1, h, w)
    return specs


def weight_shapes(spec: LayerSpec) -> dict[str, tuple[int, ...]]:
    if spec.kind == "conv":
        return {
            "w": (spec.out_shape[0], spec.in_shape[0], spec.kernel, spec.kernel),
            "b": (spec.out_shape[0],),
        }
    if spec.kind == "tconv":
        return {
            "w": (spec.in_shape[0], spec.out_shape[0], spec.kernel, spec.kernel),
            "b": (spec.out_shape[0],),
        }
    if spec.kind == "dense":
        return {"w": (spec.out_shape[0], spec.in_shape[0]), "b": (spec.out_shape[0],)}
    return {}


def _fans(spec: LayerSpec) -> tuple[int, int]:
    if spec.kind in ("conv", "tconv"):
        k2 = spec.kernel * spec.kernel
        return spec.in_shape[0] * k2, spec.out_shape[0] * k2
    return spec.in_shape[0], spec.out_shape[0]


class NetworkParams:
    """Parameter tensors plus Adam state for a spec list."""

    def __init__(self, specs: list[LayerSpec], weights: list[dict[str, np.ndarray]], dtype=np.float32):
        self.specs = specs
        self.weights = weights
        self.dtype = np.dtype(dtype)
        self.adam_m = [{k: np.zeros_like(v) for k, v in layer.items()} for layer in weights]
        self.adam_v = [{k: np.zeros_like(v) for k, v in layer.items()} for layer in weights]
        self.step_count = 0

    @property
    def in_shape(self) -> tuple[int, ...]:
        return self.specs[0].in_shape

    def num_parameters(self) -> int:
        return sum(v.size for layer in self.weights for v in layer.values())

    def zero_like_grads(self) -> list[dict[str, np.ndarray]]:
        return [{k: np.zeros_like(v) for k, v in layer.items()} for layer in self.weights]


def xavier_init(specs: list[LayerSpec], seed: int = 0, dtype=np.float32) -> NetworkParams:
    """Uniform init scaled by fan-in + fan-out; biases zero; seed-reproducible."""
    validate_specs(specs)
    rng = np.random.default_rng(seed)
    weights = []
    for spec in specs:
        shapes = weight_shapes(spec)
        layer: dict[str, np.ndarray] = {}
        if shapes:
            fan_in, fan_out = _fans(spec)
            a = math.sqrt(6.0 / (fan_in + fan_out))
            layer["w"] = rng.uniform(-a, a, shapes["w"]).astype(dtype)
            layer["b"] = np.zeros(shapes["b"], dtype=dtype)
        weights.append(layer)
    return NetworkParams(specs, weights, dtype)


# ---------------------------------------------------------------------------
# Layer kernels.  Convolutions are evaluated as 25 shifted-slice
# contractions instead of one big im2col buffer; this keeps peak memory at
# a couple of activation maps while staying matmul-bound.
# ---------------------------------------------------------------------------


def _conv_forward(x, w, b, stride, padding):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    y = np.broadcast_to(b[None, :, None, None], (n, f, ho, wo)).copy()
    for u in range(k):
        for v in range(k):
            patch = xp[:, :, u : u + ho * stride : stride, v : v + wo * stride : stride]
            y += np.einsum("ncij,fc->nfij", patch, w[:, :, u, v], optimize=True)
    return y, xp


def _conv_backward(dout, xp, w, stride, padding, in_hw):
    n, f, ho, wo = dout.shape
    k = w.shape[2]
    h, wd = in_hw
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    for u in range(k):
        for v in range(k):
            patch = xp[:, :, u : u + ho * stride : stride, v : v + wo * stride : stride]
            dw[:, :, u, v] = np.einsum("nfij,ncij->fc", dout, patch, optimize=True)
            dxp[:, :, u : u + ho * stride : stride, v : v + wo * stride : stride] += np.einsum(
                "nfij,fc->ncij", dout, w[:, :, u, v], optimize=True
            )
    db = dout.sum(axis=(0, 2, 3))
    dx = dxp[:, :, padding : padding + h, padding : padding + wd]
    return dx, dw, db


def _tconv_forward(x, w, b, stride, padding, output_padding):
    n, c, h, wd = x.shape
    _, o, k, _ = w.shape
    ho = (h - 1) * stride - 2 * padding + k + output_padding
    wo = (wd - 1) * stride - 2 * padding + k + output_padding
    hf = max((h - 1) * stride + k, padding + ho)
    wf = max((wd - 1) * stride + k, padding + wo)
    full = np.zeros((n, o, hf, wf), dtype=x.dtype)
    for u in range(k):
        for v in range(k):
            full[:, :, u : u + h * stride : stride, v : v + wd * stride : stride] += np.einsum(
                "ncij,co->noij", x, w[:, :, u, v], optimize=True
            )
    y = full[:, :, padding : padding + ho, padding : padding + wo] + b[None, :, None, None]
    return y, x


def _tconv_backward(dout, x, w, stride, padding, output_padding):
    n, c, h, wd = x.shape
    _, o, k, _ = w.shape
    ho, wo = dout.shape[2], dout.shape[3]
    hf = max((h - 1) * stride + k, padding + ho)
    wf = max((wd - 1) * stride + k, padding + wo)
    dfull = np.zeros((n, o, hf, wf), dtype=dout.dtype)
    dfull[:, :, padding : padding + ho, padding : padding + wo] = dout
    dw = np.zeros_like(w)
    dx = np.zeros_like(x)
    for u in range(k):
        for v in range(k):
            sl = dfull[:, :, u : u + h * stride : stride, v : v + wd * stride : stride]
            dw[:, :, u, v] = np.einsum("ncij,noij->co", x, sl, optimize=True)
            dx += np.einsum("noij,co->ncij", sl, w[:, :, u, v], optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    return dx, dw, db


def forward(params: NetworkParams, batch: np.ndarray) -> tuple[np.ndarray, list]:
    """Run the network; returns the reconstruction and the backward cache."""
    x = np.asarray(batch, dtype=params.dtype)
    if x.shape[1:] != params.in_shape:
        raise ValueError(f"batch shape {x.shape[1:]} does not match network input {params.in_shape}")
    n = x.shape[0]
    caches: list = []
    for spec, layer in zip(params.specs, params.weights):
        if spec.kind == "conv":
            x, xp = _conv_forward(x, layer["w"], layer["b"], spec.stride, spec.padding)
            caches.append(xp)
        elif spec.kind == "tconv":
            x, xin = _tconv_forward(
                x, layer["w"], layer["b"], spec.stride, spec.padding, spec.output_padding
            )
            caches.append(xin)
        elif spec.kind == "dense":
            caches.append(x)
            x = x @ layer["w"].T + layer["b"]
        elif spec.kind == "tanh":
            t = np.tanh(x)
            caches.append(t)
            x = spec.scale * t if spec.scale != 1.0 else t
        elif spec.kind == "flatten":
            caches.append(None)
            x = x.reshape(n, -1)
        elif spec.kind == "reshape":
            caches.append(None)
            x = x.reshape((n,) + spec.out_shape)
        else:
            raise ValueError(f"unknown layer kind: {spec.kind}")
    return x, caches


def backward(params: NetworkParams, caches: list, grad_out: np.ndarray) -> list[dict[str, np.ndarray]]:
    """Reverse-mode gradients for every parameter tensor.

    ``caches`` must come from a matching :func:`forward` call on the same
    parameters.
    """
    if len(caches) != len(params.specs):
        raise ValueError("cache does not match the network (stale or truncated)")
    g = np.asarray(grad_out, dtype=params.dtype)
    if g.shape[1:] != params.specs[-1].out_shape:
        raise ValueError(
            f"gradient shape {g.shape[1:]} does not match network output "
            f"{params.specs[-1].out_shape}"
        )
    n = g.shape[0]
    grads: list[dict[str, np.ndarray]] = [dict() for _ in params.specs]
    for i in range(len(params.specs) - 1, -1, -1):
        spec = params.specs[i]
        layer = params.weights[i]
        cache = caches[i]
        if spec.kind == "conv":
            in_hw = spec.in_shape[1:]
            g, dw, db = _conv_backward(g, cache, layer["w"], spec.stride, spec.padding, in_hw)
            grads[i] = {"w": dw, "b": db}
        elif spec.kind == "tconv":
            g, dw, db = _tconv_backward(
                g, cache, layer["w"], spec.stride, spec.padding, spec.output_padding
            )
            grads[i] = {"w": dw, "b": db}
        elif spec.kind == "dense":
            grads[i] = {"w": g.T @ cache, "b": g.sum(axis=0)}
            g = g @ layer["w"]
        elif spec.kind == "tanh":
            t = cache
            g = g * (1.0 - t * t)
            if spec.scale != 1.0:
                g = g * spec.scale
        elif spec.kind == "flatten":
            g = g.reshape((n,) + spec.in_shape)
        elif spec.kind == "reshape":
            g = g.reshape(n, -1)
    return grads


def weighted_l1_loss(
    inputs: np.ndarray, recon: np.ndarray, weights: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Pixel-weighted L1 loss summed over the batch, and its gradient.

    ``weights`` is a per-pixel ``(h, w)`` map shared by every batch member
    and channel; None means uniform weights.  The gradient is with respect
    to the reconstruction, with sign(0) taken as 0.
    """
    inputs = np.asarray(inputs)
    recon = np.asarray(recon)
    if inputs.shape != recon.shape:
        raise ValueError(f"shape mismatch: inputs {inputs.shape}, recon {recon.shape}")
    diff = inputs - recon
    if weights is None:
        loss = float(np.abs(diff).sum())
        grad = -np.sign(diff)
    else:
        w = np.asarray(weights, dtype=diff.dtype)
        if w.shape != inputs.shape[-2:]:
            raise ValueError(f"weight map {w.shape} does not match frame {inputs.shape[-2:]}")
        w = w[None, None]
        loss = float((w * np.abs(diff)).sum())
        grad = -w * np.sign(diff)
    return loss, grad.astype(diff.dtype, copy=False)


def adam_step(params: NetworkParams, grads: list[dict[str, np.ndarray]], lr: float = DEFAULT_LR,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> NetworkParams:
    """One Adam update in place; skips (and logs) non-finite gradients."""
    for layer in grads:
        for g in layer.values():
            if not np.isfinite(g).all():
                logger.warning("non-finite gradients encountered; update skipped")
                return params
    params.step_count += 1
    t = params.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for layer_w, layer_g, layer_m, layer_v in zip(params.weights, grads, params.adam_m, params.adam_v):
        for key, g in layer_g.items():
            m = layer_m[key]
            v = layer_v[key]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            layer_w[key] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params


def save_checkpoint(params: NetworkParams, path) -> None:
    """Serialize specs, parameters, and optimizer state.

    Tensors are stored as little-endian float32 in layer order (weights,
    then first and second Adam moments); loading restores them bit-exactly
    for float32 networks.
    """
    header = {
        "dtype": "float32",
        "step_count": params.step_count,
        "specs": [asdict(s) for s in params.specs],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", _CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for group in (params.weights, params.adam_m, params.adam_v):
            for layer in group:
                for key in ("w", "b"):
                    if key in layer:
                        fh.write(np.ascontiguousarray(layer[key], dtype="<f4").tobytes())


def load_checkpoint(path) -> NetworkParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        specs = [
            LayerSpec(
                kind=d["kind"],
                in_shape=tuple(d["in_shape"]),
                out_shape=tuple(d["out_shape"]),
                kernel=d["kernel"],
                stride=d["stride"],
                padding=d["padding"],
                output_padding=d["output_padding"],
                scale=d["scale"],
            )
            for d in header["specs"]
        ]
        params = xavier_init(specs, seed=0, dtype=np.float32)

        def read_tensor(shape):
            count = int(np.prod(shape))
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise ValueError(f"{path}: truncated checkpoint")
            return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()

        for group in (params.weights, params.adam_m, params.adam_v):
            for spec, layer in zip(specs, group):
                for key, shape in weight_shapes(spec).items():
                    layer[key] = read_tensor(shape)
        params.step_count = int(header["step_count"])
    return params
