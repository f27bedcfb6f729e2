"""Fully convolutional encoder/decoder with analytic gradients.

Encoder: four 3x3 stride-2 cross-correlation layers (zero padding 1), ReLU
between layers, so an [C, H, W] image maps to a latent grid of
[16, H/16, W/16] which is flattened row-major into a length-d code.
Decoder: four 3x3 stride-2 transpose-convolution layers (padding 1, output
padding 1, each exactly doubling the spatial extents), ReLU between layers
and Sigmoid on the output, so decoded pixels always lie in (0, 1).

Convolutions are computed as im2col + one BLAS matmul per layer; backward
passes are exact transposes of the forward linear maps. ReLU uses
subgradient 0 at 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from .ndtensor import ShapeError

STRIDE = 2
PAD = 1
KSIZE = 3

MAGIC = b"AEP1"

ENCODER_CHANNELS = (32, 64, 128, 16)
DECODER_CHANNELS = (256, 128, 64)  # final layer emits the image channels
INIT_STD = 0.1


@dataclass
class ConvLayerParams:
    """3x3 stride-2 convolution: kernels [out_ch, in_ch, 3, 3], bias [out_ch]."""

    kernels: np.ndarray
    bias: np.ndarray

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]


@dataclass
class TConvLayerParams:
    """3x3 stride-2 transpose convolution: kernels [in_ch, out_ch, 3, 3], bias [out_ch].

    With this layout a transpose layer sharing a kernel array with a
    convolution layer is exactly its adjoint.
    """

    kernels: np.ndarray
    bias: np.ndarray

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[1]


@dataclass
class AutoencoderParams:
    encoder: list  # 4 ConvLayerParams
    decoder: list  # 4 TConvLayerParams
    encoder_acts: tuple = ("relu", "relu", "relu", "linear")
    decoder_acts: tuple = ("relu", "relu", "relu", "sigmoid")

    @property
    def image_channels(self) -> int:
        return self.encoder[0].in_channels

    def latent_dim(self, height: int, width: int) -> int:
        return self.encoder[-1].out_channels * (height // 16) * (width // 16)


def init_autoencoder(image_channels: int, rng: np.random.Generator,
                     encoder_channels=ENCODER_CHANNELS,
                     decoder_channels=DECODER_CHANNELS) -> AutoencoderParams:
    """Gaussian N(0, 0.1) kernels, zero biases, drawn encoder-first in layer order.

    Channel widths are overridable so tests can build desk-size instances;
    production training always uses the defaults.
    """
    if image_channels not in (1, 3):
        raise ShapeError(f"image_channels must be 1 or 3, got {image_channels}")
    encoder = []
    c_in = image_channels
    for c_out in encoder_channels:
        k = rng.normal(0.0, INIT_STD, size=(c_out, c_in, KSIZE, KSIZE))
        encoder.append(ConvLayerParams(k, np.zeros(c_out)))
        c_in = c_out
    decoder = []
    c_in = encoder_channels[-1]
    for c_out in tuple(decoder_channels) + (image_channels,):
        k = rng.normal(0.0, INIT_STD, size=(c_in, c_out, KSIZE, KSIZE))
        decoder.append(TConvLayerParams(k, np.zeros(c_out)))
        c_in = c_out
    return AutoencoderParams(encoder, decoder)


def _activate(pre: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(pre, 0.0)
    if act == "sigmoid":
        return 1.0 / (1.0 + np.exp(-pre))
    if act == "linear":
        return pre
    raise ValueError(f"unknown activation {act!r}")


def _activation_grad(g: np.ndarray, post: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return g * (post > 0.0)
    if act == "sigmoid":
        return g * post * (1.0 - post)
    if act == "linear":
        return g
    raise ValueError(f"unknown activation {act!r}")


# ---------------------------------------------------------------------------
# single-layer forward/backward (batched)
# ---------------------------------------------------------------------------

def _conv_fwd(x: np.ndarray, layer: ConvLayerParams):
    b, c_in, h, w = x.shape
    if c_in != layer.in_channels:
        raise ShapeError(f"conv: input has {c_in} channels, layer expects {layer.in_channels}")
    oh = kern.out_extent(h, KSIZE, STRIDE, PAD)
    ow = kern.out_extent(w, KSIZE, STRIDE, PAD)
    cols = kern.im2col(x, KSIZE, STRIDE, PAD).reshape(b * oh * ow, c_in * KSIZE * KSIZE)
    wmat = layer.kernels.reshape(layer.out_channels, -1)
    pre = cols @ wmat.T + layer.bias
    pre = np.ascontiguousarray(pre.reshape(b, oh, ow, -1).transpose(0, 3, 1, 2))
    return pre, cols


def _conv_bwd(g: np.ndarray, cols: np.ndarray, layer: ConvLayerParams, h: int, w: int):
    b, c_out, oh, ow = g.shape
    gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, c_out)
    g_bias = gmat.sum(axis=0)
    g_kern = (gmat.T @ cols).reshape(layer.kernels.shape)
    gcols = gmat @ layer.kernels.reshape(c_out, -1)
    gx = kern.col2im(gcols.reshape(b, oh, ow, layer.in_channels, KSIZE, KSIZE),
                     h, w, STRIDE, PAD)
    return gx, g_kern, g_bias


def _tconv_fwd(x: np.ndarray, layer: TConvLayerParams):
    b, c_in, h, w = x.shape
    if c_in != layer.in_channels:
        raise ShapeError(f"tconv: input has {c_in} channels, layer expects {layer.in_channels}")
    x2d = np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(b * h * w, c_in)
    cols = x2d @ layer.kernels.reshape(c_in, -1)
    pre = kern.col2im(cols.reshape(b, h, w, layer.out_channels, KSIZE, KSIZE),
                      2 * h, 2 * w, STRIDE, PAD)
    pre += layer.bias[None, :, None, None]
    return pre, x2d


def _tconv_bwd(g: np.ndarray, x2d: np.ndarray, layer: TConvLayerParams, h: int, w: int):
    b = g.shape[0]
    gcols = kern.im2col(g, KSIZE, STRIDE, PAD).reshape(b * h * w, -1)
    g_bias = g.sum(axis=(0, 2, 3))
    g_kern = (x2d.T @ gcols).reshape(layer.kernels.shape)
    gx2d = gcols @ layer.kernels.reshape(layer.in_channels, -1).T
    gx = np.ascontiguousarray(
        gx2d.reshape(b, h, w, layer.in_channels).transpose(0, 3, 1, 2))
    return gx, g_kern, g_bias


def conv2d_forward(x: np.ndarray, layer: ConvLayerParams) -> np.ndarray:
    """Cross-correlate one [C_in, H, W] image: zero pad 1, stride 2, plus bias."""
    if x.ndim != 3:
        raise ShapeError(f"conv2d_forward expects [C,H,W], got shape {x.shape}")
    pre, _ = _conv_fwd(x[None], layer)
    return pre[0]


def tconv2d_forward(x: np.ndarray, layer: TConvLayerParams) -> np.ndarray:
    """Transpose convolution of one [C_in, h, w] map; spatial extents double."""
    if x.ndim != 3:
        raise ShapeError(f"tconv2d_forward expects [C,h,w], got shape {x.shape}")
    pre, _ = _tconv_fwd(x[None], layer)
    return pre[0]


# ---------------------------------------------------------------------------
# whole-network forward/backward with tape
# ---------------------------------------------------------------------------

def encode_batch(params: AutoencoderParams, y: np.ndarray):
    """[B,C,H,W] measurements -> ([B,d] codes, tape for the backward pass)."""
    b, c, h, w = y.shape
    if h % 16 or w % 16:
        raise ShapeError(f"image extents must be divisible by 16, got {h}x{w}")
    tape = {"input_shape": y.shape, "layers": []}
    x = y
    for layer, act in zip(params.encoder, params.encoder_acts):
        in_hw = x.shape[2:]
        pre, cols = _conv_fwd(x, layer)
        x = _activate(pre, act)
        tape["layers"].append({"cols": cols, "post": x, "act": act, "in_hw": in_hw})
    tape["latent_shape"] = x.shape
    return x.reshape(b, -1), tape


def encode_backward(params: AutoencoderParams, tape: dict, g_z: np.ndarray):
    """Gradients of sum(g_z * z) w.r.t. encoder parameters and the input."""
    g = g_z.reshape(tape["latent_shape"])
    grads = [None] * len(params.encoder)
    for i in range(len(params.encoder) - 1, -1, -1):
        rec = tape["layers"][i]
        g = _activation_grad(g, rec["post"], rec["act"])
        h, w = rec["in_hw"]
        g, g_kern, g_bias = _conv_bwd(g, rec["cols"], params.encoder[i], h, w)
        grads[i] = (g_kern, g_bias)
    return grads, g


def decode_batch(params: AutoencoderParams, z: np.ndarray, height: int, width: int):
    """[B,d] codes -> ([B,C,height,width] images in (0,1), tape)."""
    b = z.shape[0]
    c0 = params.decoder[0].in_channels
    h, w = height // 16, width // 16
    if z.shape[1] != c0 * h * w:
        raise ShapeError(f"latent length {z.shape[1]} does not match {c0}x{h}x{w}")
    tape = {"latent_shape": (b, c0, h, w), "layers": []}
    x = z.reshape(b, c0, h, w)
    for layer, act in zip(params.decoder, params.decoder_acts):
        in_hw = x.shape[2:]
        pre, x2d = _tconv_fwd(x, layer)
        x = _activate(pre, act)
        tape["layers"].append({"x2d": x2d, "post": x, "act": act, "in_hw": in_hw})
    return x, tape


def decode_backward(params: AutoencoderParams, tape: dict, g_img: np.ndarray):
    """Gradients of sum(g_img * decoded) w.r.t. decoder parameters and the code."""
    g = g_img
    grads = [None] * len(params.decoder)
    for i in range(len(params.decoder) - 1, -1, -1):
        rec = tape["layers"][i]
        g = _activation_grad(g, rec["post"], rec["act"])
        h, w = rec["in_hw"]
        g, g_kern, g_bias = _tconv_bwd(g, rec["x2d"], params.decoder[i], h, w)
        grads[i] = (g_kern, g_bias)
    return grads, g.reshape(g.shape[0], -1)


def encode(params: AutoencoderParams, y_image: np.ndarray) -> np.ndarray:
    """One [C,H,W] measurement image -> latent code of length d."""
    z, _ = encode_batch(params, y_image[None])
    return z[0]


def decode(params: AutoencoderParams, z: np.ndarray, height: int, width: int) -> np.ndarray:
    """One latent code -> [C,height,width] image with entries in (0,1)."""
    x, _ = decode_batch(params, z[None], height, width)
    return x[0]


# ---------------------------------------------------------------------------
# parameter flattening and checkpoints
# ---------------------------------------------------------------------------

def param_arrays(params: AutoencoderParams) -> list:
    """All parameter arrays in a fixed order (encoder then decoder, kernel then bias)."""
    out = []
    for layer in list(params.encoder) + list(params.decoder):
        out.append(layer.kernels)
        out.append(layer.bias)
    return out


def grads_to_arrays(enc_grads: list, dec_grads: list) -> list:
    out = []
    for g_kern, g_bias in list(enc_grads) + list(dec_grads):
        out.append(g_kern)
        out.append(g_bias)
    return out


def save_params(params: AutoencoderParams, path) -> None:
    """Binary checkpoint: magic, layer count, then per-array rank/shape/data."""
    arrays = param_arrays(params)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.asarray([len(arrays)], dtype="<i8").tobytes())
        for arr in arrays:
            fh.write(np.asarray([arr.ndim], dtype="<i8").tobytes())
            fh.write(np.asarray(arr.shape, dtype="<i8").tobytes())
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path) -> AutoencoderParams:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not an autoencoder checkpoint")
        (n,) = np.frombuffer(fh.read(8), dtype="<i8")
        arrays = []
        for _ in range(n):
            (ndim,) = np.frombuffer(fh.read(8), dtype="<i8")
            shape = tuple(np.frombuffer(fh.read(8 * ndim), dtype="<i8"))
            count = int(np.prod(shape))
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            arrays.append(np.ascontiguousarray(data))
    if len(arrays) != 16:
        raise ValueError(f"{path}: expected 16 parameter arrays, found {len(arrays)}")
    encoder = [ConvLayerParams(arrays[2 * i], arrays[2 * i + 1]) for i in range(4)]
    decoder = [TConvLayerParams(arrays[8 + 2 * i], arrays[8 + 2 * i + 1]) for i in range(4)]
    return AutoencoderParams(encoder, decoder)
