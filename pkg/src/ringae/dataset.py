"""Attribute-factored image sets: synthetic generation, disk I/O, corruption.

A structured dataset is an image collection indexed by a Cartesian product of
attribute values; flat sample order is row-major over the attribute dims.
The synthetic generator renders glyph images (shape x foreground x
position-or-scale) with integer rasterization only, so renders are exactly
reproducible across platforms.

Recovery code never sees ground truth: it receives an ObservedSet holding
only measurements, operators and attribute bookkeeping.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, replace

import numpy as np

from . import measurement as meas
from . import tensor_ring as tr
from .metrics import psnr
from .ndtensor import ShapeError

MSR_MAGIC = b"MSR1"

GLYPH_NAMES = ("disk", "square", "triangle", "cross", "ring", "diamond",
               "halfdisk", "frame")
BACKGROUND = 0.45

DENOISE = "denoise"
INPAINT = "inpaint"


@dataclass
class ObservedSet:
    """What recovery is allowed to see: measurements, operators, attributes."""

    attribute_dims: tuple
    measurements: list
    ops: list
    channels: int
    height: int
    width: int

    @property
    def num_samples(self) -> int:
        return int(np.prod(self.attribute_dims))

    def multi_indices(self):
        return tr.all_multi_indices(self.attribute_dims)


@dataclass
class StructuredDataset:
    attribute_dims: tuple
    channels: int
    height: int
    width: int
    images: list | None = None
    measurements: list | None = None
    ops: list | None = None
    task: str | None = None
    input_psnr: float | None = None

    @property
    def num_samples(self) -> int:
        return int(np.prod(self.attribute_dims))

    def multi_indices(self):
        return tr.all_multi_indices(self.attribute_dims)

    def observations(self) -> ObservedSet:
        if self.measurements is None or self.ops is None:
            raise ValueError("dataset has no measurements; corrupt it first")
        return ObservedSet(self.attribute_dims, self.measurements, self.ops,
                           self.channels, self.height, self.width)


# ---------------------------------------------------------------------------
# synthetic rendering
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    dims: tuple = (4, 5, 5)      # (glyph shapes, foreground levels, positions/scales)
    size: int = 64
    channels: int = 1
    variation: str = "position"  # what attribute 3 varies


def _glyph_mask(glyph: int, size: int, center, rad: int) -> np.ndarray:
    cy, cx = center
    dr = np.arange(size, dtype=np.int64)[:, None] - cy
    dc = np.arange(size, dtype=np.int64)[None, :] - cx
    adr, adc = np.abs(dr), np.abs(dc)
    r2 = dr * dr + dc * dc
    name = GLYPH_NAMES[glyph]
    if name == "disk":
        return r2 <= rad * rad
    if name == "square":
        return np.maximum(adr, adc) <= rad
    if name == "triangle":
        t = dr + rad
        return (t >= 0) & (t <= 2 * rad) & (2 * adc <= t)
    if name == "cross":
        arm = max(1, rad // 3)
        return ((adr <= arm) & (adc <= rad)) | ((adc <= arm) & (adr <= rad))
    if name == "ring":
        inner = (3 * rad) // 4
        return (r2 <= rad * rad) & (r2 >= inner * inner)
    if name == "diamond":
        return adr + adc <= rad
    if name == "halfdisk":
        return (r2 <= rad * rad) & (dc <= 0)
    if name == "frame":
        t = max(2, rad // 3)
        return (np.maximum(adr, adc) <= rad) & (np.maximum(adr, adc) > rad - t)
    raise ValueError(f"unknown glyph {glyph}")


def _foreground(j: int, count: int, channels: int) -> np.ndarray:
    """Evenly spaced gray levels, or an evenly spaced hue wheel for color."""
    if channels == 1:
        levels = np.linspace(0.55, 0.95, count)
        return np.asarray([levels[j]])
    h6 = 6.0 * j / count
    frac = 1.0 - abs(h6 % 2.0 - 1.0)
    sector = int(h6) % 6
    rgb = [(1.0, frac, 0.0), (frac, 1.0, 0.0), (0.0, 1.0, frac),
           (0.0, frac, 1.0), (frac, 0.0, 1.0), (1.0, 0.0, frac)][sector]
    return 0.35 + 0.6 * np.asarray(rgb)


def generate_synthetic(spec: SyntheticSpec, rng=None) -> StructuredDataset:
    """Deterministic renderer; the rng argument is accepted but never consulted."""
    i1, i2, i3 = spec.dims
    if not (1 <= i1 <= len(GLYPH_NAMES)):
        raise ShapeError(f"at most {len(GLYPH_NAMES)} glyph shapes are supported, got {i1}")
    if min(spec.dims) < 1:
        raise ShapeError(f"attribute extents must be >= 1, got {spec.dims}")
    if spec.size % 16:
        raise ShapeError(f"image size must be divisible by 16, got {spec.size}")
    if spec.channels not in (1, 3):
        raise ShapeError(f"channels must be 1 or 3, got {spec.channels}")
    if spec.variation not in ("position", "scale"):
        raise ValueError(f"variation must be 'position' or 'scale', got {spec.variation!r}")

    size = spec.size
    base_rad = size // 4
    spread = size // 8
    images = []
    for a1 in range(i1):
        for a2 in range(i2):
            fg = _foreground(a2, i2, spec.channels)
            for a3 in range(i3):
                if spec.variation == "position":
                    off = 0 if i3 == 1 else (2 * spread * a3) // (i3 - 1) - spread
                    center = (size // 2 + off, size // 2 + off)
                    rad = base_rad
                else:
                    rmin = size // 8
                    rad = rmin if i3 == 1 else rmin + ((base_rad - rmin) * a3) // (i3 - 1)
                    center = (size // 2, size // 2)
                mask = _glyph_mask(a1, size, center, rad)
                img = np.full((spec.channels, size, size), BACKGROUND)
                img[:, mask] = fg[:, None]
                images.append(img)
    return StructuredDataset(attribute_dims=(i1, i2, i3), channels=spec.channels,
                             height=size, width=size, images=images)


# ---------------------------------------------------------------------------
# PGM/PPM I/O (binary, 8-bit)
# ---------------------------------------------------------------------------

def _write_pnm(path, img: np.ndarray) -> None:
    c, h, w = img.shape
    quant = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        if c == 1:
            fh.write(f"P5\n{w} {h}\n255\n".encode())
            fh.write(quant[0].tobytes())
        else:
            fh.write(f"P6\n{w} {h}\n255\n".encode())
            fh.write(np.ascontiguousarray(quant.transpose(1, 2, 0)).tobytes())


def _read_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    m = re.match(rb"(P[56])\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise ValueError(f"{path}: malformed PNM header")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    c = 1 if magic == b"P5" else 3
    raw = data[m.end():]
    if len(raw) < c * h * w:
        raise ValueError(f"{path}: truncated pixel data")
    pix = np.frombuffer(raw[:c * h * w], dtype=np.uint8)
    if c == 1:
        img = pix.reshape(1, h, w).astype(np.float64)
    else:
        img = pix.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64)
    return img / 255.0


def _image_name(multi, channels: int) -> str:
    ext = "pgm" if channels == 1 else "ppm"
    return "img_" + "_".join(str(i) for i in multi) + "." + ext


def save_directory(ds: StructuredDataset, path) -> None:
    """Manifest plus one 8-bit PGM/PPM per ground-truth image; measurements
    (when present) go to a raw float64 sidecar so corruption survives exactly."""
    os.makedirs(path, exist_ok=True)
    dims = ds.attribute_dims
    with open(os.path.join(path, "manifest.txt"), "w") as fh:
        fh.write(f"{len(dims)} " + " ".join(str(e) for e in dims)
                 + f" {ds.height} {ds.width} {ds.channels}\n")
    if ds.images is not None:
        for multi, img in zip(ds.multi_indices(), ds.images):
            _write_pnm(os.path.join(path, _image_name(multi, ds.channels)), img)
    if ds.measurements is not None:
        save_measurements(os.path.join(path, "measurements.bin"), ds.measurements)
        meas.save_sidecar(os.path.join(path, "corruption.txt"), dims,
                          ds.multi_indices(), ds.ops)


def load_directory(path) -> StructuredDataset:
    manifest = os.path.join(path, "manifest.txt")
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"{path}: manifest.txt not found")
    with open(manifest) as fh:
        parts = fh.readline().split()
    k = int(parts[0])
    if len(parts) != k + 4:
        raise ValueError(f"{manifest}: expected 'K I_1 .. I_K H W C'")
    dims = tuple(int(p) for p in parts[1:1 + k])
    h, w, c = int(parts[k + 1]), int(parts[k + 2]), int(parts[k + 3])
    ds = StructuredDataset(attribute_dims=dims, channels=c, height=h, width=w)
    indices = ds.multi_indices()
    images = []
    for multi in indices:
        img_path = os.path.join(path, _image_name(multi, c))
        if not os.path.exists(img_path):
            raise FileNotFoundError(f"{path}: missing image for index {multi}")
        img = _read_pnm(img_path)
        if img.shape != (c, h, w):
            raise ValueError(f"{img_path}: shape {img.shape} disagrees with manifest")
        images.append(img)
    ds.images = images
    msr = os.path.join(path, "measurements.bin")
    sidecar = os.path.join(path, "corruption.txt")
    if os.path.exists(msr) and os.path.exists(sidecar):
        ds.measurements = load_measurements(msr, (c, h, w))
        rows, block = meas.load_sidecar(sidecar, dims)
        ops = []
        for multi, origin, sigma in rows:
            if origin is None:
                ops.append(meas.noisy_op(sigma))
            else:
                ops.append(meas.block_mask_op((c, h, w), origin, block))
        ds.ops = ops
        ds.task = INPAINT if rows and rows[0][1] is not None else DENOISE
    return ds


def save_measurements(path, measurements: list) -> None:
    with open(path, "wb") as fh:
        fh.write(MSR_MAGIC)
        fh.write(np.asarray([len(measurements)], dtype="<i8").tobytes())
        for y in measurements:
            fh.write(np.ascontiguousarray(y, dtype="<f8").tobytes())


def load_measurements(path, sample_shape) -> list:
    count = int(np.prod(sample_shape))
    with open(path, "rb") as fh:
        if fh.read(4) != MSR_MAGIC:
            raise ValueError(f"{path}: not a measurements file")
        (n,) = np.frombuffer(fh.read(8), dtype="<i8")
        out = []
        for _ in range(n):
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if data.size != count:
                raise ValueError(f"{path}: truncated measurement data")
            out.append(np.ascontiguousarray(data).reshape(sample_shape))
    return out


# ---------------------------------------------------------------------------
# corruption
# ---------------------------------------------------------------------------

def corrupt_dataset(ds: StructuredDataset, task: str, seed: int,
                    snr_db: float = 20.0, block: int = 16) -> StructuredDataset:
    """Corrupt every ground-truth image, one operator per sample, seed-determined."""
    if ds.images is None:
        raise ValueError("cannot corrupt a dataset without ground-truth images")
    rng = np.random.default_rng(seed)
    ops, ys, in_psnrs = [], [], []
    shape = (ds.channels, ds.height, ds.width)
    for x in ds.images:
        if task == DENOISE:
            op = meas.noisy_op(meas.calibrate_noise_sigma(x, snr_db))
        elif task == INPAINT:
            origin = meas.random_block_origin(ds.height, ds.width, block, rng)
            op = meas.block_mask_op(shape, origin, block)
        else:
            raise ValueError(f"unknown task {task!r}")
        y = meas.corrupt(x, op, rng)
        ops.append(op)
        ys.append(y)
        in_psnrs.append(psnr(y, x))
    return replace(ds, measurements=ys, ops=ops, task=task,
                   input_psnr=float(np.mean(in_psnrs)))
