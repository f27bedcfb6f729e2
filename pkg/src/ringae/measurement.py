"""Per-sample corruption operators: calibrated noise, block masks, linear maps.

Each operator separates its deterministic linear part (apply) from the noise,
which is sampled exactly once when a dataset is corrupted. Residuals are sums
of squared differences in measurement space; for masks only observed pixels
count, so values inside the hole never influence the loss or its gradient.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .ndtensor import ShapeError

NOISY = "noisy"
MASK = "mask"
LINEAR = "linear"


@dataclass
class MeasurementOp:
    kind: str
    sigma: float = 0.0                  # noisy: per-image noise level
    mask: np.ndarray | None = None      # mask: 1 = observed, 0 = hole
    block_origin: tuple | None = None   # mask: (row, col) of the zeroed block
    block_size: int = 0
    matrix: np.ndarray | None = None    # linear: rows act on vec(x)


def noisy_op(sigma: float) -> MeasurementOp:
    return MeasurementOp(kind=NOISY, sigma=float(sigma))


def block_mask_op(shape, origin, block: int) -> MeasurementOp:
    """Binary mask with one zeroed block x block region fully inside the image."""
    c, h, w = shape
    r0, c0 = int(origin[0]), int(origin[1])
    if r0 < 0 or c0 < 0 or r0 + block > h or c0 + block > w:
        raise ShapeError(f"block {block}x{block} at {origin} does not fit in {h}x{w}")
    mask = np.ones((c, h, w))
    mask[:, r0:r0 + block, c0:c0 + block] = 0.0
    return MeasurementOp(kind=MASK, mask=mask, block_origin=(r0, c0), block_size=block)


def linear_op(matrix: np.ndarray) -> MeasurementOp:
    return MeasurementOp(kind=LINEAR, matrix=np.ascontiguousarray(matrix, dtype=np.float64))


def calibrate_noise_sigma(x: np.ndarray, snr_db: float) -> float:
    """Noise level giving the requested per-image signal-to-noise ratio in dB."""
    power = float(np.mean(np.square(x)))
    if power == 0.0:
        raise ValueError("cannot calibrate noise for an all-zero image")
    return float(np.sqrt(power / 10.0 ** (snr_db / 10.0)))


def random_block_origin(height: int, width: int, block: int, rng: np.random.Generator):
    if block > height or block > width:
        raise ShapeError(f"block {block} does not fit in {height}x{width}")
    return int(rng.integers(0, height - block + 1)), int(rng.integers(0, width - block + 1))


def corrupt(x: np.ndarray, op: MeasurementOp, rng: np.random.Generator) -> np.ndarray:
    """Produce the observed measurement for one image (noise drawn here, once)."""
    if op.kind == NOISY:
        return x + op.sigma * rng.standard_normal(x.shape)
    if op.kind == MASK:
        if op.mask.shape != x.shape:
            raise ShapeError(f"mask shape {op.mask.shape} vs image shape {x.shape}")
        return op.mask * x
    if op.kind == LINEAR:
        return apply(op, x)
    raise ValueError(f"unknown operator kind {op.kind!r}")


def apply(op: MeasurementOp, x: np.ndarray) -> np.ndarray:
    """Deterministic linear part only (never adds noise)."""
    if op.kind == NOISY:
        return x
    if op.kind == MASK:
        if op.mask.shape != x.shape:
            raise ShapeError(f"mask shape {op.mask.shape} vs image shape {x.shape}")
        return op.mask * x
    if op.kind == LINEAR:
        vec = np.ravel(x)
        if op.matrix.shape[1] != vec.size:
            raise ShapeError(f"matrix {op.matrix.shape} vs flattened input {vec.size}")
        return op.matrix @ vec
    raise ValueError(f"unknown operator kind {op.kind!r}")


def residual(op: MeasurementOp, x: np.ndarray, y: np.ndarray) -> float:
    """Sum of squared differences between apply(op, x) and the measurement y."""
    r = apply(op, x) - y
    if op.kind == MASK:
        r = op.mask * r
    flat = np.ravel(r)
    return float(flat @ flat)


def grad_through(op: MeasurementOp, xhat: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of residual(op, xhat, y) with respect to xhat."""
    if op.kind == NOISY:
        return 2.0 * (xhat - y)
    if op.kind == MASK:
        return 2.0 * op.mask * (xhat - y)
    if op.kind == LINEAR:
        r = apply(op, xhat) - np.ravel(y)
        return (2.0 * (op.matrix.T @ r)).reshape(xhat.shape)
    raise ValueError(f"unknown operator kind {op.kind!r}")


# ---------------------------------------------------------------------------
# replay sidecar
# ---------------------------------------------------------------------------

def save_sidecar(path, dims, multi_indices, ops) -> None:
    """Text lines "flat i1 .. iK block_y block_x sigma" (block -1 -1 when absent)."""
    block = max((op.block_size for op in ops), default=0)
    with open(path, "w") as fh:
        fh.write("# flat " + " ".join(f"i{k + 1}" for k in range(len(dims)))
                 + f" block_y block_x sigma (block_size={block})\n")
        for flat, (multi, op) in enumerate(zip(multi_indices, ops)):
            by, bx = op.block_origin if op.block_origin is not None else (-1, -1)
            parts = [str(flat), *[str(i) for i in multi], str(by), str(bx),
                     format(op.sigma, ".17g")]
            fh.write(" ".join(parts) + "\n")


def load_sidecar(path, dims):
    """(rows, block_size) with rows of (multi_index, block_origin or None, sigma)."""
    k = len(dims)
    rows = []
    block = 16
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = re.search(r"block_size=(\d+)", line)
                if m:
                    block = int(m.group(1))
                continue
            parts = line.split()
            if len(parts) != k + 4:
                raise ValueError(f"{path}: malformed sidecar line {line!r}")
            multi = tuple(int(p) for p in parts[1:1 + k])
            by, bx = int(parts[k + 1]), int(parts[k + 2])
            sigma = float(parts[k + 3])
            rows.append((multi, None if by < 0 else (by, bx), sigma))
    return rows, block
