"""Tensor-ring factorization of the latent-code tensor.

A collection of N = I_1 * ... * I_K codes of length d is represented by K+1
three-way cores: core k has shape [R_{k-1}, I_k, R_k] and the final core
[R_K, d, R_0] closes the ring. Entry m of the code at multi-index
(i_1, ..., i_K) is the trace of the left-to-right product of the selected
core slices:

    z[m] = tr( C1[:, i_1, :] @ ... @ CK[:, i_K, :] @ CL[:, m, :] )

The contraction is multilinear in every core, which gives closed-form
gradients: for one core slice the gradient is the transposed product of the
suffix and prefix of the remaining slices. Gradients accumulate in ascending
batch order so results are reproducible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .ndtensor import ShapeError

MAGIC = b"TRC1"
INIT_STD = 0.1


# ---------------------------------------------------------------------------
# multi-index bookkeeping (row-major over the attribute dims)
# ---------------------------------------------------------------------------

def flat_index(dims, multi) -> int:
    if len(multi) != len(dims):
        raise ShapeError(f"multi-index {multi} does not match dims {tuple(dims)}")
    flat = 0
    for extent, i in zip(dims, multi):
        if not 0 <= i < extent:
            raise ShapeError(f"index {tuple(multi)} out of range for dims {tuple(dims)}")
        flat = flat * extent + i
    return flat


def multi_index(dims, flat: int):
    n = int(np.prod(dims))
    if not 0 <= flat < n:
        raise ShapeError(f"flat index {flat} out of range for dims {tuple(dims)}")
    out = []
    for extent in reversed(dims):
        out.append(flat % extent)
        flat //= extent
    return tuple(reversed(out))


def all_multi_indices(dims):
    """All multi-indices in flat (row-major) order."""
    return [tuple(ix) for ix in itertools.product(*(range(e) for e in dims))]


# ---------------------------------------------------------------------------
# cores
# ---------------------------------------------------------------------------

@dataclass
class TRCores:
    cores: list  # K attribute cores [R_{k-1}, I_k, R_k] then the latent core [R_K, d, R_0]
    ranks: tuple = field(init=False)
    attribute_dims: tuple = field(init=False)
    latent_dim: int = field(init=False)

    def __post_init__(self):
        if len(self.cores) < 2:
            raise ShapeError("need at least one attribute core and the latent core")
        ranks = [c.shape[0] for c in self.cores]
        ranks.append(self.cores[-1].shape[2])
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[2] != self.cores[k + 1].shape[0]:
                raise ShapeError(
                    f"cores {k} and {k + 1} disagree on the connecting rank: "
                    f"{self.cores[k].shape} vs {self.cores[k + 1].shape}")
        if ranks[0] != ranks[-1]:
            raise ShapeError(f"ring is not closed: R_0={ranks[0]} != R_last={ranks[-1]}")
        self.ranks = tuple(ranks)
        self.attribute_dims = tuple(c.shape[1] for c in self.cores[:-1])
        self.latent_dim = self.cores[-1].shape[1]

    @property
    def num_attributes(self) -> int:
        return len(self.cores) - 1


def init_cores(attribute_dims, latent_dim: int, rank: int,
               rng: np.random.Generator) -> TRCores:
    """All-equal-rank cores with i.i.d. N(0, 0.1) entries.

    Entries are drawn core by core (attribute cores in order, latent core
    last), row-major within each core, so a seeded generator reproduces the
    same cores bit for bit.
    """
    dims = tuple(int(e) for e in attribute_dims)
    if any(e < 1 for e in dims) or latent_dim < 1:
        raise ShapeError(f"extents must be >= 1, got dims {dims}, d={latent_dim}")
    if rank < 1:
        raise ShapeError(f"rank must be >= 1, got {rank}")
    cores = [rng.normal(0.0, INIT_STD, size=(rank, e, rank)) for e in dims]
    cores.append(rng.normal(0.0, INIT_STD, size=(rank, latent_dim, rank)))
    return TRCores(cores)


def param_count(cores: TRCores) -> int:
    """sum_k I_k R_{k-1} R_k + d R_K R_0."""
    return int(sum(c.size for c in cores.cores))


def compression_ratio(cores: TRCores) -> float:
    """Dense code-tensor size d * prod(I_k) over the factorized parameter count."""
    dense = cores.latent_dim * int(np.prod(cores.attribute_dims))
    return dense / param_count(cores)


# ---------------------------------------------------------------------------
# contraction and gradients
# ---------------------------------------------------------------------------

def _check_index(cores: TRCores, idx) -> tuple:
    idx = tuple(int(i) for i in idx)
    if len(idx) != cores.num_attributes:
        raise ShapeError(f"multi-index {idx} does not match dims {cores.attribute_dims}")
    for i, extent in zip(idx, cores.attribute_dims):
        if not 0 <= i < extent:
            raise ShapeError(f"index {idx} out of range for dims {cores.attribute_dims}")
    return idx


def _prefix_product(cores: TRCores, idx) -> np.ndarray:
    """Left-to-right product of the selected attribute slices ([R_0, R_K])."""
    prod = cores.cores[0][:, idx[0], :]
    for k in range(1, cores.num_attributes):
        prod = prod @ cores.cores[k][:, idx[k], :]
    return prod


def latent_code(cores: TRCores, idx) -> np.ndarray:
    """Length-d code at one multi-index."""
    idx = _check_index(cores, idx)
    prod = _prefix_product(cores, idx)
    return np.einsum("ab,bma->m", prod, cores.cores[-1])


def latent_batch(cores: TRCores, indices) -> np.ndarray:
    """[B, d] codes for a list of multi-indices (row b = latent_code(indices[b]))."""
    checked = [_check_index(cores, idx) for idx in indices]
    prods = np.stack([_prefix_product(cores, idx) for idx in checked])
    return np.einsum("nab,bma->nm", prods, cores.cores[-1])


def grad_cores(cores: TRCores, indices, upstream: np.ndarray) -> list:
    """Gradient of sum_{b,m} upstream[b,m] * z_b[m] with respect to every core.

    Returns one array per core, shaped like it. Only the slices selected by
    the batch indices receive nonzero attribute-core gradients.
    """
    checked = [_check_index(cores, idx) for idx in indices]
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (len(checked), cores.latent_dim):
        raise ShapeError(
            f"upstream shape {upstream.shape} does not match "
            f"({len(checked)}, {cores.latent_dim})")
    k_attr = cores.num_attributes
    latent = cores.cores[-1]
    grads = [np.zeros_like(c) for c in cores.cores]
    full_prods = np.empty((len(checked), cores.ranks[0], cores.ranks[k_attr]))
    for b, idx in enumerate(checked):
        slices = [cores.cores[k][:, idx[k], :] for k in range(k_attr)]
        # prefixes[k] = product of slices before k; suffixes[k] = product after
        # k, folded into the upstream-weighted latent matrix.
        prefixes = [np.eye(cores.ranks[0])]
        for k in range(k_attr - 1):
            prefixes.append(prefixes[-1] @ slices[k])
        full_prods[b] = prefixes[-1] @ slices[-1]
        weighted = np.tensordot(upstream[b], latent, axes=(0, 1))  # [R_K, R_0]
        suffix = weighted
        for k in range(k_attr - 1, -1, -1):
            grads[k][:, idx[k], :] += (suffix @ prefixes[k]).T
            if k > 0:
                suffix = slices[k] @ suffix
    grads[-1] = np.einsum("bm,bak->kma", upstream, full_prods)
    return grads


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_cores(cores: TRCores, path) -> None:
    """Flat binary record: magic, K, d, ranks, attribute dims, then core data."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        header = [cores.num_attributes, cores.latent_dim, *cores.ranks, *cores.attribute_dims]
        fh.write(np.asarray(header, dtype="<i8").tobytes())
        for core in cores.cores:
            fh.write(np.ascontiguousarray(core, dtype="<f8").tobytes())


def load_cores(path) -> TRCores:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a tensor-ring checkpoint")
        k, d = np.frombuffer(fh.read(16), dtype="<i8")
        ranks = np.frombuffer(fh.read(8 * (k + 2)), dtype="<i8")
        dims = np.frombuffer(fh.read(8 * k), dtype="<i8")
        cores = []
        extents = list(dims) + [d]
        for i, extent in enumerate(extents):
            shape = (int(ranks[i]), int(extent), int(ranks[i + 1]))
            count = shape[0] * shape[1] * shape[2]
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            cores.append(np.ascontiguousarray(data))
    return TRCores(cores)
