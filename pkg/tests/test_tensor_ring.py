import itertools

import numpy as np
import pytest
from helpers import central_diff, rel_err
from hypothesis import given, settings
from hypothesis import strategies as st

from ringae import tensor_ring as tr
from ringae.ndtensor import ShapeError


def brute_force_code(cores: tr.TRCores, idx):
    """Entry-by-entry evaluation summing over every rank index explicitly."""
    k = cores.num_attributes
    d = cores.latent_dim
    z = np.zeros(d)
    rank_ranges = [range(r) for r in cores.ranks[:-1]]
    for m in range(d):
        total = 0.0
        for rs in itertools.product(*rank_ranges):
            closed = rs + (rs[0],)  # ring closure ties the last rank to the first
            term = 1.0
            for j in range(k):
                term *= cores.cores[j][closed[j], idx[j], closed[j + 1]]
            term *= cores.cores[k][closed[k], m, closed[k + 1]]
            total += term
        z[m] = total
    return z


def test_init_core_shapes():
    cores = tr.init_cores((4, 5, 5), 256, 8, np.random.default_rng(0))
    assert [c.shape for c in cores.cores] == [(8, 4, 8), (8, 5, 8), (8, 5, 8), (8, 256, 8)]
    assert cores.ranks == (8, 8, 8, 8, 8)
    assert cores.attribute_dims == (4, 5, 5)
    assert cores.latent_dim == 256


def test_init_statistics():
    cores = tr.init_cores((10, 10), 1000, 10, np.random.default_rng(123))
    entries = np.concatenate([c.ravel() for c in cores.cores])
    assert entries.size >= 10 ** 5
    assert abs(entries.mean()) < 0.002
    assert abs(entries.std() - 0.1) < 0.002


def test_init_deterministic():
    a = tr.init_cores((3, 4), 7, 3, np.random.default_rng(9))
    b = tr.init_cores((3, 4), 7, 3, np.random.default_rng(9))
    for x, y in zip(a.cores, b.cores):
        assert np.array_equal(x, y)


def test_init_rejects_bad_extents():
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeError):
        tr.init_cores((0, 3), 4, 2, rng)
    with pytest.raises(ShapeError):
        tr.init_cores((2, 3), 4, 0, rng)


def test_rank_one_all_ones_gives_all_ones_code():
    cores = tr.TRCores([np.ones((1, 2, 1)), np.ones((1, 3, 1)), np.ones((1, 5, 1))])
    z = tr.latent_code(cores, (1, 2))
    assert np.array_equal(z, np.ones(5))


def test_latent_code_matches_brute_force():
    cores = tr.init_cores((2, 2), 3, 2, np.random.default_rng(4))
    for idx in itertools.product(range(2), range(2)):
        diff = tr.latent_code(cores, idx) - brute_force_code(cores, idx)
        assert np.max(np.abs(diff)) < 1e-12


def test_latent_batch_matches_per_sample_and_brute_force():
    cores = tr.init_cores((3, 2, 2), 4, 3, np.random.default_rng(5))
    indices = tr.all_multi_indices((3, 2, 2))
    batch = tr.latent_batch(cores, indices)
    for b, idx in enumerate(indices):
        assert np.max(np.abs(batch[b] - tr.latent_code(cores, idx))) < 1e-12
        assert np.max(np.abs(batch[b] - brute_force_code(cores, idx))) < 1e-12


def test_latent_batch_single_index_equals_latent_code():
    cores = tr.init_cores((2, 3), 5, 2, np.random.default_rng(6))
    batch = tr.latent_batch(cores, [(1, 2)])
    assert np.array_equal(batch[0], tr.latent_code(cores, (1, 2)))


def test_latent_batch_permutation_permutes_rows():
    cores = tr.init_cores((2, 3), 5, 2, np.random.default_rng(7))
    indices = tr.all_multi_indices((2, 3))
    perm = [3, 0, 5, 1, 4, 2]
    a = tr.latent_batch(cores, indices)
    b = tr.latent_batch(cores, [indices[p] for p in perm])
    assert np.array_equal(b, a[perm])


def test_latent_code_multilinear():
    rng = np.random.default_rng(8)
    cores = tr.init_cores((2, 2), 3, 2, rng)
    idx = (0, 1)
    base = tr.latent_code(cores, idx)
    scaled = tr.TRCores([3.0 * cores.cores[0]] + [c.copy() for c in cores.cores[1:]])
    assert np.allclose(tr.latent_code(scaled, idx), 3.0 * base, rtol=1e-12)
    # superposition in core 1, holding the others fixed
    a = rng.standard_normal(cores.cores[1].shape)
    b = rng.standard_normal(cores.cores[1].shape)
    za = tr.latent_code(tr.TRCores([cores.cores[0], a, cores.cores[2]]), idx)
    zb = tr.latent_code(tr.TRCores([cores.cores[0], b, cores.cores[2]]), idx)
    zab = tr.latent_code(tr.TRCores([cores.cores[0], a + b, cores.cores[2]]), idx)
    assert np.allclose(zab, za + zb, rtol=1e-10, atol=1e-14)


def test_latent_code_rejects_bad_index():
    cores = tr.init_cores((2, 2), 3, 2, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        tr.latent_code(cores, (2, 0))
    with pytest.raises(ShapeError):
        tr.latent_code(cores, (0, 0, 0))


def test_grad_cores_matches_finite_differences():
    rng = np.random.default_rng(10)
    cores = tr.init_cores((3, 2, 2), 4, 3, rng)  # 3*(9I) ... well under 1e3 params
    indices = [(0, 0, 1), (2, 1, 0), (1, 1, 1), (0, 1, 0)]
    upstream = rng.standard_normal((4, 4))
    grads = tr.grad_cores(cores, indices, upstream)

    def loss():
        return float(np.sum(upstream * tr.latent_batch(cores, indices)))

    for ci, core in enumerate(cores.cores):
        flat = np.random.default_rng(ci).choice(core.size, size=8, replace=False)
        for f in flat:
            idx = np.unravel_index(int(f), core.shape)
            fd = central_diff(loss, core, idx, step=1e-5)
            assert rel_err(fd, grads[ci][idx]) < 1e-6 or abs(fd - grads[ci][idx]) < 1e-10


def test_grad_cores_zero_upstream():
    cores = tr.init_cores((2, 2), 3, 2, np.random.default_rng(11))
    grads = tr.grad_cores(cores, [(0, 1)], np.zeros((1, 3)))
    for g in grads:
        assert not g.any()


def test_grad_cores_structural_sparsity():
    cores = tr.init_cores((4, 3), 5, 2, np.random.default_rng(12))
    grads = tr.grad_cores(cores, [(1, 2)], np.random.default_rng(1).standard_normal((1, 5)))
    for slot in (0, 2, 3):
        assert not grads[0][:, slot, :].any()
    assert grads[0][:, 1, :].any()
    for slot in (0, 1):
        assert not grads[1][:, slot, :].any()
    assert grads[1][:, 2, :].any()


def test_grad_cores_rejects_bad_upstream_shape():
    cores = tr.init_cores((2, 2), 3, 2, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        tr.grad_cores(cores, [(0, 0)], np.zeros((1, 4)))


def test_param_count_reference_configuration():
    cores = tr.init_cores((25, 3, 3, 9), 256, 25, np.random.default_rng(0))
    assert tr.param_count(cores) == 185_000
    dense = 256 * 25 * 3 * 3 * 9
    assert dense == 518_400
    ratio = tr.compression_ratio(cores)
    assert abs(ratio - dense / 185_000) < 1e-12
    assert round(ratio, 2) == 2.80


def test_param_count_rank_one():
    cores = tr.init_cores((4, 5, 6), 7, 1, np.random.default_rng(0))
    assert tr.param_count(cores) == 4 + 5 + 6 + 7


def test_param_count_quadruples_when_rank_doubles():
    a = tr.init_cores((3, 4), 5, 2, np.random.default_rng(0))
    b = tr.init_cores((3, 4), 5, 4, np.random.default_rng(0))
    assert tr.param_count(b) == 4 * tr.param_count(a)


def test_cores_validation():
    with pytest.raises(ShapeError):
        tr.TRCores([np.zeros((2, 3, 2)), np.zeros((3, 4, 2))])  # connecting rank
    with pytest.raises(ShapeError):
        tr.TRCores([np.zeros((2, 3, 3)), np.zeros((3, 4, 5))])  # ring not closed


def test_checkpoint_round_trip(tmp_path):
    cores = tr.init_cores((3, 4), 6, 2, np.random.default_rng(13))
    path = tmp_path / "cores.trc"
    tr.save_cores(cores, path)
    loaded = tr.load_cores(path)
    assert loaded.attribute_dims == cores.attribute_dims
    assert loaded.ranks == cores.ranks
    for a, b in zip(cores.cores, loaded.cores):
        assert np.array_equal(a, b)
    with open(path, "rb") as fh:
        assert fh.read(4) == b"TRC1"


def test_checkpoint_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.trc"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ValueError):
        tr.load_cores(path)


def test_flat_multi_index_bijection_exhaustive():
    for dims in [(4, 5, 5), (2, 3), (1, 1, 4), (6,)]:
        n = int(np.prod(dims))
        seen = set()
        for flat in range(n):
            multi = tr.multi_index(dims, flat)
            assert tr.flat_index(dims, multi) == flat
            seen.add(multi)
        assert len(seen) == n
        assert tr.all_multi_indices(dims) == sorted(seen)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=4))
@settings(max_examples=40, deadline=None)
def test_flat_multi_index_bijection_property(dims):
    dims = tuple(dims)
    n = int(np.prod(dims))
    multis = tr.all_multi_indices(dims)
    assert len(multis) == n
    for flat, multi in enumerate(multis):
        assert tr.flat_index(dims, multi) == flat
        assert tr.multi_index(dims, flat) == multi


def test_index_errors():
    with pytest.raises(ShapeError):
        tr.flat_index((2, 3), (0, 3))
    with pytest.raises(ShapeError):
        tr.multi_index((2, 3), 6)
