import numpy as np
import pytest

from ringae import dataset as dsmod
from ringae import measurement as meas
from ringae.ndtensor import ShapeError


def toy_spec(**kw):
    base = dict(dims=(4, 5, 5), size=64, channels=1)
    base.update(kw)
    return dsmod.SyntheticSpec(**base)


def test_generate_bookkeeping():
    ds = dsmod.generate_synthetic(toy_spec())
    assert ds.num_samples == 100
    assert len(ds.images) == 100
    for img in ds.images:
        assert img.shape == (1, 64, 64)
        assert img.min() >= 0.0 and img.max() <= 1.0
    assert len(ds.multi_indices()) == 100


def test_generate_validates_spec():
    with pytest.raises(ShapeError):
        dsmod.generate_synthetic(toy_spec(dims=(9, 2, 2)))  # more glyphs than supported
    with pytest.raises(ShapeError):
        dsmod.generate_synthetic(toy_spec(size=50))
    with pytest.raises(ShapeError):
        dsmod.generate_synthetic(toy_spec(channels=2))
    with pytest.raises(ShapeError):
        dsmod.generate_synthetic(toy_spec(dims=(2, 0, 2)))


def test_intensity_attribute_preserves_support():
    ds = dsmod.generate_synthetic(toy_spec())
    dims = ds.attribute_dims
    # vary attribute 2 only, attribute 3 fixed: the changed pixel set is the glyph
    from ringae.tensor_ring import flat_index
    a = ds.images[flat_index(dims, (1, 0, 2))]
    b = ds.images[flat_index(dims, (1, 3, 2))]
    changed = a != b
    assert changed.any()
    support_a = a != dsmod.BACKGROUND
    support_b = b != dsmod.BACKGROUND
    assert np.array_equal(support_a, support_b)
    assert np.array_equal(changed, support_a)


def test_generate_deterministic_across_runs():
    a = dsmod.generate_synthetic(toy_spec())
    b = dsmod.generate_synthetic(toy_spec(), rng=np.random.default_rng(999))
    for x, y in zip(a.images, b.images):
        assert np.array_equal(x, y)


def test_generate_scale_variation_and_color():
    ds = dsmod.generate_synthetic(toy_spec(dims=(8, 3, 4), channels=3, variation="scale"))
    assert ds.images[0].shape == (3, 64, 64)
    # larger scale index paints at least as many glyph pixels
    from ringae.tensor_ring import flat_index
    sizes = [np.count_nonzero(np.any(ds.images[flat_index(ds.attribute_dims, (0, 0, j))]
                                     != dsmod.BACKGROUND, axis=0))
             for j in range(4)]
    assert sizes == sorted(sizes)
    assert sizes[0] < sizes[-1]


def test_save_load_round_trip(tmp_path):
    ds = dsmod.generate_synthetic(toy_spec(dims=(2, 2, 2), size=32))
    dsmod.save_directory(ds, tmp_path / "ds")
    loaded = dsmod.load_directory(tmp_path / "ds")
    assert loaded.attribute_dims == ds.attribute_dims
    assert (loaded.height, loaded.width, loaded.channels) == (32, 32, 1)
    for a, b in zip(ds.images, loaded.images):
        # 8-bit quantization is exact for the rendered palette after one trip
        assert np.max(np.abs(a - b)) <= 0.5 / 255.0
    dsmod.save_directory(loaded, tmp_path / "ds2")
    again = dsmod.load_directory(tmp_path / "ds2")
    for a, b in zip(loaded.images, again.images):
        assert np.array_equal(a, b)


def test_color_round_trip(tmp_path):
    ds = dsmod.generate_synthetic(toy_spec(dims=(2, 2, 1), size=32, channels=3))
    dsmod.save_directory(ds, tmp_path / "ds")
    loaded = dsmod.load_directory(tmp_path / "ds")
    for a, b in zip(ds.images, loaded.images):
        assert np.max(np.abs(a - b)) <= 0.5 / 255.0


def test_load_reports_missing_image(tmp_path):
    ds = dsmod.generate_synthetic(toy_spec(dims=(2, 3, 1), size=32))
    dsmod.save_directory(ds, tmp_path / "ds")
    (tmp_path / "ds" / "img_1_2_0.pgm").unlink()
    with pytest.raises(FileNotFoundError, match=r"1, 2, 0"):
        dsmod.load_directory(tmp_path / "ds")


def test_load_rejects_malformed_header(tmp_path):
    ds = dsmod.generate_synthetic(toy_spec(dims=(1, 1, 1), size=32))
    dsmod.save_directory(ds, tmp_path / "ds")
    (tmp_path / "ds" / "img_0_0_0.pgm").write_bytes(b"P9 not a real header")
    with pytest.raises(ValueError, match="header"):
        dsmod.load_directory(tmp_path / "ds")


def test_eight_bit_quantization_is_exact():
    img = np.asarray([[[0.0, 1.0], [10 / 255.0, 200 / 255.0]]])
    import io

    # write then read through the PNM helpers
    path = "/tmp/ringae_quant_test.pgm"
    dsmod._write_pnm(path, img)
    back = dsmod._read_pnm(path)
    assert np.array_equal(back, img)


def test_corrupt_denoise_records_input_psnr():
    ds = dsmod.generate_synthetic(toy_spec(dims=(2, 2, 2), size=32))
    corr = dsmod.corrupt_dataset(ds, dsmod.DENOISE, seed=5, snr_db=20.0)
    assert corr.input_psnr is not None and np.isfinite(corr.input_psnr)
    assert len(corr.measurements) == 8
    assert all(op.kind == meas.NOISY for op in corr.ops)
    # per-image calibration: sigma varies with image power
    sigmas = {op.sigma for op in corr.ops}
    assert len(sigmas) > 1


def test_corrupt_inpaint_zeroes_one_block_per_image():
    ds = dsmod.generate_synthetic(toy_spec())
    corr = dsmod.corrupt_dataset(ds, dsmod.INPAINT, seed=3, block=16)
    for y, op, x in zip(corr.measurements, corr.ops, ds.images):
        hole = op.mask == 0
        assert hole.sum() == 256
        assert not y[hole].any()
        assert np.array_equal(y[~hole], x[~hole])


def test_corrupt_deterministic():
    ds = dsmod.generate_synthetic(toy_spec(dims=(2, 2, 2), size=32))
    a = dsmod.corrupt_dataset(ds, dsmod.DENOISE, seed=9)
    b = dsmod.corrupt_dataset(ds, dsmod.DENOISE, seed=9)
    for ya, yb in zip(a.measurements, b.measurements):
        assert np.array_equal(ya, yb)
    c = dsmod.corrupt_dataset(ds, dsmod.DENOISE, seed=10)
    assert any(not np.array_equal(ya, yc)
               for ya, yc in zip(a.measurements, c.measurements))


def test_corrupted_round_trip_preserves_measurements(tmp_path):
    ds = dsmod.generate_synthetic(toy_spec(dims=(2, 2, 1), size=64))
    corr = dsmod.corrupt_dataset(ds, dsmod.INPAINT, seed=1)
    dsmod.save_directory(corr, tmp_path / "ds")
    loaded = dsmod.load_directory(tmp_path / "ds")
    assert loaded.task == dsmod.INPAINT
    for ya, yb in zip(corr.measurements, loaded.measurements):
        assert np.array_equal(ya, yb)  # float64 sidecar, no quantization
    for oa, ob in zip(corr.ops, loaded.ops):
        assert oa.block_origin == ob.block_origin


def test_observations_hide_ground_truth():
    ds = dsmod.generate_synthetic(toy_spec(dims=(2, 2, 2), size=32))
    corr = dsmod.corrupt_dataset(ds, dsmod.DENOISE, seed=0)
    obs = corr.observations()
    assert not hasattr(obs, "images")
    assert obs.num_samples == 8


def test_observations_require_corruption():
    ds = dsmod.generate_synthetic(toy_spec(dims=(2, 2, 2), size=32))
    with pytest.raises(ValueError):
        ds.observations()


def test_corrupt_requires_images():
    ds = dsmod.StructuredDataset(attribute_dims=(2,), channels=1, height=16, width=16)
    with pytest.raises(ValueError):
        dsmod.corrupt_dataset(ds, dsmod.DENOISE, 0)


def test_measurements_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ms = [rng.standard_normal((1, 4, 4)) for _ in range(3)]
    path = tmp_path / "m.bin"
    dsmod.save_measurements(path, ms)
    back = dsmod.load_measurements(path, (1, 4, 4))
    for a, b in zip(ms, back):
        assert np.array_equal(a, b)
    with open(path, "rb") as fh:
        assert fh.read(4) == b"MSR1"
