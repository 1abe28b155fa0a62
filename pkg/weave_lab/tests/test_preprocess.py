import numpy as np
import pytest

from weave_lab import preprocess, raster, weavesim
from weave_lab.errors import BadKernel, ScanFailed, NoPeak
from weave_lab.spectral import SpectralEstimate


class MockSpectral(object):
    """ Returns the same densities for every patch and counts its calls. """

    def __init__(self, v, h=None, fail=False):
        self.v = v
        self.h = v if h is None else h
        self.fail = fail
        self.calls = 0

    def __call__(self, patch):
        self.calls += 1
        if self.fail:
            raise NoPeak('mock')
        return SpectralEstimate(self.v, self.h, 10.0, 10.0)


def random_plate(side=600, seed=0):
    rng = np.random.default_rng(seed)
    return raster.GrayImage(rng.uniform(0, 255, (side, side)))


def test_local_stats_constant():
    img = raster.GrayImage(np.full((9, 9), 77.0))
    mean, std = preprocess.local_stats(img, 5)
    np.testing.assert_allclose(mean, 77.0)
    np.testing.assert_allclose(std, 0.0, atol=1e-6)


def test_local_stats_brute_force():
    values = np.arange(25, dtype=np.float64).reshape(5, 5) * 7 % 251
    img = raster.GrayImage(values)
    mean, std = preprocess.local_stats(img, 3)

    window = values[1:4, 1:4]
    assert mean[2, 2] == pytest.approx(window.mean())
    assert std[2, 2] == pytest.approx(window.std())


def test_local_stats_edges_are_clamped():
    values = np.arange(16, dtype=np.float64).reshape(4, 4)
    mean, _ = preprocess.local_stats(raster.GrayImage(values), 3)

    padded = np.pad(values, 1, mode='edge')
    assert mean[0, 0] == pytest.approx(padded[0:3, 0:3].mean())


def test_bad_kernel():
    img = random_plate(20)
    for k in (4, 1, 2.5, 21):
        with pytest.raises(BadKernel):
            preprocess.local_stats(img, k)


def test_normalize_constant():
    img = raster.GrayImage(np.full((12, 12), 40.0))
    out = preprocess.normalize_contrast(img, 3)
    assert (out.pixels == 128).all()


def test_normalize_checkerboard_is_symmetric():
    board = (np.indices((10, 10)).sum(axis=0) % 2) * 255.0
    out = preprocess.normalize_contrast(raster.GrayImage(board), 3).pixels

    interior = out[1:-1, 1:-1]
    phases = np.indices(interior.shape).sum(axis=0) % 2
    high = interior[phases == 0]
    low = interior[phases == 1]
    assert np.ptp(high) < 1e-9 and np.ptp(low) < 1e-9
    assert high[0] + low[0] == pytest.approx(256, abs=1e-6)


def test_normalize_is_bounded():
    out = preprocess.normalize_contrast(random_plate(40), 7)
    assert out.pixels.min() >= 0 and out.pixels.max() <= 255


def test_kernel_from_density():
    assert preprocess.kernel_from_density(14.5) == 23
    assert preprocess.kernel_from_density(6) == 31
    assert preprocess.kernel_from_density(23) == 15
    assert preprocess.kernel_from_density(10) == 27
    assert preprocess.kernel_from_density(18) == 19
    # the regression floor keeps dense fabrics at the smallest window
    assert preprocess.kernel_from_density(30) == 15

    for t in np.linspace(1, 37, 73):
        k = preprocess.kernel_from_density(t)
        assert k % 2 == 1 and 3 <= k <= 37


def test_scan_origins():
    assert preprocess.scan_origins(4000) == [0, 1400, 2800]
    # small plates shrink the spacing to fit three rows
    assert preprocess.scan_origins(600) == [0, 200, 400]
    assert preprocess.scan_origins(199) == []


def test_estimate_kernel_size_two_passes():
    spectral = MockSpectral(14.5)
    plan = preprocess.estimate_kernel_size(random_plate(), 21, spectral)

    assert plan.k == 23
    assert plan.t == pytest.approx(14.5)
    assert [p[0] for p in plan.passes] == [21, 23]
    assert spectral.calls == 18


def test_estimate_kernel_size_mixed_orientations():
    plan = preprocess.estimate_kernel_size(random_plate(), 21, MockSpectral(6, 10))
    assert plan.t == pytest.approx(8)
    assert plan.k == 29


def test_estimate_kernel_size_on_canvases():
    expected = {6: 31, 10: 27, 14.5: 23, 18: 19, 23: 15}
    for t, k in sorted(expected.items()):
        params = weavesim.WeaveParams(warp_density=t, weft_mean_density=t)
        image, _ = weavesim.gen_canvas(params, 4, 4)
        plan = preprocess.estimate_kernel_size(image)

        assert plan.k == k, t
        assert all(found % 2 == 1 for _, _, found in plan.passes)
        assert abs(plan.passes[1][2] - plan.passes[0][2]) <= 2, plan.passes

        if t == 10:
            again = preprocess.estimate_kernel_size(image)
            assert again.passes == plan.passes


def test_estimate_kernel_size_fails_without_peaks():
    with pytest.raises(ScanFailed):
        preprocess.estimate_kernel_size(random_plate(), 21, MockSpectral(12, fail=True))


def test_equalize_constant():
    out, lut = preprocess.equalize(raster.GrayImage(np.full((5, 5), 10.0)))
    assert lut[10] == 255
    assert lut[9] == 0
    assert (out.pixels == 255).all()


def test_equalize_uniform_is_near_identity():
    img = raster.GrayImage(np.arange(256, dtype=np.float64).reshape(16, 16))
    _, lut = preprocess.equalize(img)
    assert len(lut) == 256
    assert np.abs(lut.table - np.arange(256)).max() <= 1


def test_equalize_properties():
    rng = np.random.default_rng(7)
    for _ in range(100):
        img = raster.GrayImage(rng.normal(120, 30, (16, 16)).clip(0, 255))
        once, lut = preprocess.equalize(img)
        assert (np.diff(lut.table) >= 0).all()

        twice, _ = preprocess.equalize(once)
        assert np.abs(twice.pixels - once.pixels).max() <= 1


def test_preprocess_plate_fixed_kernel():
    plate = random_plate(300)
    out, plan = preprocess.preprocess_plate(plate, fixed_k=23, equalization=False)
    assert plan is None
    assert out == preprocess.normalize_contrast(plate, 23)

    spectral = MockSpectral(18)
    out, plan = preprocess.preprocess_plate(random_plate(), spectral=spectral)
    assert plan.k == 19
    assert out.shape == (600, 600)
