import numpy as np
import pytest

from vqdetect import raster, synthgen
from vqdetect.raster import GENERATED, PRISTINE
from vqdetect.synthgen import PerturbationParams, TextureParams


def pristine(seed=0, channels=3, size=32, **kw):
    cov = kw.pop("cov", np.eye(channels))
    return synthgen.gen_pristine_tile(TextureParams(band_covariance=cov, seed=seed, **kw), size)


def nyquist_magnitude(band):
    spec = np.abs(np.fft.fft2(band.astype(np.float64)))
    h, w = band.shape
    return spec[h // 2, w // 2]


def high_freq_energy(band, margin=6):
    # squared discrete Laplacian away from the borders, so no periodicity is assumed
    b = band.astype(np.float64)
    lap = b[1:-1, 1:-1] * 4 - b[:-2, 1:-1] - b[2:, 1:-1] - b[1:-1, :-2] - b[1:-1, 2:]
    return float(np.sum(lap[margin:-margin, margin:-margin] ** 2))


def test_splitmix64_reference_values():
    # first outputs of the reference generator seeded with 0
    assert synthgen.splitmix64(0) == 0xE220A8397B1DCDAF
    assert synthgen.derive_seed(0, 0) == synthgen.splitmix64(0)
    assert synthgen.derive_seed(7, 3) == synthgen.splitmix64(7 ^ 3)


def test_pristine_deterministic_and_labelled():
    a, b = pristine(11), pristine(11)
    assert a == b and a.label == PRISTINE
    assert pristine(12) != a


def test_zero_dynamic_range_is_constant():
    t = pristine(1, dynamic_range=0.0, mean_level=1234.0)
    assert np.all(t.samples == 1234)


def test_non_psd_covariance_rejected():
    with pytest.raises(ValueError):
        TextureParams(band_covariance=np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        TextureParams(band_covariance=np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_identity_covariance_gives_uncorrelated_bands():
    corrs = []
    for s in range(120):
        x = pristine(s, channels=2, size=64).samples.reshape(2, -1).astype(float)
        corrs.append(np.corrcoef(x)[0, 1])
    assert abs(np.mean(corrs)) < 0.1


def test_band_covariance_structure_reproduced():
    cov = synthgen.band_covariance(3, 0.8)
    corrs = []
    for s in range(60):
        x = pristine(s, channels=3, size=64, cov=cov).samples.reshape(3, -1).astype(float)
        corrs.append(np.corrcoef(x)[0, 1])
    assert abs(np.mean(corrs) - 0.8) < 0.05


@pytest.mark.parametrize("family", synthgen.FAMILIES)
def test_strength_zero_is_identity(family):
    p = pristine(2)
    g = synthgen.gen_generated_tile(p, PerturbationParams(family, 0.0, 2, 5))
    np.testing.assert_array_equal(g.samples, p.samples)
    assert g.label == GENERATED


def test_checkerboard_raises_nyquist_peak():
    p = pristine(3, size=64)
    g = synthgen.gen_generated_tile(p, PerturbationParams("checkerboard", 0.5, 2, 0))
    for b in range(p.channels):
        assert nyquist_magnitude(g.samples[b]) > 10 * nyquist_magnitude(p.samples[b])


def test_checkerboard_peak_monotone_in_strength():
    p = pristine(4, size=64)
    peaks = [nyquist_magnitude(synthgen.gen_generated_tile(p, PerturbationParams("checkerboard", s, 2)).samples[0])
             for s in (0.0, 0.25, 0.5, 1.0)]
    assert all(a <= b for a, b in zip(peaks, peaks[1:]))


def test_smoothing_lowers_high_frequency_energy():
    p = pristine(5, size=64)
    g = synthgen.gen_generated_tile(p, PerturbationParams("spectral_smoothing", 1.0))
    for b in range(p.channels):
        assert high_freq_energy(g.samples[b]) < high_freq_energy(p.samples[b])


def test_band_shift_is_monotone_per_band():
    p = pristine(6)
    g = synthgen.gen_generated_tile(p, PerturbationParams("band_shift", 1.0, seed=9))
    for b in range(p.channels):
        order = np.argsort(p.samples[b].ravel(), kind="stable")
        assert np.all(np.diff(g.samples[b].ravel()[order].astype(int)) >= 0)


def test_checkerboard_period_validated():
    with pytest.raises(ValueError):
        PerturbationParams("checkerboard", 0.5, period=1)
    with pytest.raises(ValueError):
        PerturbationParams("unknown")


def test_generated_input_rejected():
    g = synthgen.gen_generated_tile(pristine(0), PerturbationParams("band_shift", 0.3))
    with pytest.raises(ValueError):
        synthgen.gen_generated_tile(g, PerturbationParams("band_shift", 0.3))


def test_build_pseudo_dataset(tmp_path):
    tex = TextureParams(band_covariance=np.eye(2))
    pert = PerturbationParams("checkerboard", 0.5, 2, 1)
    m = synthgen.build_pseudo_dataset("d", 5, 5, tex, pert, seed=3, store=tmp_path, size=16)
    assert len(m) == 10
    assert m.counts["test"][PRISTINE] == 5 and m.counts["test"][GENERATED] == 5
    first = (tmp_path / "d" / "tiles" / "g_000000.tile").read_bytes()
    with pytest.raises(FileExistsError):
        synthgen.build_pseudo_dataset("d", 5, 5, tex, pert, seed=3, store=tmp_path, size=16)
    m2 = synthgen.build_pseudo_dataset("d", 5, 5, tex, pert, seed=3, store=tmp_path, size=16, force=True)
    assert m2.entries == m.entries
    assert (tmp_path / "d" / "tiles" / "g_000000.tile").read_bytes() == first
    back = raster.DatasetManifest.read(tmp_path / "d" / "manifest.tsv")
    assert all(t.label == GENERATED for t in back.load("test", GENERATED))


def test_empty_pseudo_dataset(tmp_path):
    m = synthgen.build_pseudo_dataset("e", 0, 0, TextureParams(), PerturbationParams(), 0, tmp_path)
    assert len(m) == 0
