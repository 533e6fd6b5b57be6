from types import SimpleNamespace

import numpy as np
import pytest

from vqdetect import nn, raster, synthgen, vqvae2
from vqdetect.nn import Parameter, Tensor
from vqdetect.raster import GENERATED, PRISTINE
from vqdetect.vqvae2 import Codebook, TrainRun, VqVae2, VqVae2Config

from oracles import brute_force_nearest, check_module_grads

SMALL = dict(code_dim=4, hidden=8, res_blocks=1, res_hidden=4, codebook_sizes=(16, 8, 4))


def codebook(entries):
    e = np.asarray(entries, dtype=np.float64)
    return Codebook(e, np.zeros(len(e)), np.zeros_like(e))


def pristine_tiles(n, channels=1, size=32, seed=0):
    tex = synthgen.TextureParams(band_covariance=np.eye(channels))
    return [synthgen.gen_pristine_tile(synthgen.TextureParams(tex.correlation_length, tex.band_covariance,
                                                              seed=synthgen.derive_seed(seed, i)), size)
            for i in range(n)]


class Shift:
    """Stand-in model whose reconstruction is the input plus a fixed per-channel offset."""

    def __init__(self, offsets):
        self.offsets = np.asarray(offsets, dtype=np.float32)
        self.config = SimpleNamespace(input_channels=len(self.offsets))

    def reconstruct(self, x):
        return x.data + self.offsets[None, :, None, None]


# quantize ---------------------------------------------------------------------------

def test_quantize_exact_entry():
    rng = np.random.default_rng(0)
    cb = codebook(rng.standard_normal((8, 3)))
    idx, q, err = vqvae2.quantize(cb.entries[3][None], cb)
    assert idx.tolist() == [3] and err == 0.0
    np.testing.assert_array_equal(q[0], cb.entries[3])


def test_quantize_small_example():
    idx, _, err = vqvae2.quantize(np.array([[0.2, 0.1]]), codebook([[0, 0], [1, 1]]))
    assert idx.tolist() == [0]
    assert err == pytest.approx(0.05)


def test_quantize_tie_goes_to_lowest_index():
    idx, _, _ = vqvae2.quantize(np.array([[0.5, 0.5], [0.0, 0.0]]), codebook([[1, 0], [0, 1], [-1, 0], [0, -1]]))
    assert idx.tolist() == [0, 0]


def test_quantize_matches_brute_force():
    rng = np.random.default_rng(1)
    cb = codebook(rng.standard_normal((32, 5)))
    lat = rng.standard_normal((300, 5))
    idx, q, err = vqvae2.quantize(lat, cb)
    np.testing.assert_array_equal(idx, brute_force_nearest(lat, cb.entries))
    assert err == pytest.approx(np.mean(np.sum((lat - q) ** 2, axis=1)))


def test_quantize_keeps_leading_shape():
    cb = codebook(np.eye(4))
    idx, q, _ = vqvae2.quantize(np.zeros((2, 3, 5, 4)), cb)
    assert idx.shape == (2, 3, 5) and q.shape == (2, 3, 5, 4)


def test_quantize_errors():
    with pytest.raises(ValueError, match="empty"):
        vqvae2.quantize(np.zeros((1, 2)), codebook(np.zeros((0, 2))))
    with pytest.raises(ValueError, match="dimension"):
        vqvae2.quantize(np.zeros((1, 3)), codebook(np.zeros((4, 2))))


# codebook EMA ---------------------------------------------------------------------

def test_ema_leaves_unassigned_entries_bitwise():
    rng = np.random.default_rng(2)
    cb = codebook(rng.standard_normal((4, 2)))
    before = cb.entries.copy()
    vqvae2.codebook_update_ema(cb, np.array([[5.0, 5.0]]), np.array([1]), 0.9)
    np.testing.assert_array_equal(cb.entries[[0, 2, 3]], before[[0, 2, 3]])
    assert cb.unused_steps.tolist() == [1, 0, 1, 1]


def test_ema_decay_zero_is_mean():
    cb = codebook([[0.0, 0.0], [9.0, 9.0]])
    vqvae2.codebook_update_ema(cb, np.array([[2.0, 2.0], [4.0, 4.0]]), np.array([0, 0]), 0.0)
    np.testing.assert_array_equal(cb.entries[0], [3.0, 3.0])
    assert cb.usage_counts.tolist() == [2.0, 0.0]


def test_ema_converges_toward_cluster_mean():
    rng = np.random.default_rng(3)
    pts = rng.normal(4.0, 0.5, size=(50, 3))
    target = pts.mean(axis=0)
    cb = codebook([[0.0, 0.0, 0.0]])
    cb.usage_counts[:] = 1.0
    dists = []
    for _ in range(10):
        vqvae2.codebook_update_ema(cb, pts, np.zeros(50, dtype=int), 0.9)
        dists.append(np.linalg.norm(cb.entries[0] - target))
    assert all(b < a for a, b in zip(dists, dists[1:]))


def test_ema_decay_validated():
    with pytest.raises(ValueError):
        vqvae2.codebook_update_ema(codebook([[0.0]]), np.zeros((1, 1)), np.zeros(1, int), 1.0)


def test_dead_codes_reseeded():
    cb = codebook(np.zeros((3, 2)))
    cb.unused_steps = np.array([5, 0, 2])
    lat = np.array([[7.0, 7.0]])
    n = vqvae2.reseed_dead_codes(cb, lat, 5, np.random.default_rng(0))
    assert n == 1
    np.testing.assert_array_equal(cb.entries[0], [7.0, 7.0])
    assert cb.unused_steps.tolist() == [0, 0, 2]


# straight-through --------------------------------------------------------------------

def test_straight_through_forward_and_identity_gradient():
    enc = Parameter(np.array([[0.3, -1.2], [2.0, 0.1]]), dtype=np.float64)
    q = Tensor(np.array([[0.0, -1.0], [2.0, 0.0]]), dtype=np.float64)
    out = nn.straight_through(enc, q)
    np.testing.assert_array_equal(out.data, q.data)
    out.sum().backward()
    np.testing.assert_array_equal(enc.grad, np.ones((2, 2)))


def test_straight_through_shape_mismatch():
    with pytest.raises(ValueError):
        nn.straight_through(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_straight_through_with_conv_decoder_grads():
    rng = np.random.default_rng(4)
    enc = nn.Conv2d(1, 2, 3, padding=1, rng=rng).astype(np.float64)
    dec = nn.ConvTranspose2d(2, 1, 4, stride=2, padding=1, rng=rng).astype(np.float64)
    x = Tensor(rng.standard_normal((2, 1, 4, 4)), dtype=np.float64)
    target = rng.standard_normal((2, 1, 8, 8))
    # a fixed rounding grid plays the codebook
    q = np.round(enc(x).data * 2) / 2

    def loss():
        z = enc(x)
        return nn.mse(dec(nn.straight_through(z, Tensor(q, dtype=np.float64))), target) + nn.mse(z, q)

    # the decoder sees q, so its gradients are exact
    assert check_module_grads(loss, dec.parameters(), rng) < 1e-4

    # the encoder receives the decoder-input gradient at q unchanged
    for p in enc.parameters() + dec.parameters():
        p.grad = None
    loss().backward()
    st_grads = [p.grad.copy() for p in enc.parameters()]
    qt = Tensor(q, requires_grad=True, dtype=np.float64)
    nn.mse(dec(qt), target).backward()
    g_q = qt.grad.copy()
    for p in enc.parameters():
        p.grad = None
    z = enc(x)
    ((z * Tensor(g_q, dtype=np.float64)).sum() + nn.mse(z, q)).backward()
    for a, p in zip(st_grads, enc.parameters()):
        np.testing.assert_allclose(a, p.grad, rtol=1e-10, atol=1e-12)


# model ----------------------------------------------------------------------------

def test_hierarchy_resolutions():
    m = VqVae2(VqVae2Config(input_channels=2, **SMALL))
    res = m.forward(np.random.default_rng(0).random((3, 2, 32, 32)).astype(np.float32))
    assert res.indices["bottom"].shape == (3, 8, 8)
    assert res.indices["middle"].shape == (3, 4, 4)
    assert res.indices["top"].shape == (3, 2, 2)
    assert res.reconstruction.shape == (3, 2, 32, 32)
    assert float(res.total_loss.data) > 0
    assert all(np.isfinite(float(v.data)) for v in res.terms.values())


def test_total_loss_composition():
    m = VqVae2(VqVae2Config(input_channels=1, commitment_weight=0.4, **SMALL))
    res = m.forward(np.random.default_rng(1).random((2, 1, 16, 16)).astype(np.float32))
    commit = sum(float(res.terms[f"commit_{lvl}"].data) for lvl in vqvae2.LEVELS)
    assert float(res.total_loss.data) == pytest.approx(float(res.terms["recon"].data) + 0.4 * commit, rel=1e-6)


def test_zero_input_recon_loss_is_mean_square_output():
    m = VqVae2(VqVae2Config(input_channels=1, **SMALL))
    res = m.forward(np.zeros((1, 1, 16, 16), np.float32))
    r = res.reconstruction.data.astype(np.float64)
    assert float(res.terms["recon"].data) == pytest.approx(np.mean(r * r), rel=1e-6)


def test_identical_tiles_identical_losses():
    m = VqVae2(VqVae2Config(input_channels=1, **SMALL))
    x = np.random.default_rng(2).random((1, 1, 16, 16)).astype(np.float32)
    r = m.reconstruct(np.concatenate([x, x]))
    np.testing.assert_array_equal(r[0], r[1])


def test_forward_channel_mismatch():
    m = VqVae2(VqVae2Config(input_channels=13, **SMALL))
    with pytest.raises(ValueError, match="13"):
        m.forward(np.zeros((1, 3, 16, 16), np.float32))


def test_config_validation():
    with pytest.raises(ValueError):
        VqVae2Config(levels=2)
    with pytest.raises(ValueError):
        VqVae2Config(codebook_sizes=(0, 4, 4))


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    m = VqVae2(VqVae2Config(input_channels=1, seed=5, **SMALL))
    x = np.random.default_rng(3).random((4, 1, 16, 16)).astype(np.float32)
    m.update_codebooks(m.forward(x))
    vqvae2.save_model(m, tmp_path / "m.ckpt")
    back = vqvae2.load_model(tmp_path / "m.ckpt")
    a, b = m.forward(x), back.forward(x)
    assert float(a.total_loss.data) == float(b.total_loss.data)
    np.testing.assert_array_equal(a.reconstruction.data, b.reconstruction.data)
    with pytest.raises(nn.ArchitectureMismatch):
        vqvae2.load_model(tmp_path / "m.ckpt", VqVae2Config(input_channels=2, **SMALL))


# training ---------------------------------------------------------------------------

def test_training_reduces_validation_loss():
    tiles = pristine_tiles(200, size=32)
    m = VqVae2(VqVae2Config(input_channels=1, seed=1, **SMALL))
    vqvae2.train(m, tiles, TrainRun(epochs=5, batch_size=32, seed=2, lr=2e-3))
    log = m.training_log
    assert len(log) == 5 and log[-1].stopped
    assert min(r.val_loss for r in log) < log[0].val_loss


def test_early_stopping_rule():
    stop = vqvae2.EarlyStopping(patience=1, min_delta=0.0)
    assert stop.update(1, 1.0) == (True, False)
    assert stop.update(2, 2.0) == (False, True)
    stop = vqvae2.EarlyStopping(patience=2, min_delta=0.1)
    stop.update(1, 1.0)
    assert stop.update(2, 0.95) == (False, False)  # below min-delta
    assert stop.update(3, 0.85) == (True, False)


def test_patience_one_stops_after_second_epoch(monkeypatch):
    vals = iter([0.5, 0.6, 0.7, 0.8])
    monkeypatch.setattr(vqvae2, "evaluate_recon", lambda *a, **k: next(vals))
    m = VqVae2(VqVae2Config(input_channels=1, **SMALL))
    vqvae2.train(m, pristine_tiles(8, size=16), TrainRun(epochs=10, batch_size=8, patience=1))
    assert [r.epoch for r in m.training_log] == [1, 2]
    assert m.training_log[-1].stopped


def test_one_class_purity_enforced():
    tiles = pristine_tiles(4, size=16)
    bad = synthgen.gen_generated_tile(tiles[0], synthgen.PerturbationParams("band_shift", 0.5))
    m = VqVae2(VqVae2Config(input_channels=1, **SMALL))
    with pytest.raises(vqvae2.OneClassViolation):
        vqvae2.train(m, tiles + [bad], TrainRun(epochs=1))


def test_resume_matches_uninterrupted(tmp_path):
    data = vqvae2.tiles_to_array(pristine_tiles(24, size=16))
    run = TrainRun(epochs=3, batch_size=8, seed=4, lr=1e-3)
    ref = VqVae2(VqVae2Config(input_channels=1, seed=9, **SMALL))
    vqvae2.train(ref, data, run, state_dir=tmp_path / "a")

    def interrupt(epoch, model):
        if epoch == 2:
            raise KeyboardInterrupt

    m = VqVae2(VqVae2Config(input_channels=1, seed=9, **SMALL))
    with pytest.raises(KeyboardInterrupt):
        vqvae2.train(m, data, run, state_dir=tmp_path / "b", on_epoch=interrupt)
    resumed = VqVae2(VqVae2Config(input_channels=1, seed=9, **SMALL))
    vqvae2.train(resumed, data, run, state_dir=tmp_path / "b")
    assert [r.epoch for r in resumed.training_log] == [1, 2, 3]
    for k, v in ref.state_arrays().items():
        np.testing.assert_array_equal(resumed.state_arrays()[k], v, err_msg=k)


def test_training_log_file(tmp_path):
    recs = [vqvae2.EpochRecord(1, 0.5, 0.4), vqvae2.EpochRecord(2, 0.3, 0.35, True)]
    text = vqvae2.write_training_log(recs, tmp_path / "log.tsv").read_text().splitlines()
    assert text[0] == "epoch\ttrain_loss\tval_loss\tstopped"
    assert text[2] == "2\t0.3\t0.35\t1"


# scoring ------------------------------------------------------------------------

def test_identity_model_scores_zero():
    tile = pristine_tiles(1, channels=3, size=16)[0]
    sm = vqvae2.ScoreModels(per_band={b: Shift([0.0]) for b in tile.band_names})
    sv = vqvae2.reconstruction_score(sm, tile)
    assert [sv.score(b) for b in tile.band_names] == [0.0, 0.0, 0.0]
    assert sv.total_score == 0.0


def test_offset_on_one_band_scores_delta_squared():
    tile = pristine_tiles(1, channels=3, size=16)[0]
    delta = np.float32(0.125)
    sm = vqvae2.ScoreModels(joint=Shift([0.0, delta, 0.0]), joint_bands=tile.band_names)
    sv = vqvae2.reconstruction_score(sm, tile)
    assert sv.score(tile.band_names[1]) == pytest.approx(float(delta) ** 2, rel=1e-6)
    assert sv.score(tile.band_names[0]) == 0.0


def test_per_band_and_joint_share_schema():
    tile = pristine_tiles(1, channels=3, size=16)[0]
    per = vqvae2.reconstruction_score(vqvae2.ScoreModels(per_band={b: Shift([0.0]) for b in tile.band_names}), tile)
    joint = vqvae2.reconstruction_score(vqvae2.ScoreModels(joint=Shift([0, 0, 0]), joint_bands=tile.band_names), tile)
    assert len(per.band_scores) == len(joint.band_scores) == 13
    assert per.present == joint.present == [0, 1, 2]
    assert per.band_scores[5] is None


def test_missing_band_model():
    tile = pristine_tiles(1, channels=2, size=16)[0]
    sm = vqvae2.ScoreModels(per_band={"1": Shift([0.0])})
    with pytest.raises(vqvae2.MissingModel):
        vqvae2.score_tiles(sm, [tile], ["1", "2"])


def test_score_models_roundtrip(tmp_path):
    tiles = pristine_tiles(3, channels=2, size=16)
    models = {b: VqVae2(VqVae2Config(input_channels=1, seed=i, **SMALL)) for i, b in enumerate(tiles[0].band_names)}
    sm = vqvae2.ScoreModels(per_band=models)
    vqvae2.save_score_models(sm, tmp_path)
    back = vqvae2.load_score_models(tmp_path)
    a = vqvae2.score_tiles(sm, tiles)
    b = vqvae2.score_tiles(back, tiles)
    assert [s.band_scores for s in a] == [s.band_scores for s in b]
    assert all(s.label_if_known == PRISTINE for s in a)
    assert raster.BAND_NAMES.index(tiles[0].band_names[1]) in a[0].present
    assert GENERATED not in {s.label_if_known for s in b}
