import numpy as np
import pytest

from ppgstress.ppg import Window
from ppgstress.scalogram import (
    AugmentParams, CwtConfig, ScalogramImage, ScalogramMatrix, augment, cwt, load_scalograms,
    render_image, save_scalograms, window_to_image, write_pgm,
)

from oracles import cwt_oracle

RATE = 64.0
N = 640
STEP = np.log(8.0 / 0.5) / 63  # log-frequency spacing of the default grid


def tone(f, n=N, rate=RATE):
    return np.sin(2 * np.pi * f * np.arange(n) / rate)


def test_zero_window_gives_zero_matrix():
    m = cwt(np.zeros(N), CwtConfig(), RATE)
    assert m.coeffs.shape == (64, N)
    assert np.all(m.coeffs == 0)


def test_linearity(rng):
    a, b = rng.normal(size=N), rng.normal(size=N)
    cfg = CwtConfig()
    lhs = cwt(a + b, cfg, RATE).coeffs
    rhs = cwt(a, cfg, RATE).coeffs + cwt(b, cfg, RATE).coeffs
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * max(1.0, np.max(np.abs(rhs)))


def test_center_frequencies_span_band():
    cfg = CwtConfig()
    f = cfg.frequencies()
    assert f[0] == pytest.approx(8.0) and f[-1] == pytest.approx(0.5)
    s = cfg.scales(RATE)
    assert np.allclose(cfg.omega0 * RATE / (2 * np.pi * s), f)


@pytest.mark.parametrize("backend", ["fft", "direct"])
def test_backends_match_riemann_oracle(rng, backend):
    x = rng.normal(size=200)
    cfg = CwtConfig(n_scales=12, backend=backend)
    got = cwt(x, cfg, RATE).coeffs
    want = cwt_oracle(x, RATE, cfg.frequencies())
    assert np.linalg.norm(got - want) / np.linalg.norm(want) < 1e-9


def test_two_hz_tone_localizes():
    cfg = CwtConfig()
    x = tone(2.0)
    m = cwt_oracle(x, RATE, cfg.frequencies())
    assert np.allclose(cwt(x, cfg, RATE).coeffs, m, rtol=0, atol=1e-9)
    s_2hz = cfg.omega0 * RATE / (2 * np.pi * 2.0)
    coi = int(np.ceil(np.sqrt(2) * s_2hz))
    f_hat = cfg.frequencies()[np.abs(m).argmax(axis=0)][coi:N - coi]
    assert np.all(np.abs(np.log(f_hat / 2.0)) <= STEP + 1e-12)


def test_sign_flip_invariance(rng):
    x = rng.normal(size=N)
    cfg = CwtConfig()
    assert np.allclose(np.abs(cwt(x, cfg, RATE).coeffs), np.abs(cwt(-x, cfg, RATE).coeffs), atol=1e-12)


@pytest.mark.parametrize("f", [1.0, 2.0, 4.0])
def test_image_row_of_peak_intensity_tracks_tone(f):
    cfg = CwtConfig()
    img = render_image(cwt(tone(f), cfg, RATE))
    row = int(np.argmax(img.pixels.mean(axis=1)))
    assert abs(np.log(cfg.frequencies()[row] / f)) <= STEP + 1e-12


def test_nyquist_violation():
    with pytest.raises(ValueError, match="Nyquist"):
        cwt(np.ones(N), CwtConfig(band_hz=(0.5, 40.0)), RATE)
    with pytest.raises(ValueError):
        cwt(np.ones(1), CwtConfig(), RATE)


def test_window_object_input():
    w = Window(tone(1.5), start_index=64, label=1)
    img = window_to_image(w)
    assert img.pixels.shape == (64, 64) and img.label == 1 and img.start_index == 64


def test_render_zero_matrix():
    m = ScalogramMatrix(np.zeros((64, N), complex), np.ones(64), np.ones(64))
    img = render_image(m)
    assert img.pixels.shape == (64, 64)
    assert np.all(img.pixels == 0)


def test_render_shape_and_range(rng):
    for _ in range(5):
        m = cwt(rng.normal(size=N) * rng.uniform(0.1, 100), CwtConfig(), RATE)
        px = render_image(m).pixels
        assert px.shape == (64, 64)
        assert px.min() >= 0.0 and px.max() <= 1.0


def test_render_single_hot_row():
    coeffs = np.zeros((64, N), complex)
    coeffs[17] = 5.0
    px = render_image(ScalogramMatrix(coeffs, np.ones(64), np.ones(64))).pixels
    rows_at_one = np.flatnonzero(np.all(px == 1.0, axis=1))
    assert rows_at_one.tolist() == [17]
    assert np.count_nonzero(px) == 64


def _img(rng):
    return ScalogramImage(rng.random((64, 64)).astype(np.float32), label=0)


def test_identity_augmentation(rng):
    img = _img(rng)
    out = augment(img, AugmentParams(0.0, 0.0, 0.0, seed=5), draw_index=3)
    assert np.array_equal(out.pixels, img.pixels)


def test_flip_is_an_involution(rng):
    img = _img(rng)
    p = AugmentParams(0.0, 0.0, 1.0, seed=1)
    once = augment(img, p, 0)
    assert np.array_equal(once.pixels, img.pixels[:, ::-1])
    assert np.array_equal(augment(once, p, 1).pixels, img.pixels)


def test_augment_deterministic_and_in_range(rng):
    img = _img(rng)
    p = AugmentParams(seed=9)
    a, b = augment(img, p, 42), augment(img, p, 42)
    assert np.array_equal(a.pixels, b.pixels)
    assert not np.array_equal(a.pixels, augment(img, p, 43).pixels)
    for k in range(20):
        px = augment(img, p, k).pixels
        assert px.shape == (64, 64) and px.min() >= 0 and px.max() <= 1


def test_pure_shift_moves_content():
    px = np.zeros((64, 64), np.float32)
    px[32, 32] = 1.0
    # Draw 0 of seed 0 shifts by a fraction of a pixel or more; mass is conserved away from the border.
    out = augment(ScalogramImage(px), AugmentParams(0.0, 0.1, 0.0, seed=0), 0).pixels
    assert out[32, 32] < 1.0
    assert out.sum() == pytest.approx(1.0, abs=1e-5)


def test_augment_params_validation():
    with pytest.raises(ValueError):
        AugmentParams(max_shift=0.5)
    with pytest.raises(ValueError):
        AugmentParams(max_rotation_deg=50)


def test_sclg_round_trip(tmp_path, rng):
    imgs = rng.random((3, 64, 64)).astype(np.float32)
    save_scalograms(tmp_path / "x.sclg", imgs, [0, 1, None])
    data = (tmp_path / "x.sclg").read_bytes()
    assert data[:4] == b"SCLG" and len(data) == 20 + 3 * 64 * 64 * 4 + 3
    back, labels = load_scalograms(tmp_path / "x.sclg")
    assert np.array_equal(back, imgs)
    assert labels.tolist() == [0, 1, 255]


def test_sclg_rejects_corruption(tmp_path, rng):
    save_scalograms(tmp_path / "x.sclg", rng.random((2, 64, 64)), [0, 1])
    data = (tmp_path / "x.sclg").read_bytes()
    (tmp_path / "bad.sclg").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError, match="bad magic"):
        load_scalograms(tmp_path / "bad.sclg")
    (tmp_path / "short.sclg").write_bytes(data[:-10])
    with pytest.raises(ValueError, match="truncated"):
        load_scalograms(tmp_path / "short.sclg")


def test_pgm_export(tmp_path):
    px = np.linspace(0, 1, 64 * 64).reshape(64, 64)
    write_pgm(tmp_path / "a.pgm", px)
    data = (tmp_path / "a.pgm").read_bytes()
    assert data.startswith(b"P5\n64 64\n255\n")
    assert len(data) == len(b"P5\n64 64\n255\n") + 4096
