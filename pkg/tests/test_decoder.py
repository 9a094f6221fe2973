import numpy as np
import pytest

from slcodec.channel import NoiseModel, capture, procedural_scene, warp
from slcodec.codebook import build_preset
from slcodec.decoder import (
    DecodeResult,
    confidence_median_filter,
    decode_vectors,
    error_rate,
    hard_decode,
    list_decode_order_prior,
    normalize,
    run_pipeline,
    soft_decode,
    sweep,
)
from slcodec.patterns import build_pattern_cube

ZERO_NOISE = NoiseModel(sigma_r=0.0, sigma_s=0.0, quant_bits=16, seed=0)


@pytest.fixture(scope="module")
def clean_setup():
    scene = procedural_scene("slanted-plane", 24, 96, {"disp_lo": 3, "disp_hi": 12}, seed=1)
    book = build_preset("hamming15")
    cube = build_pattern_cube(book, *scene.shape, arrangement="gray")
    ideal = warp(cube, scene)
    cap = capture(ideal, scene, ZERO_NOISE, projector_power=2.0, total_exposure_budget=1.0)
    return scene, book, cube, ideal, cap


# ---------------------------------------------------------------------------
# normalize


def test_normalize_endpoints(clean_setup):
    scene, book, cube, ideal, cap = clean_setup
    norm = normalize(cap)
    on = normalize(
        type(cap)(frames=cap.calib_on[None], calib_on=cap.calib_on,
                  calib_off=cap.calib_off, exposure_scale=cap.exposure_scale)
    )
    assert np.allclose(on.values[0][on.valid], 1.0)
    off = normalize(
        type(cap)(frames=cap.calib_off[None], calib_on=cap.calib_on,
                  calib_off=cap.calib_off, exposure_scale=cap.exposure_scale)
    )
    assert np.allclose(off.values[0][off.valid], 0.0)


def test_normalize_zero_contrast_invalid(clean_setup):
    scene, book, cube, ideal, cap = clean_setup
    flat = type(cap)(
        frames=cap.frames,
        calib_on=cap.calib_off.copy(),
        calib_off=cap.calib_off,
        exposure_scale=cap.exposure_scale,
    )
    norm = normalize(flat)
    assert not norm.valid.any()


def test_noise_free_normalized_equals_warped(clean_setup):
    scene, book, cube, ideal, cap = clean_setup
    norm = normalize(cap)
    mask = norm.valid & ideal.valid
    diff = np.abs(norm.values[:, mask] - ideal.signal[:, mask])
    assert diff.max() < 1e-3  # quantizer precision at 16 bits


# ---------------------------------------------------------------------------
# soft / hard decode


def test_noise_free_soft_decode_exact(clean_setup):
    scene, book, cube, ideal, cap = clean_setup
    res = soft_decode(normalize(cap), cube.column_codes)
    mask = scene.valid
    assert error_rate(res.disparity, scene, tolerance=0) == 0.0
    assert np.allclose(res.confidence[mask], 1.0)
    assert (res.corr[mask] == ideal.corr[mask]).all()


def test_noise_free_hard_equals_soft(clean_setup):
    scene, book, cube, ideal, cap = clean_setup
    norm = normalize(cap)
    soft = soft_decode(norm, cube.column_codes)
    hard = hard_decode(norm, cube.column_codes)
    assert (soft.corr[scene.valid] == hard.corr[scene.valid]).all()


def test_decode_frame_count_mismatch(clean_setup):
    scene, book, cube, ideal, cap = clean_setup
    norm = normalize(cap)
    with pytest.raises(ValueError):
        soft_decode(norm, cube.column_codes[:, :-1])
    with pytest.raises(ValueError):
        hard_decode(norm, cube.column_codes[:, :-1])


def test_argmin_consistency(clean_setup):
    scene, book, cube, ideal, cap = clean_setup
    noisy = capture(ideal, scene, NoiseModel(0.01, 0.04, 12, 5), 2.0, 1.0)
    norm = normalize(noisy)
    res = soft_decode(norm, cube.column_codes)
    levels = cube.column_codes.astype(np.float32)
    for r, m in [(0, 20), (10, 50), (23, 95)]:
        if not res.valid[r, m]:
            continue
        v = norm.values[:, r, m]
        dists = ((v[None, :] - levels) ** 2).sum(axis=1)
        assert res.d1[r, m] == pytest.approx(dists[res.corr[r, m]], abs=1e-4)
        assert dists.min() == pytest.approx(res.d1[r, m], abs=1e-4)


def test_tie_breaks_toward_smallest_column():
    # two identical column codes: the smaller index must win and the
    # degenerate confidence collapses to zero
    codes = np.array([[1, 0, 1], [1, 0, 1], [0, 1, 0]], dtype=np.uint8)
    values = np.array([1.0, 0.0, 1.0], dtype=np.float32).reshape(3, 1, 1)
    from slcodec.decoder import NormalizedCube

    norm = NormalizedCube(values=values, valid=np.ones((1, 1), bool))
    res = soft_decode(norm, codes)
    assert res.corr[0, 0] == 0
    assert res.d1[0, 0] == res.d2[0, 0] == 0.0
    assert res.confidence[0, 0] == 0.0


def test_correction_guarantee_sample():
    rng = np.random.default_rng(2)
    for name in ("hamming15", "golay22"):
        book = build_preset(name)
        t = (book.d_min - 1) // 2
        idx = rng.integers(0, len(book), size=200)
        vecs = book.words[idx].astype(np.float32)
        for row in vecs:
            flips = rng.choice(book.n, size=t, replace=False)
            row[flips] = 1.0 - row[flips]
        dec, _, _ = decode_vectors(vecs, book.words)
        assert (dec == idx).all()


def test_hard_decode_ternary_hamming_metric():
    book = build_preset("golay12q3")
    codes = book.words[:30]
    word = codes[7].copy()
    word[3] = (word[3] + 1) % 3  # one symbol off
    values = (word.astype(np.float32) / 2.0).reshape(-1, 1, 1)
    from slcodec.decoder import NormalizedCube

    norm = NormalizedCube(values=values, valid=np.ones((1, 1), bool))
    res = hard_decode(norm, codes, q=3)
    assert res.corr[0, 0] == 7
    assert res.d1[0, 0] == 1.0


def test_threads_bit_identical(clean_setup):
    scene, book, cube, ideal, cap = clean_setup
    noisy = capture(ideal, scene, NoiseModel(0.01, 0.04, 12, 9), 2.0, 1.0)
    norm = normalize(noisy)
    a = soft_decode(norm, cube.column_codes, threads=1)
    b = soft_decode(norm, cube.column_codes, threads=4)
    assert (a.corr == b.corr).all()
    assert (a.d1 == b.d1).all()
    assert (a.candidates == b.candidates).all()


def test_confidence_bounds_under_noise(clean_setup):
    scene, book, cube, ideal, cap = clean_setup
    noisy = capture(ideal, scene, NoiseModel(0.02, 0.08, 12, 21), 1.0, 1.0)
    res = soft_decode(normalize(noisy), cube.column_codes)
    assert res.confidence.min() >= 0.0
    assert res.confidence.max() <= 1.0
    assert (res.d1 <= res.d2).all()
    exact = res.valid & (res.d1 == 0.0) & (res.d2 > 0.0)
    assert (res.confidence[exact] == 1.0).all()


# ---------------------------------------------------------------------------
# order prior


def make_result(corr, conf, candidates=None, cand_dists=None):
    corr = np.asarray(corr, dtype=np.int32)[None, :]
    conf = np.asarray(conf, dtype=np.float32)[None, :]
    M = corr.shape[1]
    L = 3
    if candidates is None:
        candidates = np.repeat(corr[:, :, None], L, axis=2)
        cand_dists = np.zeros((1, M, L), dtype=np.float32)
    disparity = np.arange(M, dtype=np.int32)[None, :] - corr
    return DecodeResult(
        corr=corr,
        disparity=disparity,
        confidence=conf,
        d1=np.zeros((1, M), np.float32),
        d2=np.ones((1, M), np.float32),
        candidates=np.asarray(candidates, dtype=np.int32),
        candidate_dists=np.asarray(cand_dists, dtype=np.float32),
        valid=np.ones((1, M), bool),
    )


def test_order_prior_all_anchors_unchanged():
    res = make_result([5, 6, 7, 8], [0.9, 0.9, 0.9, 0.9])
    corr, flags = list_decode_order_prior(res, t_high=0.5)
    assert corr[0].tolist() == [5, 6, 7, 8]
    assert not flags.any()


def test_order_prior_hand_fixture():
    cand = np.zeros((1, 5, 3), dtype=np.int32)
    dists = np.zeros((1, 5, 3), dtype=np.float32)
    for m, c in enumerate([10, 11, 500, 13, 14]):
        cand[0, m] = [c, c, c]
    cand[0, 2] = [500, 12, 700]
    dists[0, 2] = [0.1, 0.3, 0.2]
    res = make_result([10, 11, 500, 13, 14], [0.9, 0.9, 0.05, 0.9, 0.9], cand, dists)
    corr, flags = list_decode_order_prior(res, t_high=0.5)
    assert corr[0, 2] == 12
    assert not flags[0, 2]
    assert corr[0].tolist() == [10, 11, 12, 13, 14]


def test_order_prior_flags_unsatisfiable():
    cand = np.zeros((1, 3, 3), dtype=np.int32)
    dists = np.zeros((1, 3, 3), dtype=np.float32)
    cand[0, 0] = [5, 5, 5]
    cand[0, 1] = [50, 60, 70]
    cand[0, 2] = [7, 7, 7]
    res = make_result([5, 50, 7], [0.9, 0.1, 0.9], cand, dists)
    corr, flags = list_decode_order_prior(res, t_high=0.5)
    assert corr[0, 1] == 50  # kept
    assert flags[0, 1]


def test_order_prior_never_touches_anchors(clean_setup):
    scene, book, cube, ideal, cap = clean_setup
    noisy = capture(ideal, scene, NoiseModel(0.02, 0.08, 12, 3), 1.0, 1.0)
    res = soft_decode(normalize(noisy), cube.column_codes)
    corr, _ = list_decode_order_prior(res, t_high=0.5)
    anchors = (res.confidence > 0.5) & res.valid
    assert (corr[anchors] == res.corr[anchors]).all()


def test_order_prior_monotone_after_correction(clean_setup):
    # anchors are exact on a monotone scene: corrected map must respect them
    scene, book, cube, ideal, cap = clean_setup
    noisy = capture(ideal, scene, NoiseModel(0.01, 0.1, 12, 4), 1.5, 1.0)
    res = soft_decode(normalize(noisy), cube.column_codes)
    corr, flags = list_decode_order_prior(res, t_high=0.6)
    anchors = (res.confidence > 0.6) & res.valid
    for r in range(scene.shape[0]):
        cols = np.nonzero(anchors[r])[0]
        if len(cols) < 2:
            continue
        lo = corr[r, cols[0]]
        for m in range(cols[0], cols[-1] + 1):
            if flags[r, m] or not res.valid[r, m]:
                continue
            nxt = cols[cols >= m]
            hi = corr[r, nxt[0]] if len(nxt) else None
            if anchors[r, m]:
                lo = corr[r, m]
                continue
            assert corr[r, m] >= lo
            if hi is not None:
                assert corr[r, m] <= hi


# ---------------------------------------------------------------------------
# confidence median filter


def test_median_identity_when_confident():
    res = make_result([4, 4, 4, 4, 4], [1.0] * 5)
    out = confidence_median_filter(res, 0.1, 0.5, window=3)
    assert (out == res.disparity).all()


def test_median_replaces_single_outlier():
    corr = np.full((5, 5), 10, dtype=np.int32)
    conf = np.full((5, 5), 0.9, dtype=np.float32)
    corr[2, 2] = 100
    conf[2, 2] = 0.01
    disparity = np.arange(5, dtype=np.int32)[None, :] - corr
    res = DecodeResult(
        corr=corr, disparity=disparity, confidence=conf,
        d1=np.zeros((5, 5), np.float32), d2=np.ones((5, 5), np.float32),
        candidates=np.repeat(corr[:, :, None], 3, axis=2),
        candidate_dists=np.zeros((5, 5, 3), np.float32),
        valid=np.ones((5, 5), bool),
    )
    out = confidence_median_filter(res, 0.1, 0.5, window=5)
    assert out[2, 2] == 2 - 10
    untouched = np.ones((5, 5), bool)
    untouched[2, 2] = False
    assert (out[untouched] == disparity[untouched]).all()


def test_median_lower_of_even_count():
    conf = np.array([[0.9, 0.01, 0.9]], dtype=np.float32)
    corr = np.array([[-3, 50, -7]], dtype=np.int32)  # disparities 3, -48, 9
    disparity = np.arange(3, dtype=np.int32)[None, :] - corr
    res = DecodeResult(
        corr=corr, disparity=disparity, confidence=conf,
        d1=np.zeros((1, 3), np.float32), d2=np.ones((1, 3), np.float32),
        candidates=np.repeat(corr[:, :, None], 3, axis=2),
        candidate_dists=np.zeros((1, 3, 3), np.float32),
        valid=np.ones((1, 3), bool),
    )
    out = confidence_median_filter(res, 0.1, 0.5, window=3)
    assert out[0, 1] == min(disparity[0, 0], disparity[0, 2])


def test_median_no_qualifying_neighbor_unchanged():
    res = make_result([9, 70, 11], [0.3, 0.01, 0.3])
    out = confidence_median_filter(res, 0.1, 0.5, window=3)
    assert (out == res.disparity).all()


def test_median_idempotent_on_converged():
    corr = np.full((4, 6), 5, dtype=np.int32)
    conf = np.full((4, 6), 0.9, dtype=np.float32)
    corr[1, 3] = 90
    conf[1, 3] = 0.02
    disparity = np.arange(6, dtype=np.int32)[None, :] - corr
    res = DecodeResult(
        corr=corr, disparity=disparity, confidence=conf,
        d1=np.zeros((4, 6), np.float32), d2=np.ones((4, 6), np.float32),
        candidates=np.repeat(corr[:, :, None], 3, axis=2),
        candidate_dists=np.zeros((4, 6, 3), np.float32),
        valid=np.ones((4, 6), bool),
    )
    once = confidence_median_filter(res, 0.1, 0.5, window=3)
    res2 = DecodeResult(
        corr=res.corr, disparity=once, confidence=res.confidence,
        d1=res.d1, d2=res.d2, candidates=res.candidates,
        candidate_dists=res.candidate_dists, valid=res.valid,
    )
    twice = confidence_median_filter(res2, 0.1, 0.5, window=3)
    assert (twice == once).all()


def test_median_threshold_validation():
    res = make_result([1, 2], [0.5, 0.5])
    with pytest.raises(ValueError):
        confidence_median_filter(res, 0.6, 0.5)
    with pytest.raises(ValueError):
        confidence_median_filter(res, 0.1, 0.5, window=4)


# ---------------------------------------------------------------------------
# metrics


def test_error_rate_exact():
    scene = procedural_scene("slanted-plane", 20, 80, {"disp_lo": 2, "disp_hi": 10})
    assert error_rate(scene.gt_disparity, scene) == 0.0


def test_error_rate_single_bad_pixel():
    scene = procedural_scene("slanted-plane", 16, 16, {"disp_lo": 0, "disp_hi": 0})
    est = scene.gt_disparity.copy()
    est[3, 4] += 10
    n_valid = scene.valid.sum()
    assert error_rate(est, scene) == pytest.approx(1.0 / n_valid)


def test_error_rate_tolerance_boundary():
    scene = procedural_scene("slanted-plane", 16, 16, {"disp_lo": 0, "disp_hi": 0})
    est = scene.gt_disparity.copy()
    est += 2  # exactly at tolerance: not an error
    assert error_rate(est, scene, tolerance=2) == 0.0
    est += 1
    assert error_rate(est, scene, tolerance=2) == 1.0


# ---------------------------------------------------------------------------
# sweep


def test_sweep_schema_and_reproducibility():
    scene = procedural_scene("slanted-plane", 16, 32, {"disp_lo": 2, "disp_hi": 6})
    noise = NoiseModel(0.004, 0.04, 12, 0)
    rows1 = sweep(scene, ["hamming15"], [0.5, 4.0], noise, seeds=[1, 2], budget=0.4)
    rows2 = sweep(scene, ["hamming15"], [0.5, 4.0], noise, seeds=[1, 2], budget=0.4)
    assert rows1 == rows2
    assert len(rows1) == 2
    for row in rows1:
        assert set(row) >= {"code", "n", "k", "ratio", "err_soft", "ci_soft"}


def test_sweep_requires_seed():
    scene = procedural_scene("slanted-plane", 16, 32)
    with pytest.raises(ValueError):
        sweep(scene, ["hamming15"], [1.0], NoiseModel(), seeds=[])


def test_run_pipeline_methods():
    scene = procedural_scene("slanted-plane", 16, 32, {"disp_lo": 2, "disp_hi": 6})
    maps = run_pipeline(
        scene, "hamming15", power=3.0, noise=NoiseModel(0.004, 0.02, 12, 1),
        budget=1.0, methods=("soft", "hard", "list", "median"),
    )
    for key in ("soft", "hard", "list", "median"):
        assert maps[key].shape == scene.shape


def test_shot_noise_parameter_shifts_curve():
    # heavier shot noise moves the error curve toward higher ratios while
    # keeping it monotone in ratio
    scene = procedural_scene("slanted-plane", 128, 256, {"disp_lo": 4, "disp_hi": 24}, seed=7)
    ratios = [0.2, 0.4, 0.8, 1.5, 3.0]
    curves = {}
    for sigma_s in (0.015, 0.04):
        rows = sweep(scene, ["golay22"], ratios, NoiseModel(0.004, sigma_s, 12, 0),
                     seeds=[0, 1], tolerance=0)
        curves[sigma_s] = [r["err_soft"] for r in rows]
    for lo, hi in zip(curves[0.015], curves[0.04]):
        assert hi >= lo - 0.01
    for curve in curves.values():
        for a, b in zip(curve, curve[1:]):
            assert b <= a + 0.02
