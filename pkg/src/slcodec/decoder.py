"""Correspondence recovery from captured frame stacks.

Normalization against the calibration pair, exhaustive soft and hard
decoding with per-pixel confidence and candidate lists, the order-prior
list decoder, the confidence-gated median filter, error metrics, and the
ratio sweep driver.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .channel import CaptureCube, NoiseModel, Scene, capture, warp
from .codebook import Codebook, build_preset
from .patterns import build_pattern_cube

# calibration contrast below this marks a pixel invalid (division guard)
CONTRAST_FLOOR = 4.0 / 255.0

# rows per work unit; fixed so results are bit-identical for any thread count
_CHUNK_ROWS = 8


def thread_count(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("SLCODEC_THREADS")
    return max(1, int(env)) if env else 1


@dataclass
class NormalizedCube:
    """Received signal mapped to [0, 1] using the calibration pair."""

    values: np.ndarray  # (n, N, M) float32
    valid: np.ndarray  # (N, M) bool


@dataclass
class DecodeResult:
    corr: np.ndarray  # (N, M) int32 estimated projector column
    disparity: np.ndarray  # (N, M) int32, m - corr
    confidence: np.ndarray  # (N, M) float32 in [0, 1]
    d1: np.ndarray  # (N, M) float32 smallest code distance
    d2: np.ndarray  # (N, M) float32 second smallest
    candidates: np.ndarray  # (N, M, L) int32 code indices, best first
    candidate_dists: np.ndarray  # (N, M, L) float32
    valid: np.ndarray  # (N, M) bool


def normalize(cap: CaptureCube) -> NormalizedCube:
    """value = clamp((I - calib_off) / (calib_on - calib_off), 0, 1); pixels
    whose calibration contrast is below the floor are flagged invalid."""
    contrast = cap.calib_on - cap.calib_off
    valid = contrast >= CONTRAST_FLOOR
    safe = np.where(valid, contrast, 1.0).astype(np.float32)
    values = np.clip((cap.frames - cap.calib_off[None]) / safe[None], 0.0, 1.0)
    values[:, ~valid] = 0.0
    return NormalizedCube(values=values.astype(np.float32), valid=valid)


def _decode_block(values: np.ndarray, neg2ct: np.ndarray, c2: np.ndarray, L: int):
    """Exhaustive nearest-code search for a (P, n) block.

    Returns top-L (index, squared distance) pairs, best first; ties go to
    the smallest code index via repeated first-occurrence argmin.
    """
    d = values @ neg2ct
    d += c2[None, :]
    P = d.shape[0]
    rows = np.arange(P)
    cand = np.empty((P, L), dtype=np.int32)
    dist = np.empty((P, L), dtype=np.float32)
    for j in range(L):
        best = np.argmin(d, axis=1)
        cand[:, j] = best
        dist[:, j] = d[rows, best]
        if j < L - 1:
            d[rows, best] = np.inf
    dist += (values * values).sum(axis=1, dtype=np.float32)[:, None]
    np.maximum(dist, 0.0, out=dist)
    return cand, dist


def _decode_cube(values: np.ndarray, levels: np.ndarray, L: int, threads: int):
    n, N, M = values.shape
    neg2ct = np.ascontiguousarray(-2.0 * levels.T, dtype=np.float32)
    c2 = (levels * levels).sum(axis=1).astype(np.float32)
    cand = np.empty((N, M, L), dtype=np.int32)
    dist = np.empty((N, M, L), dtype=np.float32)

    def work(r0):
        r1 = min(r0 + _CHUNK_ROWS, N)
        block = np.ascontiguousarray(values[:, r0:r1, :].reshape(n, -1).T)
        c, d = _decode_block(block, neg2ct, c2, L)
        cand[r0:r1] = c.reshape(r1 - r0, M, L)
        dist[r0:r1] = d.reshape(r1 - r0, M, L)

    starts = range(0, N, _CHUNK_ROWS)
    with threadpool_limits(limits=1):
        if threads <= 1:
            for r0 in starts:
                work(r0)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(work, starts))
    return cand, dist


def _result_from_candidates(cand, dist, valid) -> DecodeResult:
    N, M, L = cand.shape
    corr = np.where(valid, cand[:, :, 0], -1).astype(np.int32)
    d1 = dist[:, :, 0]
    d2 = dist[:, :, 1] if L > 1 else np.full_like(d1, np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        confidence = np.where(d2 > 0, (d2 - d1) / d2, 0.0).astype(np.float32)
    confidence = np.clip(np.where(np.isfinite(confidence), confidence, 1.0), 0.0, 1.0)
    confidence[~valid] = 0.0
    disparity = np.where(valid, np.arange(M, dtype=np.int32)[None, :] - corr, 0)
    return DecodeResult(
        corr=corr,
        disparity=disparity.astype(np.int32),
        confidence=confidence,
        d1=d1,
        d2=d2,
        candidates=cand,
        candidate_dists=dist,
        valid=valid,
    )


def soft_decode(
    norm: NormalizedCube,
    column_codes: np.ndarray,
    q: int = 2,
    l_candidates: int = 3,
    threads: int | None = None,
) -> DecodeResult:
    """Nearest-code search in the floating-point domain (squared Euclidean
    distance against symbol intensity levels), exhaustive over the projected
    column codes."""
    codes = np.asarray(column_codes)
    if codes.shape[1] != norm.values.shape[0]:
        raise ValueError(
            f"code length {codes.shape[1]} != frame count {norm.values.shape[0]}"
        )
    levels = codes.astype(np.float32) / float(max(q - 1, 1))
    L = min(max(l_candidates, 2), codes.shape[0])
    cand, dist = _decode_cube(norm.values, levels, L, thread_count(threads))
    return _result_from_candidates(cand, dist, norm.valid)


def binarize(norm: NormalizedCube, q: int = 2) -> np.ndarray:
    """Quantize normalized values to the nearest of the q symbol levels."""
    if q == 2:
        return (norm.values >= 0.5).astype(np.uint8)
    return np.clip(np.round(norm.values * (q - 1)), 0, q - 1).astype(np.uint8)


def hard_decode(
    norm: NormalizedCube,
    column_codes: np.ndarray,
    q: int = 2,
    l_candidates: int = 3,
    threads: int | None = None,
) -> DecodeResult:
    """Binarize first, then exhaustive nearest code in symbol Hamming
    distance (same tie-break as soft decoding)."""
    codes = np.asarray(column_codes)
    if codes.shape[1] != norm.values.shape[0]:
        raise ValueError(
            f"code length {codes.shape[1]} != frame count {norm.values.shape[0]}"
        )
    bits = binarize(norm, q)
    L = min(max(l_candidates, 2), codes.shape[0])
    if q == 2:
        # on 0/1 vectors the squared Euclidean kernel is exactly Hamming
        values = bits.astype(np.float32)
        levels = codes.astype(np.float32)
        cand, dist = _decode_cube(values, levels, L, thread_count(threads))
    else:
        # one-hot embedding: Hamming = n - matches, exact in the same kernel
        n, N, M = bits.shape
        hot = np.zeros((q * n, N, M), dtype=np.float32)
        for s in range(q):
            hot[s * n : (s + 1) * n] = bits == s
        chot = np.zeros((codes.shape[0], q * n), dtype=np.float32)
        for s in range(q):
            chot[:, s * n : (s + 1) * n] = codes == s
        cand, dist = _decode_cube(np.sqrt(0.5) * hot, np.sqrt(0.5) * chot, L, thread_count(threads))
        dist = np.round(dist).astype(np.float32)
    return _result_from_candidates(cand, dist, norm.valid)


def decode_vectors(vectors: np.ndarray, codes: np.ndarray, q: int = 2, L: int = 2):
    """Nearest-code decode of plain (P, n) vectors; returns (indices, d1, d2).

    Used by the correction-guarantee checks, independent of image plumbing.
    """
    scale = float(max(q - 1, 1))
    values = np.asarray(vectors, dtype=np.float32) / scale
    levels = np.asarray(codes, dtype=np.float32) / scale
    neg2ct = np.ascontiguousarray(-2.0 * levels.T)
    c2 = (levels * levels).sum(axis=1).astype(np.float32)
    with threadpool_limits(limits=1):
        cand, dist = _decode_block(values, neg2ct, c2, max(L, 2))
    return cand[:, 0], dist[:, 0], dist[:, 1]


# ---------------------------------------------------------------------------
# list decoding with the order prior


def list_decode_order_prior(result: DecodeResult, t_high: float = 0.5):
    """Enforce left-to-right projector column order along each row.

    High-confidence pixels act as anchors; a low-confidence pixel whose
    best candidate violates the corr bounds set by its nearest anchors is
    replaced by its best candidate that satisfies both bounds.  Pixels with
    no satisfying candidate keep their estimate and are flagged.
    """
    corr = result.corr.astype(np.int64)
    N, M = corr.shape
    out = corr.copy()
    flags = np.zeros((N, M), dtype=bool)
    anchors = (result.confidence > t_high) & result.valid
    cand = result.candidates.astype(np.int64)
    cdist = result.candidate_dists

    idx = np.arange(M)
    imin = np.int64(np.iinfo(np.int64).min)
    imax = np.int64(np.iinfo(np.int64).max)
    for r in range(N):
        a = anchors[r]
        if not a.any():
            continue
        # index of nearest anchor at or left / at or right of each pixel
        pos_left = np.where(a, idx, -1)
        np.maximum.accumulate(pos_left, out=pos_left)
        lo = np.where(pos_left >= 0, corr[r][np.clip(pos_left, 0, M - 1)], imin)
        pos_right = np.where(a, idx, M)
        pos_right = np.minimum.accumulate(pos_right[::-1])[::-1]
        hi = np.where(pos_right < M, corr[r][np.clip(pos_right, 0, M - 1)], imax)
        fix = ~a & result.valid[r] & ((corr[r] < lo) | (corr[r] > hi))
        if not fix.any():
            continue
        ok = (cand[r, fix] >= lo[fix, None]) & (cand[r, fix] <= hi[fix, None])
        masked = np.where(ok, cdist[r, fix], np.inf)
        pick = np.argmin(masked, axis=1)
        has = ok.any(axis=1)
        sel = cand[r, fix][np.arange(fix.sum()), pick]
        new = np.where(has, sel, corr[r, fix])
        out[r, fix] = new
        flags[r, fix] = ~has
    return out.astype(np.int32), flags


# ---------------------------------------------------------------------------
# confidence-gated median filter


def confidence_median_filter(
    result: DecodeResult, t_low: float = 0.1, t_high: float = 0.5, window: int = 5
) -> np.ndarray:
    """Replace low-confidence disparities by the lower median of the
    high-confidence disparities inside the window; pixels with no
    qualifying neighbor, and all other pixels, are left unchanged."""
    if not 0 <= t_low <= t_high <= 1:
        raise ValueError("thresholds must satisfy 0 <= t_low <= t_high <= 1")
    if window % 2 != 1 or window < 1:
        raise ValueError("window must be odd")
    disp = result.disparity.astype(np.float32)
    good = (result.confidence > t_high) & result.valid
    pad = window // 2
    dpad = np.pad(disp, pad, mode="constant", constant_values=np.inf)
    gpad = np.pad(good, pad, mode="constant", constant_values=False)
    dwin = np.lib.stride_tricks.sliding_window_view(dpad, (window, window))
    gwin = np.lib.stride_tricks.sliding_window_view(gpad, (window, window))
    w2 = window * window
    vals = np.where(gwin, dwin, np.inf).reshape(*disp.shape, w2)
    counts = gwin.reshape(*disp.shape, w2).sum(axis=-1)
    svals = np.sort(vals, axis=-1)
    med_idx = np.maximum(counts - 1, 0) // 2  # lower median
    median = np.take_along_axis(svals, med_idx[..., None], axis=-1)[..., 0]
    low = (result.confidence < t_low) & result.valid & (counts > 0)
    out = result.disparity.copy()
    out[low] = median[low].astype(out.dtype)
    return out


# ---------------------------------------------------------------------------
# metrics and sweeps


def error_rate(est_disparity: np.ndarray, scene: Scene, tolerance: int = 2) -> float:
    """Fraction of valid pixels with |est - gt| strictly above tolerance."""
    if est_disparity.shape != scene.shape:
        raise ValueError("disparity shape does not match the scene")
    mask = scene.valid
    if not mask.any():
        return 0.0
    err = np.abs(est_disparity.astype(np.int64) - scene.gt_disparity.astype(np.int64))
    return float((err[mask] > tolerance).mean())


def run_pipeline(
    scene: Scene,
    book: Codebook | str,
    power: float,
    noise: NoiseModel,
    budget: float = 1.0,
    arrangement: str | None = None,
    methods=("soft",),
    t_low: float = 0.1,
    t_high: float = 0.5,
    window: int = 5,
    threads: int | None = None,
):
    """Capture one scene with one code and run the requested decoders.

    Returns a dict method name -> disparity map, plus the soft DecodeResult
    under key '_result'.
    """
    if isinstance(book, str):
        book = build_preset(book)
    if arrangement is None:
        arrangement = "gray" if book.q == 2 else "binary"
    N, M = scene.shape
    cube = build_pattern_cube(book, N, M, arrangement)
    ideal = warp(cube, scene)
    cap = capture(ideal, scene, noise, projector_power=power, total_exposure_budget=budget)
    norm = normalize(cap)
    out = {}
    soft = soft_decode(norm, cube.column_codes, q=book.q, threads=threads)
    out["_result"] = soft
    for method in methods:
        if method == "soft":
            out["soft"] = soft.disparity
        elif method == "hard":
            out["hard"] = hard_decode(norm, cube.column_codes, q=book.q, threads=threads).disparity
        elif method == "list":
            corr, _ = list_decode_order_prior(soft, t_high=t_high)
            out["list"] = np.arange(M, dtype=np.int32)[None, :] - corr
        elif method == "median":
            out["median"] = confidence_median_filter(soft, t_low, t_high, window)
        else:
            raise ValueError(f"unknown decode method {method!r}")
    return out


def sweep(
    scene: Scene,
    book_names,
    ratios,
    noise: NoiseModel,
    seeds,
    budget: float = 1.0,
    tolerance: int = 0,
    methods=("soft",),
    threads: int | None = None,
):
    """Error-rate table over (code, projector/ambient ratio, seed).

    The projector power equals ratio times the scene ambient level; total
    exposure budget is fixed across codes, so longer codes pay with dimmer
    frames.  Rows aggregate seeds with a mean and a normal 95% CI.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    rows = []
    for name in book_names:
        book = build_preset(name) if isinstance(name, str) else name
        for ratio in ratios:
            per_method = {m: [] for m in methods}
            for seed in seeds:
                cell_noise = NoiseModel(noise.sigma_r, noise.sigma_s, noise.quant_bits, seed)
                maps = run_pipeline(
                    scene, book, power=float(ratio), noise=cell_noise,
                    budget=budget, methods=methods, threads=threads,
                )
                for m in methods:
                    per_method[m].append(error_rate(maps[m], scene, tolerance))
            row = {"code": book.name, "n": book.n, "k": book.k, "ratio": float(ratio)}
            for m in methods:
                vals = np.array(per_method[m])
                row[f"err_{m}"] = float(vals.mean())
                row[f"ci_{m}"] = float(1.96 * vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
            rows.append(row)
    return rows
