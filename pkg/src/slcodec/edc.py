"""Error detection and the adaptive reprojection loop.

Parity checking is codebook membership of the binarized per-pixel string:
any string outside the codebook proves an error.  The adaptive loop uses
the resulting error map to retire projector columns whose pixels decoded
correctly, shrinking global-illumination style contamination round by
round.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import NoiseModel, Scene, capture, mix_global, restrict_cube, warp
from .codebook import Codebook, build_preset, pack_words
from .decoder import binarize, normalize, soft_decode
from .patterns import PatternCube, build_pattern_cube


def vgroove_demo_config(N: int = 128, M: int = 256) -> dict:
    """Matched scene and mixing parameters for the adaptive-loop demo.

    The groove band is contaminated by a slatted bright strip one band
    width to its right, so each groove pixel mixes with a single distant
    column (burst errors the parity check can see)."""
    band_start = 3 * M // 8
    band_width = M // 4
    offset = band_width + 8
    return {
        "N": N,
        "M": M,
        "scene_params": {
            "band_start": band_start,
            "band_width": band_width,
            "src_offset": offset,
            "slat_period": 3,
        },
        "mix": {"mix_alpha": 0.5, "mix_radius": 1, "mix_offset": offset},
    }


def xor02_data_indices(M: int, k: int = 10, base_frame: int = 8) -> np.ndarray:
    """Column data indices that realize the high-frequency transform: the
    gray string of each column is XORed with its base-frame bit (the base
    bit itself is kept)."""
    m = np.arange(M, dtype=np.int64)
    g = m ^ (m >> 1)
    base_bit_pos = k - 1 - base_frame  # frame 0 is the most significant bit
    base_on = (g >> base_bit_pos) & 1
    flip_mask = ((1 << k) - 1) ^ (1 << base_bit_pos)
    return np.where(base_on == 1, g ^ flip_mask, g)


def build_edc_cube(
    N: int, M: int, style: str = "xor02", base_frame: int = 8
) -> tuple[PatternCube, Codebook]:
    """Pattern cube whose columns carry CRC-5 protected strings.

    'xor02' feeds the XOR-transformed gray string to the CRC encoder (all
    frames high frequency); 'gray' is the plain gray + CRC proof of
    concept.  Either way the projected codebook is the (15, 10, 4) CRC
    book, because both input maps permute the full 10-bit data space.
    """
    book = build_preset("crc5")
    if style == "xor02":
        arrangement = xor02_data_indices(M, k=book.k, base_frame=base_frame)
    elif style == "gray":
        arrangement = "gray"
    else:
        raise ValueError(f"unknown EDC pattern style {style!r}")
    cube = build_pattern_cube(book, N, M, arrangement)
    return cube, book


# ---------------------------------------------------------------------------
# parity check


def parity_check(bits: np.ndarray, book: Codebook, valid: np.ndarray | None = None) -> np.ndarray:
    """Error mask: a pixel is flagged iff its binarized string is not a
    codebook member (equivalent to a nonzero syndrome for linear presets).
    Defined only on valid pixels; invalid ones are never flagged."""
    if bits.shape[0] != book.n:
        raise ValueError(f"string length {bits.shape[0]} != n={book.n}")
    flat = bits.reshape(book.n, -1).T
    keys = pack_words(flat.astype(np.uint64), book.q)
    members = np.isin(keys, _member_keys(book)).reshape(bits.shape[1:])
    flagged = ~members
    if valid is not None:
        flagged &= valid
    return flagged


_MEMBER_CACHE: dict[bytes, np.ndarray] = {}


def _member_keys(book: Codebook) -> np.ndarray:
    key = book.words.tobytes()
    if key not in _MEMBER_CACHE:
        _MEMBER_CACHE[key] = np.sort(pack_words(book.words, book.q))
    return _MEMBER_CACHE[key]


def member_data_indices(bits: np.ndarray, book: Codebook) -> np.ndarray:
    """Data index of each pixel's string when it is an exact codebook member,
    else -1.  Requires a systematic codebook (prefix = data digits)."""
    if not book.systematic:
        raise ValueError("member lookup requires a systematic codebook")
    n = book.n
    flat = bits.reshape(n, -1).T
    keys = pack_words(flat.astype(np.uint64), book.q)
    member = np.isin(keys, _member_keys(book))
    weights = book.q ** np.arange(book.k - 1, -1, -1, dtype=np.int64)
    data = (flat[:, : book.k].astype(np.int64) * weights[None, :]).sum(axis=1)
    return np.where(member, data, -1).reshape(bits.shape[1:])


def detection_report(mask: np.ndarray, truth: np.ndarray, valid: np.ndarray | None = None):
    """Precision and recall of the error mask against the pixels the
    simulator actually corrupted."""
    mask = np.asarray(mask, bool)
    truth = np.asarray(truth, bool)
    if valid is not None:
        mask = mask & valid
        truth = truth & valid
    tp = (mask & truth).sum()
    precision = float(tp / mask.sum()) if mask.any() else 1.0
    recall = float(tp / truth.sum()) if truth.any() else 1.0
    return precision, recall


# ---------------------------------------------------------------------------
# adaptive loop


@dataclass
class AdaptiveResult:
    disparity: np.ndarray  # committed + best-effort estimates
    iterations: int
    frames_used: int
    converged: bool
    stop_reason: str  # "clean" | "unchanged" | "max_iters"
    resolved: np.ndarray  # pixels whose disparity was committed
    active_columns: np.ndarray | None = None  # final projector column mask
    error_masks: list = field(default_factory=list)  # per-iteration flags
    disparity_snapshots: list = field(default_factory=list)  # per-iteration maps
    active_history: list = field(default_factory=list)  # active column counts
    corrupted: np.ndarray | None = None  # ground-truth mixed pixels, iter 1


def adaptive_loop(
    scene: Scene,
    cube: PatternCube,
    book: Codebook,
    noise: NoiseModel,
    power: float = 4.0,
    budget: float = 1.0,
    mix_alpha: float = 0.5,
    mix_radius: int = 2,
    mix_offset: int = 0,
    max_iters: int = 5,
    threads: int | None = None,
) -> AdaptiveResult:
    """Detect-mask-reproject until the error mask is empty or unchanged.

    Per iteration: project only the still-active columns, capture with the
    mixing model honoring that mask, binarize, parity check, and commit
    every pixel whose string is an exact member that agrees with the soft
    decode and implies a disparity inside the scene range.  A column stays
    active while any uncommitted pixel's candidate list references it with
    a plausible disparity.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    N, M = scene.shape
    cols = np.arange(M, dtype=np.int64)
    active = np.ones(M, dtype=bool)
    resolved = np.zeros((N, M), dtype=bool)
    disparity = np.zeros((N, M), dtype=np.int32)
    last_soft = np.zeros((N, M), dtype=np.int32)
    result = AdaptiveResult(
        disparity=disparity, iterations=0, frames_used=0, converged=False,
        stop_reason="max_iters", resolved=resolved,
    )
    prev_flagged = None
    inv = _inverse_arrangement(cube, M)

    for it in range(max_iters):
        lit = restrict_cube(cube, active)
        ideal = warp(lit, scene)
        mixed, changed = mix_global(
            ideal, mix_alpha, mix_radius,
            active_column_mask=active, region=scene.band, window_offset=mix_offset,
        )
        if it == 0:
            result.corrupted = changed
        on_ideal = type(ideal)(
            signal=(ideal.valid & active[np.clip(ideal.corr, 0, M - 1)])[None].astype(np.float32),
            corr=ideal.corr, valid=ideal.valid,
        )
        on_mixed, _ = mix_global(
            on_ideal, mix_alpha, mix_radius,
            active_column_mask=active, region=scene.band, window_offset=mix_offset,
        )
        iter_noise = NoiseModel(noise.sigma_r, noise.sigma_s, noise.quant_bits, noise.seed + 1000 * it)
        cap = capture(
            mixed, scene, iter_noise, projector_power=power,
            total_exposure_budget=budget, calib_pattern_on=on_mixed.signal[0],
        )
        norm = normalize(cap)
        bits = binarize(norm, book.q)
        data_idx = member_data_indices(bits, book)
        member = data_idx >= 0
        est_col = np.where(member, inv[np.clip(data_idx, 0, len(inv) - 1)], -1)
        member &= est_col >= 0

        soft = soft_decode(norm, lit.column_codes, q=book.q, threads=threads)
        live = norm.valid & scene.valid & ~resolved
        flagged = parity_check(bits, book, valid=live)
        result.error_masks.append(flagged)
        result.active_history.append(int(active.sum()))
        result.iterations = it + 1
        result.frames_used += cube.n_frames
        last_soft = np.where(live, soft.disparity, last_soft)

        disp_est = cols[None, :] - est_col
        commit = (
            live
            & member
            & (soft.corr == est_col)
            & (disp_est >= 0)
            & (disp_est <= scene.max_disparity)
        )
        disparity[commit] = disp_est[commit]
        resolved |= commit
        result.disparity_snapshots.append(
            np.where(resolved, disparity, last_soft).astype(np.int32)
        )

        if not flagged.any():
            result.converged = True
            result.stop_reason = "clean"
            break
        if prev_flagged is not None and (flagged == prev_flagged).all():
            result.stop_reason = "unchanged"
            break
        prev_flagged = flagged

        # retire columns no uncommitted pixel plausibly references
        unresolved = scene.valid & ~resolved
        cand = soft.candidates[unresolved]
        pix_m = np.broadcast_to(cols[None, :], (N, M))[unresolved][:, None]
        plaus = (cand >= 0) & (pix_m - cand >= 0) & (pix_m - cand <= scene.max_disparity)
        referenced = np.zeros(M, dtype=bool)
        referenced[np.unique(cand[plaus])] = True
        active &= referenced

    result.disparity = np.where(resolved, disparity, last_soft).astype(np.int32)
    result.active_columns = active
    return result


def _inverse_arrangement(cube: PatternCube, M: int) -> np.ndarray:
    if cube.arrangement is None:
        raise ValueError("adaptive loop needs a cube with a known arrangement")
    size = int(cube.arrangement.max()) + 1
    inv = np.full(size, -1, dtype=np.int64)
    inv[cube.arrangement] = np.arange(M, dtype=np.int64)
    return inv
