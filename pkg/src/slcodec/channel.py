"""Camera-side measurement simulator.

Implements the image formation chain: disparity warping of the projected
pattern, albedo and ambient scaling under a fixed total exposure budget
split across frames, heteroscedastic Gaussian noise (readout plus
signal-dependent shot term), clamping, uniform quantization, calibration
frames, and a parametric code-mixing model standing in for global
illumination.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .imgio import read_pfm
from .patterns import PatternCube


@dataclass
class Scene:
    """Ground truth for one synthetic capture.

    gt_disparity is integer projector-column offset: camera pixel (r, m)
    observes projector column m - gt_disparity[r, m].
    """

    gt_disparity: np.ndarray  # (N, M) int32
    albedo: np.ndarray  # (N, M) float32 in [0, 1]
    ambient: np.ndarray  # (N, M) float32 >= 0
    valid: np.ndarray  # (N, M) bool
    max_disparity: int
    band: np.ndarray | None = None  # contamination region, if any

    @property
    def shape(self):
        return self.gt_disparity.shape

    def corr(self) -> np.ndarray:
        cols = np.arange(self.shape[1], dtype=np.int32)[None, :]
        return cols - self.gt_disparity

    def validate(self):
        N, M = self.shape
        src = self.corr()
        if not ((src[self.valid] >= 0).all() and (src[self.valid] < M).all()):
            raise ValueError("valid pixels must map inside the projector")
        if self.albedo.min() < 0 or self.albedo.max() > 1:
            raise ValueError("albedo must lie in [0, 1]")
        if self.ambient.min() < 0:
            raise ValueError("ambient must be non-negative")
        return self


@dataclass(frozen=True)
class NoiseModel:
    """Heteroscedastic Gaussian channel: variance sigma_r^2 + sigma_s^2 * I
    for signal I normalized to [0, 1], then quantization."""

    sigma_r: float = 0.004
    sigma_s: float = 0.04
    quant_bits: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.sigma_r < 0 or self.sigma_s < 0:
            raise ValueError("noise coefficients must be non-negative")
        if not 1 <= self.quant_bits <= 16:
            raise ValueError("quant_bits must be in [1, 16]")


@dataclass
class IdealCube:
    """Noise-free warped signal term plus the correspondence it encodes."""

    signal: np.ndarray  # (n, N, M) float32 in [0, 1]
    corr: np.ndarray  # (N, M) int32, -1 where invalid
    valid: np.ndarray  # (N, M) bool


@dataclass
class CaptureCube:
    """Noisy captured frames with the matching calibration pair."""

    frames: np.ndarray  # (n, N, M) float32
    calib_on: np.ndarray  # (N, M) float32
    calib_off: np.ndarray  # (N, M) float32
    exposure_scale: float

    @property
    def n_frames(self):
        return self.frames.shape[0]


def warp(cube: PatternCube, scene: Scene) -> IdealCube:
    """Pixel (r, m) of frame i receives P_i[r, m - disparity], mapped to
    intensity levels symbol / (q - 1); out-of-range pixels become invalid."""
    N, M = scene.shape
    if cube.shape != (N, M):
        raise ValueError(f"pattern {cube.shape} does not match scene {scene.shape}")
    src = scene.corr()
    valid = scene.valid & (src >= 0) & (src < M)
    src_safe = np.clip(src, 0, M - 1)
    levels = cube.frames.astype(np.float32) / float(max(cube.q - 1, 1))
    rows = np.arange(N)[:, None]
    signal = levels[:, rows, src_safe]
    signal[:, ~valid] = 0.0
    corr = np.where(valid, src, -1).astype(np.int32)
    return IdealCube(signal=signal, corr=corr, valid=valid)


def quantize(x: np.ndarray, bits: int) -> np.ndarray:
    """Mid-rise uniform quantizer on [0, 1]."""
    levels = float(1 << bits)
    q = (np.floor(x * levels) + 0.5) / levels
    return np.clip(q, 0.5 / levels, 1.0 - 0.5 / levels).astype(np.float32)


def capture(
    ideal: IdealCube,
    scene: Scene,
    noise: NoiseModel,
    projector_power: float,
    total_exposure_budget: float,
    n_frames: int | None = None,
    calib_pattern_on: np.ndarray | None = None,
    calib_frames: int = 8,
) -> CaptureCube:
    """Simulate the camera stack for one pattern sequence.

    Per-frame clean signal is (power * warped * albedo + ambient) scaled by
    budget / n_frames, so the photon budget is independent of the frame
    count.  Noise, clamping, and quantization follow the noise model; the
    calibration pair (projector all on / all off) is captured under the
    same parameters as an average of ``calib_frames`` exposures.  The pair
    is taken once per acquisition, so its longer effective exposure does
    not enter the per-frame budget; single-exposure calibration injects a
    per-pixel common-mode error no code redundancy can correct.
    Deterministic for a given seed.
    """
    if total_exposure_budget <= 0:
        raise ValueError("exposure budget must be positive")
    if calib_frames < 1:
        raise ValueError("calib_frames must be >= 1")
    n = n_frames if n_frames is not None else ideal.signal.shape[0]
    t = total_exposure_budget / n
    albedo = scene.albedo[None, :, :]
    ambient = scene.ambient[None, :, :]
    clean = (projector_power * ideal.signal * albedo + ambient) * t
    rng = np.random.Generator(np.random.Philox(noise.seed))

    def realize(mean):
        sigma = np.sqrt(noise.sigma_r**2 + noise.sigma_s**2 * mean)
        noisy = mean + rng.standard_normal(mean.shape, dtype=np.float32) * sigma
        return quantize(np.clip(noisy, 0.0, 1.0), noise.quant_bits)

    frames = realize(clean.astype(np.float32))
    if calib_pattern_on is None:
        calib_pattern_on = ideal.valid.astype(np.float32)
    on_clean = ((projector_power * calib_pattern_on * scene.albedo + scene.ambient) * t).astype(np.float32)
    off_clean = (scene.ambient * t).astype(np.float32)
    calib_on = np.mean([realize(on_clean) for _ in range(calib_frames)], axis=0, dtype=np.float32)
    calib_off = np.mean([realize(off_clean) for _ in range(calib_frames)], axis=0, dtype=np.float32)
    return CaptureCube(frames=frames, calib_on=calib_on, calib_off=calib_off, exposure_scale=t)


def mix_global(
    ideal: IdealCube,
    alpha: float,
    kernel_radius: int,
    active_column_mask: np.ndarray | None = None,
    region: np.ndarray | None = None,
    window_offset: int = 0,
) -> tuple[IdealCube, np.ndarray]:
    """Parametric code mixing: each pixel becomes (1 - alpha) * own plus
    alpha * mean of the signals of active neighboring columns within
    ``kernel_radius`` (optionally centered ``window_offset`` columns away,
    which emulates burst-like inter-reflection from a distant surface).

    Only columns whose mask bit is on contribute, so switching projector
    columns off removes their contamination.  Returns the mixed cube and
    the mask of pixels whose signal actually changed.
    """
    if kernel_radius < 1:
        raise ValueError("kernel radius must be >= 1")
    n, N, M = ideal.signal.shape
    contrib_ok = ideal.valid.copy()
    if active_column_mask is not None:
        active_column_mask = np.asarray(active_column_mask, bool)
        contrib_ok &= np.where(ideal.corr >= 0, active_column_mask[np.clip(ideal.corr, 0, M - 1)], False)
    total = np.zeros_like(ideal.signal)
    count = np.zeros((N, M), dtype=np.float32)
    for off in range(window_offset - kernel_radius, window_offset + kernel_radius + 1):
        if off == 0:
            continue
        # destination column m takes source column m + off
        dst = slice(max(0, -off), M - max(0, off))
        srcs = slice(max(0, off), M - max(0, -off))
        ok = contrib_ok[:, srcs]
        total[:, :, dst] += ideal.signal[:, :, srcs] * ok[None, :, :]
        count[:, dst] += ok
    mean = np.divide(total, count[None, :, :], out=np.zeros_like(total), where=count[None] > 0)
    mixed = (1.0 - alpha) * ideal.signal + alpha * mean
    apply = ideal.valid if region is None else (ideal.valid & np.asarray(region, bool))
    out = np.where(apply[None, :, :], mixed, ideal.signal).astype(np.float32)
    changed = apply & (np.abs(out - ideal.signal).max(axis=0) > 1e-6)
    return IdealCube(signal=out, corr=ideal.corr, valid=ideal.valid), changed


# ---------------------------------------------------------------------------
# scenes


def _smooth_field(rng, N, M, lo, hi, cell=16):
    coarse = rng.random((N // cell + 2, M // cell + 2))
    up = np.kron(coarse, np.ones((cell, cell)))[:N, :M]
    return (lo + (hi - lo) * up).astype(np.float32)


def procedural_scene(kind: str, N: int, M: int, params: dict | None = None, seed: int = 0) -> Scene:
    """Synthetic ground-truth scenes: 'slanted-plane', 'steps', or
    'v-groove-band' (a contamination band for the error-detection loop)."""
    if N < 16 or M < 16:
        raise ValueError("scene dimensions must be at least 16")
    p = dict(params or {})
    rng = np.random.default_rng(seed)
    albedo = _smooth_field(rng, N, M, p.get("albedo_lo", 0.55), p.get("albedo_hi", 0.95))
    ambient = np.full((N, M), p.get("ambient", 1.0), dtype=np.float32)
    band = None
    cols = np.arange(M)

    if kind == "slanted-plane":
        d0 = p.get("disp_lo", 4)
        d1 = p.get("disp_hi", min(24, M // 4))
        slope = p.get("slope")
        if slope is not None:
            row = d0 + slope * cols
        else:
            row = d0 + (d1 - d0) * cols / max(M - 1, 1)
        disp = np.tile(np.round(row).astype(np.int32), (N, 1))
    elif kind == "steps":
        n_steps = int(p.get("n_steps", 4))
        d0 = p.get("disp_lo", 4)
        d1 = p.get("disp_hi", min(24, M // 4))
        edges = np.linspace(0, M, n_steps + 2).astype(int)[1:-1]
        values = np.round(np.linspace(d0, d1, n_steps + 1)).astype(np.int32)
        # ensure every edge is a real discontinuity
        for i in range(1, len(values)):
            if values[i] == values[i - 1]:
                values[i] += 1
        row = np.full(M, values[0], dtype=np.int32)
        for i, e in enumerate(edges):
            row[e:] = values[i + 1]
        disp = np.tile(row, (N, 1))
    elif kind == "v-groove-band":
        d0 = p.get("disp_lo", 4)
        d1 = p.get("disp_hi", min(20, M // 8))
        row = np.round(d0 + (d1 - d0) * cols / max(M - 1, 1)).astype(np.int32)
        start = int(p.get("band_start", 3 * M // 8))
        width = int(p.get("band_width", M // 4))
        stop = min(start + width, M)
        # shallow V profile inside the groove
        mid = (start + stop) / 2.0
        depth = int(p.get("groove_depth", 3))
        vshape = depth * (1.0 - np.abs(cols[start:stop] - mid) / max((stop - start) / 2.0, 1))
        row = np.tile(row, (N, 1))
        row[:, start:stop] += np.round(vshape).astype(np.int32)
        disp = row
        band = np.zeros((N, M), dtype=bool)
        band[:, start:stop] = True
    else:
        raise ValueError(f"unknown scene kind {kind!r}")

    src = cols[None, :] - disp
    valid = (src >= 0) & (src < M)
    if kind == "v-groove-band":
        # slatted reflector strip facing the groove: all but every
        # slat_period-th column is self-shadowed, so each groove pixel
        # sees a single bright column per mixing window (burst errors)
        period = int(p.get("slat_period", 3))
        offset = int(p.get("src_offset", width + 8))
        if period > 0:
            s0 = max(start + offset - 4, 0)
            s1 = min(stop + offset + 4, M)
            strip = cols[s0:s1]
            shadow = (strip - (start + offset)) % period != 0
            valid[:, s0:s1] &= ~shadow[None, :]
    scene = Scene(
        gt_disparity=disp.astype(np.int32),
        albedo=albedo,
        ambient=ambient,
        valid=valid,
        max_disparity=int(disp[valid].max(initial=0)),
        band=band,
    )
    return scene.validate()


def load_pfm_disparity(path, albedo: float = 0.8, ambient: float = 1.0) -> Scene:
    """Scene from a PFM disparity map; non-finite or out-of-range pixels are
    masked invalid and disparities are rounded to integer columns."""
    data, _ = read_pfm(path)
    N, M = data.shape
    finite = np.isfinite(data)
    disp = np.zeros((N, M), dtype=np.int32)
    disp[finite] = np.round(data[finite]).astype(np.int32)
    src = np.arange(M)[None, :] - disp
    valid = finite & (src >= 0) & (src < M)
    return Scene(
        gt_disparity=disp,
        albedo=np.full((N, M), albedo, dtype=np.float32),
        ambient=np.full((N, M), ambient, dtype=np.float32),
        valid=valid,
        max_disparity=int(disp[valid].max(initial=0)),
    ).validate()


def restrict_cube(cube: PatternCube, active_columns: np.ndarray) -> PatternCube:
    """Black out projector columns whose mask bit is off (adaptive loop)."""
    active = np.asarray(active_columns, bool)
    frames = cube.frames * active[None, None, :].astype(cube.frames.dtype)
    codes = cube.column_codes * active[:, None].astype(cube.column_codes.dtype)
    return replace(cube, frames=frames, column_codes=codes)
