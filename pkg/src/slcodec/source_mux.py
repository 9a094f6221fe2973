"""Light source encoding: device-specific chip codes, event-camera and
light-curtain simulators, and the matched filtering that rejects
cross-device interference."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .channel import NoiseModel


@dataclass(frozen=True)
class ChipCode:
    """Device-specific temporal signature replacing each on period."""

    bits: np.ndarray
    device_id: str = ""

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.size < 2:
            raise ValueError("chip must be at least two slots long")
        if not bits.any():
            raise ValueError("chip must not be all zero")
        object.__setattr__(self, "bits", bits)
        self.bits.setflags(write=False)

    def __len__(self):
        return self.bits.size


def chip(spec, device_id: str = "") -> ChipCode:
    if isinstance(spec, ChipCode):
        return spec
    if isinstance(spec, str):
        return ChipCode(np.array([int(c) for c in spec], dtype=np.uint8), device_id)
    return ChipCode(np.asarray(spec, dtype=np.uint8), device_id)


@dataclass
class EventStream:
    """Sparse polarity events: (time slot, pixel index, +1 or -1)."""

    t: np.ndarray
    pixel: np.ndarray
    polarity: np.ndarray
    n_steps: int
    n_pixels: int

    def __len__(self):
        return self.t.size


@dataclass
class DetectionFrame:
    """Per scan slot and pixel: detection flag plus matched score."""

    detected: np.ndarray  # (slots, pixels) bool
    score: np.ndarray  # (slots, pixels) float32 in [0, 1]


# ---------------------------------------------------------------------------
# chip expansion


def chip_expand(timeline, code: ChipCode | str) -> np.ndarray:
    """Each on period becomes the chip sequence, each off period all zeros;
    the output is len(timeline) * len(chip) slots."""
    code = chip(code)
    timeline = np.asarray(
        [int(c) for c in timeline] if isinstance(timeline, str) else timeline,
        dtype=np.uint8,
    )
    if timeline.size == 0:
        raise ValueError("empty timeline")
    return (timeline[:, None] * code.bits[None, :]).reshape(-1)


def collapse_timeline(expanded: np.ndarray, code: ChipCode | str) -> np.ndarray:
    """Majority vote over the chip's on slots recovers the on/off sequence
    of an uncorrupted expansion."""
    code = chip(code)
    expanded = np.asarray(expanded, dtype=np.uint8)
    if expanded.size % len(code):
        raise ValueError("expanded length is not a whole number of chip periods")
    periods = expanded.reshape(-1, len(code))
    votes = (periods * code.bits[None, :]).sum(axis=1)
    return (2 * votes > code.bits.sum()).astype(np.uint8)


# ---------------------------------------------------------------------------
# event camera


def simulate_events(intensity: np.ndarray, threshold: float = 0.5) -> EventStream:
    """Events fire where |I(t) - I(t-1)| exceeds the contrast threshold,
    with a dark state before the first slot; polarity is the sign of the
    change."""
    if threshold <= 0:
        raise ValueError("contrast threshold must be positive")
    intensity = np.atleast_2d(np.asarray(intensity, dtype=np.float32))
    if intensity.ndim != 2:
        raise ValueError("intensity must be (time, pixels)")
    prev = np.vstack([np.zeros((1, intensity.shape[1]), np.float32), intensity[:-1]])
    delta = intensity - prev
    t, pix = np.nonzero(np.abs(delta) > threshold)
    return EventStream(
        t=t.astype(np.int64),
        pixel=pix.astype(np.int64),
        polarity=np.sign(delta[t, pix]).astype(np.int8),
        n_steps=intensity.shape[0],
        n_pixels=intensity.shape[1],
    )


def chip_signature(code: ChipCode | str) -> np.ndarray:
    """Expected polarity sequence of one chip period entered from dark."""
    bits = chip(code).bits.astype(np.int8)
    return np.diff(np.concatenate([[np.int8(0)], bits]))


def matched_filter_events(
    stream: EventStream, code: ChipCode | str, threshold: float = 0.9
) -> EventStream:
    """Keep a chip period's events only when the observed polarity sequence
    correlates with the chip's transition signature at or above the
    threshold (normalized correlation, so a perfect match scores 1)."""
    code = chip(code)
    L = len(code)
    expected = chip_signature(code).astype(np.float64)
    e_sq = float((expected**2).sum())
    n_periods = stream.n_steps // L
    observed = np.zeros((n_periods, stream.n_pixels, L), dtype=np.float64)
    inside = stream.t < n_periods * L
    observed[stream.t[inside] // L, stream.pixel[inside], stream.t[inside] % L] = stream.polarity[inside]
    o_sq = (observed**2).sum(axis=2)
    corr = (observed * expected[None, None, :]).sum(axis=2)
    # polarities are integers, so a perfect match scores exactly 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        score = np.where(o_sq > 0, corr / np.sqrt(o_sq * e_sq), 0.0)
    keep_period = score >= threshold
    keep = inside.copy()
    keep[inside] = keep_period[stream.t[inside] // L, stream.pixel[inside]]
    return EventStream(
        t=stream.t[keep],
        pixel=stream.pixel[keep],
        polarity=stream.polarity[keep],
        n_steps=stream.n_steps,
        n_pixels=stream.n_pixels,
    )


def event_interference_demo(
    own_chip="10100010",
    periods: int = 16,
    n_own: int = 24,
    n_interf: int = 24,
    threshold: float = 0.9,
    noise: NoiseModel | None = None,
):
    """Two-device event scenario: ``n_own`` pixels lit by the chip-encoded
    projector, ``n_interf`` pixels lit by a plain on-off interferer at the
    slot rate.  Returns the raw and filtered streams plus miss and false
    counts after filtering."""
    code = chip(own_chip, "own")
    L = len(code)
    base = chip_expand(np.tile([1, 0], periods // 2 + 1)[:periods], code)
    T = base.size
    interferer = np.tile([1, 0], T // 2 + 1)[:T].astype(np.float32)
    intensity = np.zeros((T, n_own + n_interf), dtype=np.float32)
    intensity[:, :n_own] = base[:, None]
    intensity[:, n_own:] = interferer[:, None]
    if noise is not None:
        rng = np.random.Generator(np.random.Philox(noise.seed))
        sigma = np.sqrt(noise.sigma_r**2 + noise.sigma_s**2 * intensity)
        intensity = intensity + rng.standard_normal(intensity.shape, dtype=np.float32) * sigma
    raw = simulate_events(intensity, threshold=0.5)
    kept = matched_filter_events(raw, code, threshold=threshold)
    own_raw = (raw.pixel < n_own).sum()
    own_kept = (kept.pixel < n_own).sum()
    false_kept = (kept.pixel >= n_own).sum()
    return {
        "raw": raw,
        "filtered": kept,
        "own_events": int(own_raw),
        "missed_own": int(own_raw - own_kept),
        "false_retained": int(false_kept),
        "frame_overhead": L,
    }


# ---------------------------------------------------------------------------
# light curtains


def simulate_light_curtains(
    chip_a: ChipCode | str,
    chip_b: ChipCode | str,
    hits_a: np.ndarray,
    hits_b: np.ndarray,
    cross_a: np.ndarray,
    cross_b: np.ndarray,
    coupling: float = 1.0,
    noise: NoiseModel | None = None,
):
    """Two slot-synchronized light-curtain devices.

    ``hits_d`` marks (slot, pixel) cells where device d's curtain truly
    intersects an object; ``cross_d`` marks cells where the *other*
    device's light reaches device d's sensor.  Each cell's intensity
    sequence is its own chip (if hit) plus the other chip scaled by the
    coupling; detection keeps only cells whose binarized sequence matches
    the device's own chip exactly."""
    a, b = chip(chip_a, "A"), chip(chip_b, "B")
    if len(a) != len(b):
        raise ValueError("chips must share a slot count")
    if np.array_equal(a.bits, b.bits):
        warnings.warn("identical chips: interference is inseparable", stacklevel=2)
    out = []
    for own, other, hits, cross, seed_off in (
        (a, b, hits_a, cross_a, 0),
        (b, a, hits_b, cross_b, 1),
    ):
        hits = np.asarray(hits, bool)
        cross = np.asarray(cross, bool)
        seq = (
            hits[:, :, None] * own.bits[None, None, :].astype(np.float32)
            + coupling * cross[:, :, None] * other.bits[None, None, :].astype(np.float32)
        )
        if noise is not None:
            rng = np.random.Generator(np.random.Philox(noise.seed + seed_off))
            sigma = np.sqrt(noise.sigma_r**2 + noise.sigma_s**2 * np.clip(seq, 0, None))
            seq = seq + rng.standard_normal(seq.shape, dtype=np.float32) * sigma
        bits = seq >= 0.5
        match = bits == (own.bits[None, None, :] > 0)
        score = match.mean(axis=2).astype(np.float32)
        detected = match.all(axis=2) & bits.any(axis=2)
        out.append(DetectionFrame(detected=detected, score=score))
    return out[0], out[1]


def curtain_demo(
    chip_a="1100",
    chip_b="0101",
    slots: int = 32,
    pixels: int = 48,
    coupling: float = 1.0,
    noise: NoiseModel | None = None,
):
    """Canned two-curtain geometry: each device sees its own object region
    plus a disjoint false-curtain region lit by the other device."""
    hits_a = np.zeros((slots, pixels), bool)
    hits_b = np.zeros((slots, pixels), bool)
    cross_a = np.zeros((slots, pixels), bool)
    cross_b = np.zeros((slots, pixels), bool)
    hits_a[4:12, 8:20] = True
    cross_a[18:26, 28:40] = True
    hits_b[10:20, 6:16] = True
    cross_b[22:30, 30:44] = True
    det_a, det_b = simulate_light_curtains(
        chip_a, chip_b, hits_a, hits_b, cross_a, cross_b, coupling=coupling, noise=noise
    )
    report = {}
    for name, det, hits, cross in (
        ("A", det_a, hits_a, cross_a),
        ("B", det_b, hits_b, cross_b),
    ):
        report[name] = {
            "true_detections": int((det.detected & hits).sum()),
            "missed": int((hits & ~det.detected).sum()),
            "false_detections": int((det.detected & ~hits).sum()),
        }
    return det_a, det_b, report, {"hits_a": hits_a, "hits_b": hits_b, "cross_a": cross_a, "cross_b": cross_b}
