"""Projector pattern synthesis: codebook plus column arrangement in, an
n-frame pattern cube out, with the XOR high-frequency transform and the
adjacency statistics that score an arrangement."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, gray_encode
from .imgio import read_pgm, write_pgm


@dataclass(frozen=True)
class PatternCube:
    """n binary (or q-ary) frames of N x M projector pixels.

    Rows within a frame are identical: codes vary only along columns.
    ``column_codes[m]`` is the temporal symbol string projected at column m.
    """

    frames: np.ndarray  # (n, N, M) uint8 symbols
    column_codes: np.ndarray  # (M, n) uint8
    q: int
    book: Codebook | None = None
    arrangement: np.ndarray | None = None  # (M,) data index per column
    name: str = ""

    def __post_init__(self):
        self.frames.setflags(write=False)
        self.column_codes.setflags(write=False)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


@dataclass(frozen=True)
class ArrangementProfile:
    max_adjacent_distance: int
    mean_adjacent_distance: float
    frame_max_run: np.ndarray  # per-frame maximum horizontal run length

    def __post_init__(self):
        assert self.max_adjacent_distance >= self.mean_adjacent_distance >= 0


def arrangement_indices(arrangement, M: int, book: Codebook) -> np.ndarray:
    """Resolve an arrangement to per-column data indices.

    'binary' feeds column m itself to the encoder, 'gray' feeds
    gray_encode(m); an explicit integer array is used as-is.
    """
    if isinstance(arrangement, str):
        if arrangement == "binary":
            idx = np.arange(M, dtype=np.int64)
        elif arrangement == "gray":
            if book.q != 2:
                raise ValueError("gray arrangement is defined for binary codebooks")
            m = np.arange(M, dtype=np.int64)
            idx = m ^ (m >> 1)
        else:
            raise ValueError(f"unknown arrangement {arrangement!r}")
    else:
        idx = np.asarray(arrangement, dtype=np.int64)
        if idx.shape != (M,):
            raise ValueError(f"arrangement must have one entry per column ({M})")
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= len(book):
        raise ValueError("arrangement index outside the codebook")
    return idx


def build_pattern_cube(book: Codebook, N: int, M: int, arrangement="gray") -> PatternCube:
    """Column m carries book.words[arranged index of m], repeated over rows."""
    if M > len(book):
        raise ValueError(f"M={M} exceeds codebook capacity {len(book)}")
    idx = arrangement_indices(arrangement, M, book)
    codes = book.words[idx]  # (M, n)
    frames = np.broadcast_to(codes.T[:, None, :], (book.n, N, M)).copy()
    name = f"{book.name}-{arrangement if isinstance(arrangement, str) else 'explicit'}"
    return PatternCube(
        frames=frames, column_codes=codes.copy(), q=book.q, book=book,
        arrangement=idx, name=name,
    )


def xor_transform(cube: PatternCube, base_frame_index: int) -> PatternCube:
    """XOR every frame except the base with the base frame (the base is kept
    unchanged), so all projected frames inherit its spatial frequency.
    Applying the transform twice restores the input."""
    if cube.q != 2:
        raise ValueError("XOR transform requires a binary cube")
    n = cube.n_frames
    if not 0 <= base_frame_index < n:
        raise ValueError(f"base index {base_frame_index} out of range")
    frames = cube.frames ^ cube.frames[base_frame_index][None, :, :]
    frames[base_frame_index] = cube.frames[base_frame_index]
    codes = cube.column_codes ^ cube.column_codes[:, base_frame_index : base_frame_index + 1]
    codes[:, base_frame_index] = cube.column_codes[:, base_frame_index]
    return PatternCube(
        frames=frames, column_codes=codes, q=2, book=cube.book,
        arrangement=cube.arrangement, name=f"{cube.name}-xor{base_frame_index}",
    )


def adjacency_profile(cube: PatternCube) -> ArrangementProfile:
    """Hamming distances between temporal strings of adjacent columns plus
    per-frame maximum run length (worst '0-1 jump' statistics)."""
    codes = cube.column_codes
    if codes.shape[0] < 2:
        raise ValueError("need at least two columns")
    adj = (codes[1:] != codes[:-1]).sum(axis=1)
    runs = np.array([_max_run(cube.frames[i, 0, :]) for i in range(cube.n_frames)])
    return ArrangementProfile(
        max_adjacent_distance=int(adj.max()),
        mean_adjacent_distance=float(adj.mean()),
        frame_max_run=runs,
    )


def _max_run(row: np.ndarray) -> int:
    change = np.nonzero(np.diff(row))[0]
    edges = np.concatenate([[-1], change, [len(row) - 1]])
    return int(np.diff(edges).max())


def export_frames(cube: PatternCube, directory, symbol_scale: bool = True) -> list[str]:
    """One bit-exact PGM per frame (0 maps to 0, q-1 maps to 255) plus a
    manifest recording shape, arrangement, and frame order."""
    os.makedirs(directory, exist_ok=True)
    step = 255 // (cube.q - 1) if symbol_scale else 1
    names = []
    for i in range(cube.n_frames):
        fname = f"frame_{i:03d}.pgm"
        write_pgm(os.path.join(directory, fname), (cube.frames[i] * step).astype(np.uint8))
        names.append(fname)
    N, M = cube.shape
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.write(f"{cube.n_frames} {N} {M} {cube.q}\n")
        if cube.arrangement is not None:
            fh.write(" ".join(str(int(v)) for v in cube.arrangement) + "\n")
        else:
            fh.write("-\n")
        for fname in names:
            fh.write(fname + "\n")
    return names


def import_frames(directory) -> PatternCube:
    with open(os.path.join(directory, "manifest.txt")) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    n, N, M, q = (int(v) for v in lines[0].split())
    arrangement = None if lines[1] == "-" else np.array(lines[1].split(), dtype=np.int64)
    step = 255 // (q - 1)
    frames = np.zeros((n, N, M), dtype=np.uint8)
    for i, fname in enumerate(lines[2 : 2 + n]):
        frames[i] = read_pgm(os.path.join(directory, fname)) // step
    codes = frames[:, 0, :].T.copy()
    return PatternCube(frames=frames, column_codes=codes, q=q, arrangement=arrangement)
