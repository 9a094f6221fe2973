"""Codebook construction, truncation, search, and verification.

A codebook is an ordered set of q^k codewords of length n whose minimum
pairwise symbol Hamming distance is verified by brute force at build time.
``min_distance`` is the project-wide oracle: every d_min stored anywhere is
re-derived from it, never transcribed.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .gf import Field


class ConfigurationError(Exception):
    """Unknown preset name or malformed generator specification."""


class SearchFailure(RuntimeError):
    """Randomized codebook search ran out of budget before completion."""


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class GeneratorSpec:
    """Encoder description: a k x n generator matrix or a degree n-k
    generator polynomial (coefficients highest degree first), over GF(q)."""

    kind: str  # "matrix" | "poly"
    payload: np.ndarray
    n: int
    k: int
    q: int = 2
    name: str | None = None

    def validate(self):
        field = Field(self.q)
        p = np.asarray(self.payload)
        if np.any(p < 0) or np.any(p >= self.q):
            raise ConfigurationError("generator symbols must lie in [0, q)")
        if self.kind == "matrix":
            if p.shape != (self.k, self.n):
                raise ConfigurationError(f"matrix shape {p.shape} != ({self.k}, {self.n})")
            if field.rank(p) != self.k:
                raise ConfigurationError("generator matrix is rank deficient")
        elif self.kind == "poly":
            if p.ndim != 1 or len(p) != self.n - self.k + 1:
                raise ConfigurationError("polynomial degree must equal n - k")
            if p[0] != 1:
                raise ConfigurationError("generator polynomial must be monic")
        else:
            raise ConfigurationError(f"unknown generator kind {self.kind!r}")
        return self


@dataclass(frozen=True)
class Codebook:
    """Ordered list of q^k length-n codewords with oracle-verified d_min.

    ``words[i]`` is the codeword for data value i (base-q digits, most
    significant symbol first).  If ``systematic`` the data digits appear
    unchanged as the word prefix.
    """

    n: int
    k: int
    q: int
    words: np.ndarray  # (q**k, n) uint8, read-only
    d_min: int
    systematic: bool
    name: str = ""

    def __post_init__(self):
        w = self.words
        if w.shape != (self.q**self.k, self.n):
            raise ValueError(f"expected {self.q ** self.k} words of length {self.n}")
        if w.size and int(w.max()) >= self.q:
            raise ValueError("codeword symbol outside the alphabet")
        if len(np.unique(w, axis=0)) != w.shape[0]:
            raise ValueError("codewords must be distinct")
        w.setflags(write=False)
        if self.d_min > self.n - self.k + 1:
            raise ValueError("d_min exceeds the Singleton bound n - k + 1")

    def __len__(self):
        return self.words.shape[0]


# ---------------------------------------------------------------------------
# elementary encoders


def gray_encode(index: int, k: int) -> np.ndarray:
    """k-bit reflected Gray code of ``index``; consecutive indices differ
    in exactly one bit."""
    if not 0 <= index < 2**k:
        raise ValueError(f"index {index} out of range for k={k}")
    g = index ^ (index >> 1)
    return _int_to_digits(g, k, 2)


def gray_decode(bits: np.ndarray) -> int:
    g = _digits_to_int(bits, 2)
    i = 0
    while g:
        i ^= g
        g >>= 1
    return i


def _int_to_digits(value: int, k: int, q: int) -> np.ndarray:
    out = np.zeros(k, dtype=np.uint8)
    for pos in range(k - 1, -1, -1):
        out[pos] = value % q
        value //= q
    return out


def _digits_to_int(digits, q: int) -> int:
    v = 0
    for d in digits:
        v = v * q + int(d)
    return v


def all_datawords(k: int, q: int = 2) -> np.ndarray:
    """All q^k data strings as a (q^k, k) array, row i = digits of i."""
    idx = np.arange(q**k)
    out = np.zeros((len(idx), k), dtype=np.uint8)
    for pos in range(k - 1, -1, -1):
        out[:, pos] = idx % q
        idx = idx // q
    return out


def ecc_encode(data: np.ndarray, spec: GeneratorSpec) -> np.ndarray:
    """Systematic encoding of one data string or a batch of them."""
    data = np.asarray(data, dtype=np.uint8)
    single = data.ndim == 1
    batch = data[None, :] if single else data
    if batch.shape[-1] != spec.k:
        raise ValueError(f"data length {batch.shape[-1]} != k={spec.k}")
    if np.any(batch >= spec.q):
        raise ValueError("data symbol out of field range")
    field = Field(spec.q)
    if spec.kind == "matrix":
        words = field.matmul(batch, np.asarray(spec.payload))
    elif spec.kind == "poly":
        r = spec.n - spec.k
        words = np.zeros((batch.shape[0], spec.n), dtype=np.int64)
        words[:, : spec.k] = batch
        for i, row in enumerate(batch):
            words[i, spec.k :] = field.poly_mod(row, spec.payload)
    else:
        raise ConfigurationError(f"unknown generator kind {spec.kind!r}")
    words = words.astype(np.uint8)
    return words[0] if single else words


def nary_encode(data: np.ndarray, spec: GeneratorSpec) -> np.ndarray:
    """Encode a symbol string over GF(q), q > 2; symbol-level distances
    apply throughout."""
    if spec.q <= 2:
        raise ValueError("nary_encode expects an alphabet larger than binary")
    return ecc_encode(data, spec)


def crc_append(data: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Append the CRC remainder of data(x) * x^r mod poly(x).

    Re-dividing the returned word by ``poly`` leaves a zero remainder.
    """
    data = np.asarray(data, dtype=np.uint8)
    if data.size == 0:
        raise ValueError("empty data string")
    poly = np.asarray(poly, dtype=np.uint8)
    if poly[0] != 1:
        raise ValueError("CRC polynomial must have a leading 1")
    rem = Field(2).poly_mod(data, poly)
    return np.concatenate([data, rem.astype(np.uint8)])


def crc_check(word: np.ndarray, poly: np.ndarray) -> bool:
    rem = Field(2).poly_mod(np.asarray(word, dtype=np.uint8), np.asarray(poly))
    return not rem.any()


# ---------------------------------------------------------------------------
# the distance oracle


def pack_words(words: np.ndarray, q: int) -> np.ndarray:
    """Pack symbol rows into uint64 keys (used for hashing and XOR tricks)."""
    n = words.shape[-1]
    if q == 2:
        if n > 63:
            raise ValueError("packed form supports n <= 63")
        shifts = np.arange(n - 1, -1, -1, dtype=np.uint64)
        return (words.astype(np.uint64) << shifts).sum(axis=-1, dtype=np.uint64)
    bits = max(1, int(q - 1).bit_length())
    if n * bits > 63:
        raise ValueError("packed form overflows 64 bits")
    shifts = (np.arange(n - 1, -1, -1, dtype=np.uint64) * bits).astype(np.uint64)
    return (words.astype(np.uint64) << shifts).sum(axis=-1, dtype=np.uint64)


def min_distance(book) -> int:
    """Exact minimum pairwise Hamming distance, by brute force.

    Accepts a Codebook or a plain (count, n) symbol array.  This is the
    oracle every stored d_min must agree with.
    """
    words = book.words if isinstance(book, Codebook) else np.asarray(book)
    q = book.q if isinstance(book, Codebook) else int(words.max(initial=1)) + 1
    count, n = words.shape
    if count < 2:
        raise ValueError("need at least two codewords")
    best = n + 1
    if q == 2 and n <= 63:
        packed = pack_words(words, 2)
        chunk = max(1, 2**22 // max(count, 1))
        for i in range(0, count, chunk):
            blk = packed[i : i + chunk]
            d = np.bitwise_count(blk[:, None] ^ packed[None, i:])
            tri = np.triu(np.ones(d.shape, dtype=bool), k=1)
            if tri.any():
                best = min(best, int(d[tri].min()))
            if i + chunk < count:
                d2 = np.bitwise_count(blk[:, None] ^ packed[None, i + chunk :])
                best = min(best, int(d2.min()))
    else:
        chunk = max(1, 2**24 // (count * n))
        for i in range(0, count, chunk):
            blk = words[i : i + chunk]
            d = (blk[:, None, :] != words[None, i:, :]).sum(axis=-1)
            tri = np.triu(np.ones(d.shape, dtype=bool), k=1)
            if tri.any():
                best = min(best, int(d[tri].min()))
            if i + chunk < count:
                d2 = (blk[:, None, :] != words[None, i + chunk :, :]).sum(axis=-1)
                best = min(best, int(d2.min()))
    return best


# ---------------------------------------------------------------------------
# construction


# brute-force verification stays cheap up to here; larger books are refused
MAX_WORDS = 1 << 14


def codebook_from_spec(spec: GeneratorSpec, name: str = "") -> Codebook:
    spec.validate()
    if spec.q**spec.k > MAX_WORDS:
        raise ValueError(f"codebook with {spec.q ** spec.k} words exceeds the oracle budget")
    words = ecc_encode(all_datawords(spec.k, spec.q), spec)
    systematic = bool((words[:, : spec.k] == all_datawords(spec.k, spec.q)).all())
    return Codebook(
        n=spec.n,
        k=spec.k,
        q=spec.q,
        words=words,
        d_min=min_distance(words) if len(words) > 1 else spec.n,
        systematic=systematic,
        name=name or (spec.name or ""),
    )


def truncate_code(book: Codebook, L: int) -> Codebook:
    """Drop the first L data symbols: keep only words whose first L data
    symbols are zero and remove those positions, giving an (n-L, k-L) book."""
    if not book.systematic:
        raise ValueError("truncation requires a systematic codebook")
    if not 0 <= L < book.k:
        raise ValueError(f"L={L} out of range for k={book.k}")
    if L == 0:
        return book
    keep = (book.words[:, :L] == 0).all(axis=1)
    words = book.words[keep][:, L:].copy()
    d = min_distance(words)
    assert d >= book.d_min, "truncation may not reduce minimum distance"
    return Codebook(
        n=book.n - L,
        k=book.k - L,
        q=book.q,
        words=words,
        d_min=d,
        systematic=True,
        name=f"{book.name}-L{L}" if book.name else "",
    )


def poisson_disk_search(
    n: int, k: int, d_target: int, seed: int, budget: int = 10_000_000
) -> Codebook:
    """Greedy dart throwing: accept a uniform random n-bit string only if it
    keeps distance >= d_target to every accepted word; succeed only with a
    full set of 2^k words.  Deterministic for a given seed.

    Raises SearchFailure when the budget runs out.  Dense targets jam well
    before 2^k accepted words, so infeasible tuples fail rather than stall.
    """
    if n > 63:
        raise ValueError("search supports n <= 63")
    target = 2**k
    if d_target > n and target > 1:
        raise SearchFailure(f"no two length-{n} words can differ in {d_target} places")
    rng = np.random.default_rng(seed)
    accepted = np.zeros(target, dtype=np.uint64)
    count = 0
    draws = 0
    batch = 4096
    while count < target and draws < budget:
        cands = rng.integers(0, 1 << n, size=batch, dtype=np.uint64)
        for c in cands:
            draws += 1
            if count and int(np.bitwise_count(accepted[:count] ^ c).min()) < d_target:
                if draws >= budget:
                    break
                continue
            accepted[count] = c
            count += 1
            if count >= target or draws >= budget:
                break
    if count < target:
        raise SearchFailure(
            f"accepted only {count}/{target} words for ({n},{k},d>={d_target}) "
            f"after {draws} draws"
        )
    shifts = np.arange(n - 1, -1, -1, dtype=np.uint64)
    words = ((accepted[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)
    d = min_distance(words)
    assert d >= d_target
    return Codebook(
        n=n, k=k, q=2, words=words, d_min=d, systematic=False, name=f"search{n}_{k}_{d}"
    )


# ---------------------------------------------------------------------------
# presets

_SPEC_FILES = {
    "golay24": "golay24.txt",
    "hamming16": "hamming16.txt",
    "bch63": "bch63.txt",
    "crc5": "crc5.txt",
    "golay12q3": "golay12q3.txt",
    "rs7q8": "rs7q8.txt",
}

# name -> one line summary for the CLI listing
PRESET_NOTES = {
    "golay24": "extended binary Golay",
    "golay22": "extended Golay truncated by 2",
    "hamming16": "extended Hamming",
    "hamming15": "extended Hamming truncated by 1",
    "bch63": "BCH generator polynomial",
    "crc5": "CRC-5 parity over 10 data bits",
    "gray10": "uncoded 10-bit gray indexing",
    "binary10": "uncoded 10-bit binary indexing",
    "ternary6": "uncoded 6-symbol ternary",
    "golay12q3": "ternary extended Golay",
    "rs7q8": "Reed-Solomon over GF(8)",
}


def preset_names() -> list[str]:
    return list(PRESET_NOTES)


def load_generator_spec(source, name: str = "") -> GeneratorSpec:
    """Parse the plain-text spec format: header line ``n k q kind`` then
    matrix rows (one per line) or a single polynomial coefficient line."""
    if hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        with open(source) as fh:
            lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip() and not ln.startswith("#")]
    head = lines[0].split()
    if len(head) != 4:
        raise ConfigurationError("header must be 'n k q kind'")
    n, k, q = int(head[0]), int(head[1]), int(head[2])
    kind = head[3]
    rows = [np.array(ln.split(), dtype=np.int64) for ln in lines[1:]]
    payload = rows[0] if kind == "poly" else np.stack(rows)
    return GeneratorSpec(kind=kind, payload=payload, n=n, k=k, q=q, name=name).validate()


def save_generator_spec(spec: GeneratorSpec, path):
    with open(path, "w") as fh:
        fh.write(f"{spec.n} {spec.k} {spec.q} {spec.kind}\n")
        payload = np.atleast_2d(spec.payload)
        for row in payload:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def _preset_spec(name: str) -> GeneratorSpec:
    ref = resources.files(__package__).joinpath("presets", _SPEC_FILES[name])
    with ref.open() as fh:
        return load_generator_spec(fh, name=name)


@functools.lru_cache(maxsize=None)
def build_preset(name: str) -> Codebook:
    """Build a named preset codebook with its d_min re-verified by the
    brute-force oracle at load time."""
    if name in _SPEC_FILES:
        return codebook_from_spec(_preset_spec(name), name=name)
    if name == "golay22":
        return _renamed(truncate_code(build_preset("golay24"), 2), "golay22")
    if name == "hamming15":
        return _renamed(truncate_code(build_preset("hamming16"), 1), "hamming15")
    if name == "binary10":
        spec = GeneratorSpec("matrix", np.eye(10, dtype=np.uint8), n=10, k=10, name=name)
        return codebook_from_spec(spec, name=name)
    if name == "gray10":
        words = np.stack([gray_encode(i, 10) for i in range(1024)])
        return Codebook(
            n=10, k=10, q=2, words=words, d_min=min_distance(words),
            systematic=False, name=name,
        )
    if name == "ternary6":
        spec = GeneratorSpec("matrix", np.eye(6, dtype=np.uint8), n=6, k=6, q=3, name=name)
        return codebook_from_spec(spec, name=name)
    raise ConfigurationError(f"unknown preset {name!r}")


def _renamed(book: Codebook, name: str) -> Codebook:
    return Codebook(
        n=book.n, k=book.k, q=book.q, words=book.words.copy(),
        d_min=book.d_min, systematic=book.systematic, name=name,
    )


def build_codebook(spec, k: int | None = None) -> Codebook:
    """Build from a preset name or an explicit GeneratorSpec."""
    if isinstance(spec, str):
        return build_preset(spec)
    if isinstance(spec, GeneratorSpec):
        if k is not None and k != spec.k:
            raise ValueError(f"k={k} conflicts with spec.k={spec.k}")
        return codebook_from_spec(spec)
    raise ConfigurationError(f"cannot build a codebook from {type(spec).__name__}")


# ---------------------------------------------------------------------------
# codebook text export


def export_codebook(book: Codebook, path):
    """One codeword per line as digit strings, after a verified header."""
    with open(path, "w") as fh:
        fh.write(f"{book.n} {book.k} {book.q} {book.d_min}\n")
        for word in book.words:
            fh.write("".join(str(int(v)) for v in word) + "\n")


def load_codebook(path, name: str = "") -> Codebook:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    n, k, q, d_claim = (int(v) for v in lines[0].split())
    words = np.array([[int(c) for c in ln] for ln in lines[1:]], dtype=np.uint8)
    d = min_distance(words) if len(words) > 1 else n
    if d != d_claim:
        raise ConfigurationError(f"stored d_min={d_claim} but oracle finds {d}")
    data = all_datawords(k, q)
    systematic = words.shape == (q**k, n) and bool((words[:, :k] == data).all())
    return Codebook(n=n, k=k, q=q, words=words, d_min=d, systematic=systematic, name=name)
