"""Redundancy-coded structured light toolkit.

Covers the full pipeline: codebook construction with verified minimum
distance, projector pattern synthesis, a camera channel simulator, the
decoder family (soft, hard, list with order prior, confidence median),
parity-based error detection with an adaptive loop, and chip-code source
multiplexing.
"""

from .codebook import (
    Codebook,
    ConfigurationError,
    GeneratorSpec,
    SearchFailure,
    build_codebook,
    build_preset,
    crc_append,
    ecc_encode,
    gray_encode,
    min_distance,
    nary_encode,
    poisson_disk_search,
    preset_names,
    truncate_code,
)

__version__ = "0.1.0"
