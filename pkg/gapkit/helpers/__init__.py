"""
    This module initializes the helpers package and exposes the
    internal utilities used across gapkit.

    Exposed functions:
        - _as_array: Extracts the float64 array behind an embedding matrix.
        - _first_bad_row: Finds the first row holding NaN or Inf.
        - _frozen_copy: Makes a read-only float64 copy of an array.
        - _masked_similarity: Builds Z Z^T with the self-similarity masked.
        - _tie_aware_rank: Ranks target items with deterministic tie-breaking.
        - _ratio: Divides counts with the +inf / undefined conventions.
        - _encode_float / _decode_float: JSON-safe float conversion.
        - _format_cell / _format_frame: Report rounding.
        - _report_summary: Header lines for exported tables.

    These functions are intended for internal use within gapkit.
"""
from .helpers import (
    UNDEFINED,
    _as_array,
    _first_bad_row,
    _frozen_copy,
    _masked_similarity,
    _tie_aware_rank,
    _ratio,
    _encode_float,
    _decode_float,
    _format_cell,
    _format_frame,
    _report_summary,
)
