"""Importance scores for pruning units.

Two providers are available: ``magnitude`` scores an element by ``|w|``, and
``taylor`` scores it by ``|w * grad|`` as a first-order proxy for the error
incurred by removing it.  Group scores are plain sums of element scores, so
scores are additive over disjoint units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import ACC_DTYPE, as_matrix
from .errors import InvalidInputError

SCORE_KINDS = ("magnitude", "taylor")


@dataclass(frozen=True)
class ScoreProvider:
    """Configured score source; ``taylor`` requires a gradient matrix with
    the same shape as the matrix being scored."""

    kind: str = "magnitude"
    gradient: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise InvalidInputError(f"unknown score kind {self.kind!r}; expected one of {SCORE_KINDS}")
        if self.kind == "taylor":
            if self.gradient is None:
                raise InvalidInputError("taylor scores require a gradient matrix")
            object.__setattr__(self, "gradient", as_matrix(self.gradient))


MAGNITUDE = ScoreProvider("magnitude")


def score_elements(w: np.ndarray, provider: ScoreProvider = MAGNITUDE) -> np.ndarray:
    """Per-element importance scores, same shape as ``w``, float64, >= 0."""
    w = as_matrix(w)
    if provider.kind == "magnitude":
        return np.abs(w.astype(ACC_DTYPE))
    grad = provider.gradient
    if grad.shape != w.shape:
        raise InvalidInputError(
            f"gradient shape {grad.shape} does not match weights {w.shape}")
    return np.abs(w.astype(ACC_DTYPE) * grad.astype(ACC_DTYPE))


def score_group(w: np.ndarray, unit_shape: Tuple[int, int],
                provider: ScoreProvider = MAGNITUDE) -> np.ndarray:
    """Score a tiling of ``w`` by units of ``unit_shape`` rows x cols.

    Returns a 2-D grid of unit scores with shape
    ``(ceil(K / unit_rows), ceil(N / unit_cols))``; unit ids are row-major
    over this grid.  Trailing ragged units are scored with their actual
    elements.  A unit score is the sum of its element scores.
    """
    w = as_matrix(w)
    ur, uc = int(unit_shape[0]), int(unit_shape[1])
    if ur < 1 or uc < 1:
        raise InvalidInputError(f"unit shape must be >= 1 in both dims, got {(ur, uc)}")
    rows, cols = w.shape
    if ur > rows and uc > cols:
        raise InvalidInputError(
            f"unit {(ur, uc)} is larger than the matrix {(rows, cols)} in both dims")
    grid_r = math.ceil(rows / ur)
    grid_c = math.ceil(cols / uc)
    elem = score_elements(w, provider)
    padded = np.zeros((grid_r * ur, grid_c * uc), dtype=ACC_DTYPE)
    padded[:rows, :cols] = elem
    return padded.reshape(grid_r, ur, grid_c, uc).sum(axis=(1, 3))
