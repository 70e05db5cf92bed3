"""Probabilistic response policy: ratings in, gesture probabilities out.

A rating row holds the average user appropriateness score (0..10) for each
robot response to one detected user action. Scores at or below the neutral
value eta contribute exactly zero, so those responses are never sampled;
the clamp is applied in the denominator as well, otherwise rows containing
sub-neutral scores would not sum to one. The exponent m sharpens the
distribution toward the best-rated responses (m -> infinity is argmax,
m = 0 would be uniform).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import GestureClass, N_CLASSES

ALL_CLASSES = tuple(GestureClass)

# Deployed response probability table, rows = detected user action, columns =
# robot response, both in class order (hold, rub, pat, squeeze). These are
# the deployed operating point; each row sums to 1.
DEFAULT_PROBABILITIES = (
    (0.11, 0.22, 0.10, 0.57),   # after user hold (drives proactive gestures)
    (0.01, 0.30, 0.14, 0.55),   # after user rub
    (0.00, 0.27, 0.21, 0.52),   # after user pat
    (0.00, 0.10, 0.09, 0.81),   # after user squeeze
)

# Known appropriateness scores for the hold response column (one per user
# action); used to anchor the reconstructed rating matrix below.
_HOLD_RESPONSE_RATINGS = (6.6, 5.2, 4.9, 4.9)


class DegenerateRowError(Exception):
    """Raised when a row has no positive mass and no fallback is configured."""


@dataclass(frozen=True)
class RatingMatrix:
    """4x4 average ratings, rows = user action, cols = robot response."""

    rows: tuple[tuple[float, ...], ...]
    reconstructed: bool = False     # True when rebuilt from probabilities

    def __post_init__(self):
        if len(self.rows) != N_CLASSES or any(len(r) != N_CLASSES for r in self.rows):
            raise ValueError("rating matrix must be 4x4")
        for r in self.rows:
            for v in r:
                if not (0.0 <= v <= 10.0):
                    raise ValueError(f"rating {v} outside [0, 10]")

    def row(self, action: GestureClass) -> np.ndarray:
        return np.array(self.rows[int(action)], dtype=np.float64)


@dataclass(frozen=True)
class ResponsePolicy:
    """4x4 response probabilities with a fallback for degenerate rows."""

    probs: tuple[tuple[float, ...], ...]
    degenerate: tuple[bool, ...] = (False,) * N_CLASSES
    fallback: GestureClass | None = GestureClass.HOLD

    def __post_init__(self):
        if len(self.probs) != N_CLASSES or any(len(r) != N_CLASSES for r in self.probs):
            raise ValueError("policy must be 4x4")
        for k, row in enumerate(self.probs):
            if any(p < 0 for p in row):
                raise ValueError(f"row {k}: negative probability")
            total = sum(row)
            if not self.degenerate[k] and abs(total - 1.0) > 1e-9:
                raise ValueError(f"row {k}: probabilities sum to {total}, not 1")
            if self.degenerate[k] and total != 0.0:
                raise ValueError(f"row {k}: flagged degenerate but has mass")

    def row(self, action: GestureClass) -> np.ndarray:
        return np.array(self.probs[int(action)], dtype=np.float64)


def policy_row_from_ratings(
    ratings: Sequence[float],
    eta: float,
    m: float,
    allowed: Iterable[GestureClass] = ALL_CLASSES,
) -> tuple[np.ndarray, bool]:
    """One probability row; second value flags an all-sub-neutral (degenerate) row.

    Only the `allowed` responses may receive mass; the rest are exactly 0.
    """
    allowed = tuple(allowed)
    if not allowed:
        raise ValueError("allowed response set must not be empty")
    if not (0.0 <= eta <= 10.0):
        raise ValueError(f"eta must lie in [0, 10], got {eta}")
    if m <= 0:
        raise ValueError(f"m must be positive, got {m}")
    weights = np.zeros(N_CLASSES, dtype=np.float64)
    for cls in allowed:
        w = max(float(ratings[int(cls)]) - eta, 0.0)
        weights[int(cls)] = w ** m
    total = float(weights.sum())
    if total == 0.0:
        return np.zeros(N_CLASSES, dtype=np.float64), True
    return weights / total, False


def policy_from_ratings(
    ratings: RatingMatrix,
    eta: float,
    m: float,
    fallback: GestureClass | None = GestureClass.HOLD,
) -> ResponsePolicy:
    rows = []
    degenerate = []
    for action in GestureClass:
        row, degen = policy_row_from_ratings(ratings.row(action), eta, m)
        rows.append(tuple(float(p) for p in row))
        degenerate.append(degen)
    return ResponsePolicy(probs=tuple(rows), degenerate=tuple(degenerate), fallback=fallback)


def default_policy() -> ResponsePolicy:
    """The deployed probability table, shipped verbatim."""
    return ResponsePolicy(probs=DEFAULT_PROBABILITIES)


def invert_row(
    probabilities: Sequence[float],
    eta: float,
    m: float,
    anchor: tuple[GestureClass, float],
) -> np.ndarray:
    """Reconstruct a rating row that reproduces the given probability row.

    The anchor pins the free scale: the anchored response must have positive
    probability and a rating above eta. Zero-probability responses map to
    exactly eta.
    """
    anchor_cls, anchor_rating = anchor
    p = np.asarray(probabilities, dtype=np.float64)
    p_anchor = float(p[int(anchor_cls)])
    if p_anchor <= 0.0:
        raise ValueError("anchor response has zero probability; cannot fix the scale")
    if anchor_rating <= eta:
        raise ValueError(f"anchor rating {anchor_rating} must exceed eta {eta}")
    scale = (anchor_rating - eta) ** m / p_anchor
    ratings = eta + (p * scale) ** (1.0 / m)
    return ratings


def default_ratings() -> RatingMatrix:
    """Rating matrix consistent with the deployed probability table.

    Only the hold-response column of the original rating scores is known
    numerically, so the rest is reconstructed by inverting each probability row;
    rows whose hold response has zero probability are anchored at an assumed
    squeeze score of 7.0. Marked `reconstructed` accordingly.
    """
    rows = []
    for action in GestureClass:
        probs = DEFAULT_PROBABILITIES[int(action)]
        hold_rating = _HOLD_RESPONSE_RATINGS[int(action)]
        if probs[int(GestureClass.HOLD)] > 0:
            anchor = (GestureClass.HOLD, hold_rating)
        else:
            anchor = (GestureClass.SQUEEZE, 7.0)
        row = invert_row(probs, eta=5.0, m=3.0, anchor=anchor)
        rows.append(tuple(float(min(max(v, 0.0), 10.0)) for v in row))
    return RatingMatrix(rows=tuple(rows), reconstructed=True)


def choose(
    policy: ResponsePolicy,
    action: GestureClass,
    rng: np.random.Generator,
    in_squeeze_state: bool = False,
) -> GestureClass:
    """Sample the robot response to a detected user action.

    One uniform draw falls into stacked intervals laid out in class order.
    While already squeezing, the squeeze response is excluded and the row is
    renormalized over the remaining options, which matches recomputing the
    rating transform over that subset (numerators are unchanged).
    """
    row = policy.row(action)
    if in_squeeze_state:
        row = row.copy()
        row[int(GestureClass.SQUEEZE)] = 0.0
    total = float(row.sum())
    if total <= 0.0:
        if policy.fallback is None:
            raise DegenerateRowError(
                f"no response has positive probability for action {action.label}"
            )
        return policy.fallback
    row = row / total
    u = rng.random()
    cum = 0.0
    last = None
    for cls in GestureClass:
        p = float(row[int(cls)])
        if p <= 0.0:
            continue
        last = cls
        cum += p
        if u < cum:
            return cls
    return last  # float residue at the top of the stack
