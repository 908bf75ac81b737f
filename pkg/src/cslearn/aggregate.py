"""Combine per-learner intervals into a single prediction set.

The weighted majority vote keeps the response values covered by learners
whose weights sum to strictly more than 1/2. The vote score is piecewise
constant between interval endpoints, so an exact sweep over the endpoint
breakpoints (evaluating each breakpoint and each open gap between
consecutive breakpoints) reproduces it without any grid discretization.
"""

from dataclasses import dataclass

import numpy as np

from .conformal import Interval
from .errors import AllWeightsZeroError, DataError

RULE_NAMES = ("vote", "intersection", "union", "wta")


@dataclass(frozen=True)
class PredictionSet:
    """Sorted disjoint closed intervals plus the rule that produced them."""

    intervals: tuple
    rule_used: str

    def __post_init__(self):
        for a, b in zip(self.intervals, self.intervals[1:]):
            if a.upper >= b.lower:
                raise DataError("prediction set intervals must be disjoint "
                                "and sorted")

    @property
    def total_width(self):
        """Sum of component widths (the set's total measure)."""
        return float(sum(iv.width for iv in self.intervals))

    @property
    def hull_width(self):
        """Width of the convex hull, for comparison with single-interval
        reporting conventions."""
        if not self.intervals:
            return 0.0
        return float(self.intervals[-1].upper - self.intervals[0].lower)

    @property
    def unbounded(self):
        return any(iv.unbounded for iv in self.intervals)

    def contains(self, y):
        """Membership in any component (endpoints included)."""
        return any(iv.contains(y) for iv in self.intervals)


def _weights(w, n_intervals):
    arr = np.asarray(getattr(w, "w", w), dtype=np.float64)
    if arr.ndim != 1 or arr.size != n_intervals:
        raise DataError("need one weight per interval")
    if np.any(arr < 0):
        raise DataError("weights must be nonnegative")
    if float(arr.sum()) <= 0.0:
        raise AllWeightsZeroError("all aggregation weights are zero")
    return arr


def _vote_value(intervals, w, point):
    total = 0.0
    for iv, wk in zip(intervals, w):
        if wk > 0 and iv.lower <= point <= iv.upper:
            total += wk
    return total


def weighted_majority_vote(intervals, w):
    """Values covered with total weight strictly above 1/2.

    If some weight exceeds 1/2 the vote equals that learner's interval
    verbatim and the rule is reported as ``dominant``. Otherwise the
    endpoint sweep evaluates the vote score on every breakpoint and every
    open region between consecutive breakpoints (including the two
    unbounded tails) and merges the qualifying regions into maximal closed
    intervals.
    """
    w = _weights(w, len(intervals))
    top = int(np.argmax(w))
    if w[top] > 0.5:
        return PredictionSet((intervals[top],), "dominant")

    active = [(iv, wk) for iv, wk in zip(intervals, w) if wk > 0]
    points = sorted({e for iv, _ in active
                     for e in (iv.lower, iv.upper) if np.isfinite(e)})
    # Segments tile the line: tail, point, gap, point, ..., point, tail.
    # Each entry is (lower, upper, representative).
    segments = []
    if not points:
        segments.append((-np.inf, np.inf, 0.0))
    else:
        segments.append((-np.inf, points[0], points[0] - 1.0))
        for i, b in enumerate(points):
            segments.append((b, b, b))
            if i + 1 < len(points):
                nxt = points[i + 1]
                segments.append((b, nxt, b + 0.5 * (nxt - b)))
        segments.append((points[-1], np.inf, points[-1] + 1.0))

    pairs = [iv for iv, _ in active]
    wts = [wk for _, wk in active]
    merged = []
    run_lo = None
    run_hi = None
    for lo, hi, rep in segments:
        if _vote_value(pairs, wts, rep) > 0.5:
            if run_lo is None:
                run_lo = lo
            run_hi = hi
        elif run_lo is not None:
            merged.append(Interval(run_lo, run_hi))
            run_lo = None
    if run_lo is not None:
        merged.append(Interval(run_lo, run_hi))
    return PredictionSet(tuple(merged), "vote")


def aggregate_intersection(intervals, w):
    """Intersection of the positive-weight intervals (possibly empty)."""
    w = _weights(w, len(intervals))
    lowers = [iv.lower for iv, wk in zip(intervals, w) if wk > 0]
    uppers = [iv.upper for iv, wk in zip(intervals, w) if wk > 0]
    lo, hi = max(lowers), min(uppers)
    if lo > hi:
        return PredictionSet((), "intersection")
    return PredictionSet((Interval(lo, hi),), "intersection")


def aggregate_union(intervals, w):
    """Union of the positive-weight intervals, merged when touching."""
    w = _weights(w, len(intervals))
    active = sorted(
        ((iv.lower, iv.upper) for iv, wk in zip(intervals, w) if wk > 0),
    )
    merged = []
    cur_lo, cur_hi = active[0]
    for lo, hi in active[1:]:
        if lo <= cur_hi:
            cur_hi = max(cur_hi, hi)
        else:
            merged.append(Interval(cur_lo, cur_hi))
            cur_lo, cur_hi = lo, hi
    merged.append(Interval(cur_lo, cur_hi))
    return PredictionSet(tuple(merged), "union")


def aggregate_wta(intervals, w):
    """The max-weight learner's interval; ties go to the lowest index."""
    w = _weights(w, len(intervals))
    return PredictionSet((intervals[int(np.argmax(w))],), "wta")
