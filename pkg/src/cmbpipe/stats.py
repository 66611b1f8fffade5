"""Group-level analyses: paired Wilcoxon signed-rank, Fisher's exact test,
and the size-filter sweep over per-scan CMB counts.

Both tests are exact where it matters at cohort scale: the signed-rank
null distribution is enumerated over all 2^n sign assignments (organized
as a polynomial convolution) for n <= 20, with a tie- and
continuity-corrected normal approximation beyond; Fisher's test sums exact
hypergeometric table weights in integer arithmetic.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .detect import filter_by_size

from .errors import (
    ConfigError,
    DegenerateContingencyWarning,
    DegenerateTestError,
    PairingMismatchWarning,
)

ALTERNATIVES = ("two_sided", "greater", "less")
DEFAULT_SIZE_FILTER_MM3 = 4.2
DEFAULT_ILLNESS_THRESHOLD = 5  # scans with >= 5 CMBs count as diseased
EXACT_WILCOXON_MAX_N = 20


def _check_alternative(alternative: str) -> str:
    if alternative not in ALTERNATIVES:
        raise ConfigError(f"alternative must be one of {ALTERNATIVES}, got '{alternative}'")
    return alternative


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _exact_signed_rank_p(ranks2: np.ndarray, w2: int, alternative: str) -> float:
    """Tail probability of W+ over all 2^n sign assignments.

    ``ranks2`` are the doubled ranks (integers even with average-rank
    ties); the distribution of the doubled statistic is built by
    shift-and-add polynomial convolution, which enumerates the same 2^n
    assignments without materializing them.
    """
    total2 = int(ranks2.sum())
    counts = np.zeros(total2 + 1, dtype=np.int64)
    counts[0] = 1
    for r in ranks2:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total2 + 1 - r]
        counts = counts + shifted
    n_total = float(2 ** len(ranks2))
    support = np.arange(total2 + 1)
    if alternative == "greater":
        selected = counts[support >= w2].sum()
    elif alternative == "less":
        selected = counts[support <= w2].sum()
    else:
        margin = abs(2 * w2 - total2)
        selected = counts[np.abs(2 * support - total2) >= margin].sum()
    return float(selected / n_total)


def wilcoxon_signed_rank(
    pairs,
    alternative: str = "two_sided",
    zero_method: str = "drop",
    exact: bool | None = None,
) -> tuple[float, float]:
    """Paired signed-rank test on (count_a, count_b) pairs.

    Returns (W, p) where W is the sum of ranks of positive differences
    (a - b). Zero differences are dropped by default (``zero_method``
    "pratt" ranks them first, then drops their ranks); magnitude ties get
    average ranks. ``exact=None`` enumerates for effective n <= 20 and
    falls back to the tie- and continuity-corrected normal approximation.
    """
    _check_alternative(alternative)
    if zero_method not in ("drop", "pratt"):
        raise ConfigError(f"zero_method must be 'drop' or 'pratt', got '{zero_method}'")
    diffs = np.asarray([float(a) - float(b) for a, b in pairs])
    if len(diffs) == 0:
        raise DegenerateTestError("no pairs to test")
    nonzero = diffs[diffs != 0]
    if len(nonzero) == 0:
        raise DegenerateTestError("all paired differences are zero")

    if zero_method == "pratt":
        ranks_all = _average_ranks(np.abs(diffs))
        keep = diffs != 0
        ranks = ranks_all[keep]
        signs = np.sign(diffs[keep])
    else:
        ranks = _average_ranks(np.abs(nonzero))
        signs = np.sign(nonzero)
    n = len(ranks)
    w_plus = float(ranks[signs > 0].sum())

    if exact is None:
        exact = n <= EXACT_WILCOXON_MAX_N
    if exact:
        ranks2 = np.rint(2.0 * ranks).astype(np.int64)
        if n > 62:
            raise ConfigError(f"exact enumeration limited to n <= 62, got {n}")
        p = _exact_signed_rank_p(ranks2, int(round(2.0 * w_plus)), alternative)
        return w_plus, p

    mean = ranks.sum() / 2.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(((tie_counts**3 - tie_counts)).sum()) / 48.0
    if var <= 0:
        raise DegenerateTestError("null variance is zero; no information in the ranks")
    sd = math.sqrt(var)
    p_greater = _normal_sf((w_plus - mean - 0.5) / sd)
    p_less = 1.0 - _normal_sf((w_plus - mean + 0.5) / sd)
    if alternative == "greater":
        p = p_greater
    elif alternative == "less":
        p = p_less
    else:
        p = min(1.0, 2.0 * min(p_greater, p_less))
    return w_plus, p


@dataclass(frozen=True)
class Contingency2x2:
    """Rows are groups; columns are (>= threshold, < threshold) scan counts."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ConfigError("contingency entries must be non-negative")

    def rows(self) -> tuple[tuple[int, int], tuple[int, int]]:
        return ((self.a, self.b), (self.c, self.d))


def fisher_exact_2x2(table, alternative: str = "two_sided") -> float:
    """Exact hypergeometric p-value for a 2x2 table.

    Two-sided sums every table with the observed margins whose point
    probability is at most the observed one (relative tolerance 1e-7 on
    the comparison). A zero margin carries no information: p = 1.0 with a
    degenerate-table warning.
    """
    _check_alternative(alternative)
    if isinstance(table, Contingency2x2):
        a, b, c, d = table.a, table.b, table.c, table.d
    else:
        (a, b), (c, d) = table
    if min(a, b, c, d) < 0:
        raise ConfigError("contingency entries must be non-negative")
    r1, r2, c1, c2 = a + b, c + d, a + c, b + d
    if 0 in (r1, r2, c1, c2):
        warnings.warn(
            f"table [[{a},{b}],[{c},{d}]] has a zero margin; p = 1.0",
            DegenerateContingencyWarning,
            stacklevel=2,
        )
        return 1.0

    lo = max(0, c1 - r2)
    hi = min(r1, c1)
    weights = {x: math.comb(r1, x) * math.comb(r2, c1 - x) for x in range(lo, hi + 1)}
    total = math.comb(r1 + r2, c1)
    observed = weights[a]
    if alternative == "greater":
        selected = sum(w for x, w in weights.items() if x >= a)
    elif alternative == "less":
        selected = sum(w for x, w in weights.items() if x <= a)
    else:
        # integer form of w <= observed * (1 + 1e-7)
        scale = 10**7
        selected = sum(w for w in weights.values() if w * scale <= observed * (scale + 1))
    return float(Fraction(selected, total))


# ---------------------------------------------------------------------------
# Group comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupComparison:
    n_a: int
    n_b: int
    counts_a: tuple[int, ...]
    counts_b: tuple[int, ...]
    mean_count_a: float
    mean_count_b: float
    wilcoxon_w: float | None
    wilcoxon_p: float | None
    wilcoxon_note: str
    contingency: Contingency2x2
    fisher_p: float
    size_filter_mm3: float
    illness_threshold: int

    def to_json(self) -> dict:
        return {
            "n_a": self.n_a,
            "n_b": self.n_b,
            "mean_count_a": self.mean_count_a,
            "mean_count_b": self.mean_count_b,
            "wilcoxon_w": self.wilcoxon_w,
            "wilcoxon_p": self.wilcoxon_p,
            "wilcoxon_note": self.wilcoxon_note,
            "contingency": [list(r) for r in self.contingency.rows()],
            "fisher_p": self.fisher_p,
            "size_filter_mm3": self.size_filter_mm3,
            "illness_threshold": self.illness_threshold,
        }


def count_filtered(detections_per_scan, size_filter_mm3: float) -> list[int]:
    """CMBs per scan after the clinical size filter."""
    return [len(filter_by_size(dets, size_filter_mm3)) for dets in detections_per_scan]


def compare_groups(
    group_a,
    group_b,
    size_filter_mm3: float = DEFAULT_SIZE_FILTER_MM3,
    illness_threshold: int = DEFAULT_ILLNESS_THRESHOLD,
    alternative: str = "two_sided",
    zero_method: str = "drop",
) -> GroupComparison:
    """Full group analysis of two cohorts of per-scan detection lists.

    Counts CMBs per scan after the size filter, reports group means, runs
    the paired Wilcoxon on matched counts (skipped with a warning when the
    cohorts are not matched 1:1), and Fisher's exact test on the
    >= illness_threshold contingency table.
    """
    counts_a = count_filtered(group_a, size_filter_mm3)
    counts_b = count_filtered(group_b, size_filter_mm3)
    if not counts_a or not counts_b:
        raise ConfigError("both groups need at least one scan")

    wilcoxon_w: float | None = None
    wilcoxon_p: float | None = None
    note = ""
    if len(counts_a) != len(counts_b):
        note = f"pairing mismatch ({len(counts_a)} vs {len(counts_b)} scans); Wilcoxon skipped"
        warnings.warn(note, PairingMismatchWarning, stacklevel=2)
    else:
        try:
            wilcoxon_w, wilcoxon_p = wilcoxon_signed_rank(
                list(zip(counts_a, counts_b)), alternative=alternative, zero_method=zero_method
            )
        except DegenerateTestError as exc:
            note = f"degenerate Wilcoxon: {exc}"
            warnings.warn(note, PairingMismatchWarning, stacklevel=2)

    a_ge = sum(1 for c in counts_a if c >= illness_threshold)
    b_ge = sum(1 for c in counts_b if c >= illness_threshold)
    table = Contingency2x2(a_ge, len(counts_a) - a_ge, b_ge, len(counts_b) - b_ge)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateContingencyWarning)
        fisher_p = fisher_exact_2x2(table, alternative=alternative)

    return GroupComparison(
        n_a=len(counts_a),
        n_b=len(counts_b),
        counts_a=tuple(counts_a),
        counts_b=tuple(counts_b),
        mean_count_a=float(np.mean(counts_a)),
        mean_count_b=float(np.mean(counts_b)),
        wilcoxon_w=wilcoxon_w,
        wilcoxon_p=wilcoxon_p,
        wilcoxon_note=note,
        contingency=table,
        fisher_p=fisher_p,
        size_filter_mm3=size_filter_mm3,
        illness_threshold=illness_threshold,
    )


@dataclass(frozen=True)
class SweepRow:
    threshold_mm3: float
    mean_count_a: float
    mean_count_b: float
    n_ge_a: int
    n_ge_b: int
    fisher_p: float

    def to_json(self) -> dict:
        return {
            "threshold_mm3": self.threshold_mm3,
            "mean_count_a": self.mean_count_a,
            "mean_count_b": self.mean_count_b,
            "n_ge_a": self.n_ge_a,
            "n_ge_b": self.n_ge_b,
            "fisher_p": self.fisher_p,
        }


def size_sweep(group_a, group_b, thresholds, illness_threshold: int = DEFAULT_ILLNESS_THRESHOLD) -> list[SweepRow]:
    """Group CMB frequency and Fisher significance per size-filter threshold."""
    thresholds = [float(t) for t in thresholds]
    if sorted(thresholds) != thresholds:
        raise ConfigError("thresholds must be sorted ascending")
    rows = []
    for t in thresholds:
        counts_a = count_filtered(group_a, t)
        counts_b = count_filtered(group_b, t)
        a_ge = sum(1 for c in counts_a if c >= illness_threshold)
        b_ge = sum(1 for c in counts_b if c >= illness_threshold)
        table = Contingency2x2(a_ge, len(counts_a) - a_ge, b_ge, len(counts_b) - b_ge)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateContingencyWarning)
            p = fisher_exact_2x2(table)
        rows.append(
            SweepRow(
                threshold_mm3=t,
                mean_count_a=float(np.mean(counts_a)),
                mean_count_b=float(np.mean(counts_b)),
                n_ge_a=a_ge,
                n_ge_b=b_ge,
                fisher_p=p,
            )
        )
    return rows


def format_sweep_table(rows: list[SweepRow]) -> str:
    header = ("Threshold(mm3)", "Mean count A", "Mean count B", f"A >= thr", f"B >= thr", "Fisher p")
    body = [
        (
            f"{r.threshold_mm3:.2f}",
            f"{r.mean_count_a:.3f}",
            f"{r.mean_count_b:.3f}",
            str(r.n_ge_a),
            str(r.n_ge_b),
            f"{r.fisher_p:.6f}",
        )
        for r in rows
    ]
    widths = [max(len(header[c]), *(len(row[c]) for row in body)) if body else len(header[c]) for c in range(6)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for row in body:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines)
