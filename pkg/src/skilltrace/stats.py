"""Estimator-vs-posttest statistics.

Pearson correlations per (estimator, skill), a dependent-correlations t
test for every unordered estimator pair (the two estimators share the
posttest as the common variable), and Benjamini-Hochberg FDR control over
the whole family of comparisons.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from .dataset import PosttestScores
from .estimator import KnowledgeTable


class StatsError(Exception):
    pass


class ZeroVariance(StatsError):
    pass


class TooFewPairs(StatsError):
    pass


class SingularCorrelationMatrix(StatsError):
    pass


@dataclass(frozen=True)
class CorrelationResult:
    estimator_name: str
    skill_id: str
    r: float
    n: int


@dataclass(frozen=True)
class PairComparison:
    skill_id: str
    estimator_a: str
    estimator_b: str
    t: float
    df: int
    p: float
    significant_after_fdr: bool


@dataclass(frozen=True)
class ComparisonReport:
    correlations: List[CorrelationResult]
    comparisons: List[PairComparison]
    skipped: List[str] = field(default_factory=list)  # cells dropped due to errors


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Product-moment correlation; inputs must already be pairwise complete."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    if x.size < 3:
        raise TooFewPairs(f"need >= 3 pairs, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise ZeroVariance("correlation undefined for a constant vector")
    r = float(dx @ dy) / (sx * sy)
    return max(-1.0, min(1.0, r))


def dependent_corr_t(r_ay: float, r_by: float, r_ab: float, n: int) -> Tuple[float, int]:
    """t for the difference of two correlations sharing the variable y.

    t = (r_ay - r_by) * sqrt((n-3)(1+r_ab) / (2|R|)) with
    |R| = 1 - r_ay^2 - r_by^2 - r_ab^2 + 2 r_ay r_by r_ab, df = n-3.
    Positive t means the first estimator correlates more strongly with y.
    """
    if n < 4:
        raise TooFewPairs(f"need n >= 4, got {n}")
    if r_ay == r_by:
        return 0.0, n - 3  # zero numerator regardless of r_ab (even at det 0)
    det = 1.0 - r_ay**2 - r_by**2 - r_ab**2 + 2.0 * r_ay * r_by * r_ab
    if det <= 0.0:
        raise SingularCorrelationMatrix(f"correlation-matrix determinant {det} <= 0")
    t = (r_ay - r_by) * math.sqrt((n - 3) * (1.0 + r_ab) / (2.0 * det))
    return t, n - 3


def p_from_t(t: float, df: int) -> float:
    """Two-tailed p via the regularized incomplete beta function."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


def benjamini_hochberg(p_values: Sequence[float], q: float) -> List[bool]:
    """Step-up FDR rule; flags returned in the original input order."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must be in (0, 1), got {q}")
    m = len(p_values)
    if m == 0:
        return []
    order = sorted(range(m), key=lambda i: p_values[i])
    k_star = 0
    for rank, idx in enumerate(order, start=1):
        if not 0.0 <= p_values[idx] <= 1.0:
            raise ValueError(f"p-value {p_values[idx]} outside [0, 1]")
        if p_values[idx] <= (rank / m) * q:
            k_star = rank
    flags = [False] * m
    for rank, idx in enumerate(order, start=1):
        if rank <= k_star:
            flags[idx] = True
    return flags


def benjamini_yekutieli(p_values: Sequence[float], q: float) -> List[bool]:
    """B-H variant valid under arbitrary dependence (harmonic-sum correction)."""
    m = len(p_values)
    if m == 0:
        return []
    harmonic = sum(1.0 / i for i in range(1, m + 1))
    return benjamini_hochberg(p_values, q / harmonic)


def _paired_vectors(
    table: KnowledgeTable, posttest: PosttestScores, skill_id: str
) -> Dict[str, Tuple[float, float]]:
    pairs = {}
    for (student_id, sk), estimate in table.entries.items():
        if sk != skill_id:
            continue
        score = posttest.get(student_id, skill_id)
        if score is not None:
            pairs[student_id] = (estimate, score)
    return pairs


def compare_all(
    tables: Sequence[KnowledgeTable],
    posttest: PosttestScores,
    q: float = 0.05,
    fdr_family: str = "global",
    fdr_method: str = "bh",
) -> ComparisonReport:
    """Correlate every estimator with the posttest per skill and test all
    estimator pairs for significant correlation differences.

    fdr_family: "global" pools every (pair, skill) test into one family;
    "per-skill" runs the correction within each skill. fdr_method: "bh"
    or "by". Cells hitting pearson errors are skipped, not fatal.
    """
    if len(tables) < 2:
        raise StatsError("need at least two estimators to compare")
    if fdr_family not in ("global", "per-skill"):
        raise ValueError(f"unknown fdr_family {fdr_family!r}")
    adjust = {"bh": benjamini_hochberg, "by": benjamini_yekutieli}[fdr_method]

    skills = sorted({sk for t in tables for (_stu, sk) in t.entries})
    correlations: List[CorrelationResult] = []
    skipped: List[str] = []
    # (skill, estimator) -> per-student (estimate, posttest) pairs
    cell_pairs: Dict[Tuple[str, str], Dict[str, Tuple[float, float]]] = {}
    corr_by_cell: Dict[Tuple[str, str], CorrelationResult] = {}
    for skill_id in skills:
        for table in tables:
            pairs = _paired_vectors(table, posttest, skill_id)
            cell_pairs[(skill_id, table.estimator_name)] = pairs
            try:
                r = pearson(
                    [pairs[s][0] for s in sorted(pairs)],
                    [pairs[s][1] for s in sorted(pairs)],
                )
            except StatsError as exc:
                skipped.append(f"{skill_id}/{table.estimator_name}: {exc}")
                continue
            result = CorrelationResult(table.estimator_name, skill_id, r, len(pairs))
            correlations.append(result)
            corr_by_cell[(skill_id, table.estimator_name)] = result

    raw: List[Tuple[str, str, str, float, int, float]] = []
    for skill_id in skills:
        for ta, tb in itertools.combinations(tables, 2):
            ca = corr_by_cell.get((skill_id, ta.estimator_name))
            cb = corr_by_cell.get((skill_id, tb.estimator_name))
            if ca is None or cb is None:
                skipped.append(
                    f"{skill_id}/{ta.estimator_name} vs {tb.estimator_name}: "
                    "missing correlation"
                )
                continue
            pa = cell_pairs[(skill_id, ta.estimator_name)]
            pb = cell_pairs[(skill_id, tb.estimator_name)]
            common = sorted(set(pa) & set(pb))
            try:
                r_ay = pearson([pa[s][0] for s in common], [pa[s][1] for s in common])
                r_by = pearson([pb[s][0] for s in common], [pb[s][1] for s in common])
                r_ab = pearson([pa[s][0] for s in common], [pb[s][0] for s in common])
                t, df = dependent_corr_t(r_ay, r_by, r_ab, len(common))
            except StatsError as exc:
                skipped.append(
                    f"{skill_id}/{ta.estimator_name} vs {tb.estimator_name}: {exc}"
                )
                continue
            raw.append(
                (skill_id, ta.estimator_name, tb.estimator_name, t, df, p_from_t(t, df))
            )

    comparisons: List[PairComparison] = []
    if fdr_family == "global":
        flags = adjust([row[5] for row in raw], q)
        for row, flag in zip(raw, flags):
            comparisons.append(PairComparison(*row, significant_after_fdr=flag))
    else:
        for skill_id in skills:
            rows = [row for row in raw if row[0] == skill_id]
            flags = adjust([row[5] for row in rows], q)
            for row, flag in zip(rows, flags):
                comparisons.append(PairComparison(*row, significant_after_fdr=flag))
    return ComparisonReport(correlations=correlations, comparisons=comparisons, skipped=skipped)
