"""Bayesian Knowledge Tracing.

Two-state per-skill model with guess/slip emissions, a no-forgetting
learning transition, and bounded maximum-likelihood fitting (floor 0.01
everywhere, ceiling 0.3 for guess/slip, 0.99 otherwise).
"""

import csv
import io
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ._bkt_kernels import grid_loglik, group_patterns

PROB_FLOOR = 0.01
GUESS_SLIP_CEILING = 0.3
PROB_CEILING = 0.99


class BktError(Exception):
    pass


class DegenerateDenominator(BktError):
    """Bayes denominator is exactly zero (out-of-bound parameters only)."""


class EmptyData(BktError):
    pass


@dataclass(frozen=True)
class BktParams:
    p_init: float
    p_transit: float
    p_guess: float
    p_slip: float

    def __post_init__(self):
        for name in ("p_init", "p_transit", "p_guess", "p_slip"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def in_bounds(self) -> bool:
        return (
            PROB_FLOOR <= self.p_guess <= GUESS_SLIP_CEILING
            and PROB_FLOOR <= self.p_slip <= GUESS_SLIP_CEILING
            and PROB_FLOOR <= self.p_init <= PROB_CEILING
            and PROB_FLOOR <= self.p_transit <= PROB_CEILING
        )

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.p_init, self.p_transit, self.p_guess, self.p_slip)


@dataclass(frozen=True)
class BktTrace:
    """Per-step probabilities for one student on one skill.

    p_correct_pred is the probability assigned to a correct answer BEFORE
    the observation; p_known_after is the post-update knowledge estimate.
    """

    p_known_before: Tuple[float, ...]
    p_correct_pred: Tuple[float, ...]
    p_known_after: Tuple[float, ...]

    def __len__(self) -> int:
        return len(self.p_known_before)


def predict_correct(L: float, params: BktParams) -> float:
    """P(correct) = L(1-s) + (1-L)g."""
    return L * (1.0 - params.p_slip) + (1.0 - L) * params.p_guess


def update_knowledge(L: float, observed_correct: bool, params: BktParams) -> float:
    """Bayes on the observation, then the learning transition."""
    g, s = params.p_guess, params.p_slip
    if observed_correct:
        denom = L * (1.0 - s) + (1.0 - L) * g
        if denom == 0.0:
            raise DegenerateDenominator("P(correct) is exactly 0")
        posterior = L * (1.0 - s) / denom
    else:
        denom = L * s + (1.0 - L) * (1.0 - g)
        if denom == 0.0:
            raise DegenerateDenominator("P(incorrect) is exactly 0")
        posterior = L * s / denom
    return posterior + (1.0 - posterior) * params.p_transit


def trace_student(seq: Sequence[bool], params: BktParams) -> BktTrace:
    """Run the forward recursion over one skill's correctness sequence."""
    if not len(seq):
        raise EmptyData("sequence must be nonempty")
    before, pred, after = [], [], []
    L = params.p_init
    for correct in seq:
        before.append(L)
        pred.append(predict_correct(L, params))
        L = update_knowledge(L, bool(correct), params)
        after.append(L)
    return BktTrace(tuple(before), tuple(pred), tuple(after))


def log_likelihood(sequences: List[Sequence[bool]], params: BktParams) -> float:
    """Total log-likelihood of observed first-attempt correctness."""
    patterns, lengths, counts = group_patterns(sequences)
    return _loglik_grouped(patterns, lengths, counts, [params.as_tuple()])[0]


def _loglik_grouped(patterns, lengths, counts, candidates) -> np.ndarray:
    cand = np.asarray(candidates, dtype=np.float64)
    return grid_loglik(
        patterns, lengths, counts, cand[:, 0].copy(), cand[:, 1].copy(),
        cand[:, 2].copy(), cand[:, 3].copy(),
    )


def _clip(value: float, lo: float, hi: float) -> float:
    return min(max(value, lo), hi)


_BOUNDS = (
    (PROB_FLOOR, PROB_CEILING),  # p_init
    (PROB_FLOOR, PROB_CEILING),  # p_transit
    (PROB_FLOOR, GUESS_SLIP_CEILING),  # p_guess
    (PROB_FLOOR, GUESS_SLIP_CEILING),  # p_slip
)

# Coarse grid step; full 0.01 grids over four dimensions are ~9e6 candidates
# and do not fit the fitting-time budget, so the grid seeds a coordinate
# descent that refines each parameter down to 1e-4.
_GRID_STEP = 0.05
_REFINE_TOL = 1e-4


def _coarse_grid() -> List[Tuple[float, float, float, float]]:
    axis_wide = np.arange(PROB_FLOOR, PROB_CEILING + 1e-12, _GRID_STEP)
    axis_gs = np.arange(PROB_FLOOR, GUESS_SLIP_CEILING + 1e-12, _GRID_STEP)
    grid = []
    for p0 in axis_wide:
        for pt in axis_wide:
            for pg in axis_gs:
                for ps in axis_gs:
                    grid.append((float(p0), float(pt), float(pg), float(ps)))
    return grid


def fit_skill(sequences: List[Sequence[bool]]) -> BktParams:
    """Bounded maximum-likelihood fit for one skill.

    Coarse grid search over the bounded box followed by coordinate descent
    with step halving; ties broken by the lexicographically smallest
    (p_init, p_transit, p_guess, p_slip). Deterministic for fixed input.
    """
    nonempty = [s for s in sequences if len(s)]
    if not nonempty:
        raise EmptyData("need at least one nonempty sequence")
    patterns, lengths, counts = group_patterns(nonempty)

    grid = _coarse_grid()
    lls = _loglik_grouped(patterns, lengths, counts, grid)
    best_idx = 0
    for k in range(1, len(grid)):
        if lls[k] > lls[best_idx] or (lls[k] == lls[best_idx] and grid[k] < grid[best_idx]):
            best_idx = k
    best = list(grid[best_idx])
    best_ll = float(lls[best_idx])

    step = _GRID_STEP
    while step >= _REFINE_TOL:
        improved = True
        while improved:
            improved = False
            candidates = []
            for dim in range(4):
                lo, hi = _BOUNDS[dim]
                for delta in (-step, step):
                    cand = list(best)
                    cand[dim] = _clip(cand[dim] + delta, lo, hi)
                    if cand != best:
                        candidates.append(tuple(cand))
            if not candidates:
                break
            cand_lls = _loglik_grouped(patterns, lengths, counts, candidates)
            order = sorted(range(len(candidates)), key=lambda j: (-cand_lls[j], candidates[j]))
            top = order[0]
            if cand_lls[top] > best_ll:
                best, best_ll = list(candidates[top]), float(cand_lls[top])
                improved = True
        step /= 2.0
    return BktParams(*best)


def fit_all_skills(
    per_skill_sequences: Dict[str, List[Sequence[bool]]]
) -> Dict[str, BktParams]:
    return {skill: fit_skill(seqs) for skill, seqs in sorted(per_skill_sequences.items())}


def params_to_csv(fitted: Dict[str, BktParams]) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["skill_id", "p_init", "p_transit", "p_guess", "p_slip"])
    for skill_id in sorted(fitted):
        p = fitted[skill_id]
        writer.writerow([skill_id, repr(p.p_init), repr(p.p_transit), repr(p.p_guess), repr(p.p_slip)])
    return out.getvalue().encode("utf-8")
