"""Performance Factors Analysis.

Logistic model of first-attempt correctness driven by cumulative per-skill
success/failure counts: m = beta + gamma * successes + rho * failures,
p = logistic(m). Fitted per skill by projected gradient ascent on the
(concave) log-likelihood, with a magnitude cap guarding against perfect
separation.
"""

import csv
import io
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

PARAM_CAP = 10.0
_GRAD_TOL = 1e-8
_MAX_ITER = 10_000


class PfaError(Exception):
    pass


class EmptyData(PfaError):
    def __init__(self, skill_id: str):
        super().__init__(f"no observations for skill {skill_id!r}")
        self.skill_id = skill_id


@dataclass(frozen=True)
class SkillWeights:
    beta: float
    gamma: float
    rho: float

    def __post_init__(self):
        for name in ("beta", "gamma", "rho"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.beta, self.gamma, self.rho])


@dataclass(frozen=True)
class PfaParams:
    """Fitted (beta, gamma, rho) for every skill in the catalog."""

    weights: Dict[str, SkillWeights]

    def for_skill(self, skill_id: str) -> SkillWeights:
        return self.weights[skill_id]


def _logistic(m):
    return 1.0 / (1.0 + np.exp(-m))


def predict(successes: int, failures: int, w: SkillWeights) -> float:
    """p = logistic(beta + gamma * successes + rho * failures)."""
    return float(_logistic(w.beta + w.gamma * successes + w.rho * failures))


def trace_student(seq: Sequence[bool], w: SkillWeights) -> List[float]:
    """Per-step predictions, each using only the outcomes of prior steps."""
    if not len(seq):
        raise PfaError("sequence must be nonempty")
    preds = []
    s = f = 0
    for correct in seq:
        preds.append(predict(s, f, w))
        if correct:
            s += 1
        else:
            f += 1
    return preds


def final_probability(seq: Sequence[bool], w: SkillWeights) -> float:
    """Prediction with the full history counted, including the last outcome."""
    s = sum(1 for c in seq if c)
    return predict(s, len(seq) - s, w)


def _design_matrix(sequences: List[Sequence[bool]]) -> Tuple[np.ndarray, np.ndarray]:
    rows, y = [], []
    for seq in sequences:
        s = f = 0
        for correct in seq:
            rows.append((1.0, s, f))
            y.append(1.0 if correct else 0.0)
            if correct:
                s += 1
            else:
                f += 1
    return np.asarray(rows), np.asarray(y)


def log_likelihood(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    m = X @ theta
    # log p = -log(1 + e^-m); log(1-p) = -m - log(1 + e^-m)
    return float(np.sum(y * m - np.logaddexp(0.0, m)))


def gradient(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return X.T @ (y - _logistic(X @ theta))


def _projected_gradient(theta, grad):
    proj = grad.copy()
    proj[(theta >= PARAM_CAP) & (grad > 0)] = 0.0
    proj[(theta <= -PARAM_CAP) & (grad < 0)] = 0.0
    return proj


def fit_skill_weights(sequences: List[Sequence[bool]], skill_id: str = "") -> SkillWeights:
    """Maximize the log-likelihood for one skill by projected gradient ascent.

    Starts at zero, backtracking line search, converges when the projected
    gradient max-norm drops below 1e-8 or after 10,000 iterations.
    """
    X, y = _design_matrix([s for s in sequences if len(s)])
    if X.size == 0:
        raise EmptyData(skill_id)
    theta = np.zeros(3)
    ll = log_likelihood(theta, X, y)
    # gradient Lipschitz bound for the logistic log-likelihood
    lipschitz = 0.25 * float(np.linalg.eigvalsh(X.T @ X)[-1])
    base_step = 1.0 / lipschitz
    # near the optimum the objective improvement underflows float64, so the
    # line search only guards against actual decreases
    slack = 1e-10 * max(1.0, abs(ll))
    for _ in range(_MAX_ITER):
        grad = gradient(theta, X, y)
        proj = _projected_gradient(theta, grad)
        if np.max(np.abs(proj)) < _GRAD_TOL:
            break
        step = base_step
        while step > 1e-16:
            trial = np.clip(theta + step * proj, -PARAM_CAP, PARAM_CAP)
            trial_ll = log_likelihood(trial, X, y)
            if trial_ll >= ll - slack:
                theta, ll = trial, trial_ll
                break
            step *= 0.5
        else:
            break
    return SkillWeights(*theta)


def fit(per_skill_sequences: Dict[str, List[Sequence[bool]]]) -> PfaParams:
    """Fit every skill independently (items map to exactly one skill)."""
    weights = {
        skill: fit_skill_weights(seqs, skill)
        for skill, seqs in sorted(per_skill_sequences.items())
    }
    return PfaParams(weights=weights)


def params_to_csv(params: PfaParams) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["skill_id", "beta", "gamma", "rho"])
    for skill_id in sorted(params.weights):
        w = params.weights[skill_id]
        writer.writerow([skill_id, repr(w.beta), repr(w.gamma), repr(w.rho)])
    return out.getvalue().encode("utf-8")
