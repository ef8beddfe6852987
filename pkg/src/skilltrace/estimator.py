"""Per-(student, skill) knowledge estimates from per-attempt predictions.

Two families: mean aggregation of a model's pre-observation correctness
probabilities, and final-state extraction (classic BKT/PFA outputs).
Invalid predictions are omitted from both numerator and denominator; a
(student, skill) pair with no valid predictions is simply absent from the
table.
"""

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from . import bkt as bkt_mod
from . import pfa as pfa_mod


@dataclass(frozen=True)
class AttemptPrediction:
    """One model prediction for one attempt; probability None means invalid."""

    student_id: str
    skill_id: str
    item_id: str
    probability: Optional[float]

    def __post_init__(self):
        if self.probability is not None and not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")

    @property
    def valid(self) -> bool:
        return self.probability is not None


@dataclass(frozen=True)
class KnowledgeTable:
    """Per-(student, skill) estimates from one estimator; absent keys mean
    the student had no usable predictions for that skill."""

    estimator_name: str
    entries: Dict[Tuple[str, str], float] = field(default_factory=dict)

    def get(self, student_id: str, skill_id: str) -> Optional[float]:
        return self.entries.get((student_id, skill_id))


def count_invalid(predictions: Sequence[AttemptPrediction]) -> int:
    return sum(1 for p in predictions if not p.valid)


def mean_aggregate(
    predictions: Sequence[AttemptPrediction], estimator_name: str
) -> KnowledgeTable:
    """Arithmetic mean of valid per-attempt probabilities per (student, skill)."""
    sums: Dict[Tuple[str, str], float] = {}
    counts: Dict[Tuple[str, str], int] = {}
    for p in predictions:
        if not p.valid:
            continue
        key = (p.student_id, p.skill_id)
        sums[key] = sums.get(key, 0.0) + p.probability
        counts[key] = counts.get(key, 0) + 1
    entries = {key: sums[key] / counts[key] for key in sums}
    return KnowledgeTable(estimator_name=estimator_name, entries=entries)


def final_estimate_bkt(
    traces: Dict[Tuple[str, str], bkt_mod.BktTrace]
) -> KnowledgeTable:
    """Post-update knowledge probability after each student's last attempt."""
    entries = {
        key: trace.p_known_after[-1] for key, trace in traces.items() if len(trace)
    }
    return KnowledgeTable(estimator_name="BKT", entries=entries)


def mean_estimate_bkt(
    traces: Dict[Tuple[str, str], bkt_mod.BktTrace]
) -> KnowledgeTable:
    """Mean of per-step pre-observation predicted correctness probabilities."""
    entries = {
        key: sum(trace.p_correct_pred) / len(trace)
        for key, trace in traces.items()
        if len(trace)
    }
    return KnowledgeTable(estimator_name="mean-BKT", entries=entries)


def final_estimate_pfa(
    sequences: Dict[Tuple[str, str], List[bool]], params: pfa_mod.PfaParams
) -> KnowledgeTable:
    """Logistic prediction with the student's full success/failure counts."""
    entries = {}
    for (student_id, skill_id), seq in sequences.items():
        if not seq:
            continue
        w = params.for_skill(skill_id)
        entries[(student_id, skill_id)] = pfa_mod.final_probability(seq, w)
    return KnowledgeTable(estimator_name="PFA", entries=entries)


def mean_estimate_pfa(
    sequences: Dict[Tuple[str, str], List[bool]], params: pfa_mod.PfaParams
) -> KnowledgeTable:
    """Mean of the per-step pre-observation PFA predictions."""
    entries = {}
    for (student_id, skill_id), seq in sequences.items():
        if not seq:
            continue
        w = params.for_skill(skill_id)
        preds = pfa_mod.trace_student(seq, w)
        entries[(student_id, skill_id)] = sum(preds) / len(preds)
    return KnowledgeTable(estimator_name="mean-PFA", entries=entries)


def table_to_csv(tables: Sequence[KnowledgeTable]) -> bytes:
    """CSV `estimator,student_id,skill_id,estimate`; absent rows omitted."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["estimator", "student_id", "skill_id", "estimate"])
    for table in tables:
        for (student_id, skill_id), value in sorted(table.entries.items()):
            writer.writerow([table.estimator_name, student_id, skill_id, repr(value)])
    return out.getvalue().encode("utf-8")
