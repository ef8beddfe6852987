"""Synthetic cohorts with known ground truth.

Each (student, skill) follows the two-state BKT generative process; a
per-student ability offset shifts the emission logits so that students who
saturate within the system still disperse on the posttest. The posttest
conditions on the final latent knowledge state.
"""

import csv
import io
import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .bkt import BktParams
from .dataset import InteractionRecord, PosttestScores


@dataclass(frozen=True)
class SkillSpec:
    skill_id: str
    opportunities: int
    true_params: BktParams

    def __post_init__(self):
        if self.opportunities < 1:
            raise ValueError("opportunities must be >= 1")


@dataclass(frozen=True)
class CohortSpec:
    num_students: int
    skills: Tuple[SkillSpec, ...]
    ability_sd: float
    posttest_items_per_skill: int
    posttest_guess: float
    posttest_slip: float
    seed: int

    def __post_init__(self):
        if self.num_students < 1:
            raise ValueError("num_students must be >= 1")
        if self.posttest_items_per_skill < 1:
            raise ValueError("posttest_items_per_skill must be >= 1")
        if self.ability_sd < 0:
            raise ValueError("ability_sd must be >= 0")
        for p in (self.posttest_guess, self.posttest_slip):
            if not 0.0 <= p <= 1.0:
                raise ValueError("posttest noise probabilities must be in [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    final_known: Dict[Tuple[str, str], bool]
    ability: Dict[str, float]


def _logit(p: float) -> float:
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    return math.log(p / (1.0 - p))


def _expit(x: float) -> float:
    if x == math.inf:
        return 1.0
    if x == -math.inf:
        return 0.0
    return 1.0 / (1.0 + math.exp(-x))


def _emission_prob(known: bool, ability: float, guess: float, slip: float) -> float:
    base = (1.0 - slip) if known else guess
    return _expit(_logit(base) + ability)


def generate_cohort(
    spec: CohortSpec,
) -> Tuple[List[InteractionRecord], PosttestScores, GroundTruth]:
    """Simulate one cohort; fully deterministic given spec.seed.

    Skills are interleaved round-robin within each student's session so
    order_index reflects a realistic mixed practice schedule.
    """
    rng = np.random.default_rng(spec.seed)
    width = len(str(spec.num_students - 1))
    records: List[InteractionRecord] = []
    post_entries: Dict[Tuple[str, str], float] = {}
    final_known: Dict[Tuple[str, str], bool] = {}
    abilities: Dict[str, float] = {}

    for sidx in range(spec.num_students):
        student_id = f"s{sidx:0{width}d}"
        ability = float(rng.normal(0.0, spec.ability_sd)) if spec.ability_sd > 0 else 0.0
        abilities[student_id] = ability

        known = {sk.skill_id: bool(rng.random() < sk.true_params.p_init) for sk in spec.skills}
        order = 0
        max_opps = max(sk.opportunities for sk in spec.skills)
        for opp in range(max_opps):
            for sk in spec.skills:
                if opp >= sk.opportunities:
                    continue
                p = sk.true_params
                p_correct = _emission_prob(
                    known[sk.skill_id], ability, p.p_guess, p.p_slip
                )
                correct = bool(rng.random() < p_correct)
                records.append(
                    InteractionRecord(
                        student_id=student_id,
                        skill_id=sk.skill_id,
                        item_id=f"{sk.skill_id}:{opp}",
                        attempt_number=1,
                        correct=correct,
                        order_index=order,
                    )
                )
                order += 1
                if not known[sk.skill_id]:
                    known[sk.skill_id] = bool(rng.random() < p.p_transit)

        for sk in spec.skills:
            final_known[(student_id, sk.skill_id)] = known[sk.skill_id]
            p_item = _emission_prob(
                known[sk.skill_id], ability, spec.posttest_guess, spec.posttest_slip
            )
            hits = sum(
                1
                for _ in range(spec.posttest_items_per_skill)
                if rng.random() < p_item
            )
            post_entries[(student_id, sk.skill_id)] = hits / spec.posttest_items_per_skill

    return (
        records,
        PosttestScores(entries=post_entries),
        GroundTruth(final_known=final_known, ability=abilities),
    )


def mastery_saturation_scenario(seed: int) -> CohortSpec:
    """Canned regime with abundant practice: most students reach true
    knowledge within the system while posttest scores stay dispersed."""
    params = BktParams(p_init=0.15, p_transit=0.4, p_guess=0.15, p_slip=0.1)
    skills = tuple(
        SkillSpec(skill_id=f"skill_{i:02d}", opportunities=24, true_params=params)
        for i in range(1, 5)
    )
    return CohortSpec(
        num_students=200,
        skills=skills,
        ability_sd=1.5,
        posttest_items_per_skill=20,
        posttest_guess=0.25,
        posttest_slip=0.2,
        seed=seed,
    )


def ground_truth_to_csv(truth: GroundTruth) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["student_id", "skill_id", "final_known", "ability"])
    for (student_id, skill_id), known in sorted(truth.final_known.items()):
        writer.writerow([student_id, skill_id, int(known), repr(truth.ability[student_id])])
    return out.getvalue().encode("utf-8")
