import numpy as np
import pytest

from skilltrace import bkt, simulator
from skilltrace.dataset import (
    SkillCatalog,
    build_sequences,
    first_attempts,
    skill_subsequence,
)


def roc_auc(labels, scores):
    """Rank-based AUC (Mann-Whitney), ties averaged."""
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    return (ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def grad_group_errors(params, analytic, loss_fn, eps=1e-5):
    """Per-parameter-group relative error between analytic gradients and
    central finite differences of loss_fn(params)."""
    errors = {}
    for key, arr in params.items():
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            lp = loss_fn()
            arr[idx] = orig - eps
            lm = loss_fn()
            arr[idx] = orig
            num[idx] = (lp - lm) / (2.0 * eps)
        denom = max(np.linalg.norm(num.ravel()), np.linalg.norm(analytic[key].ravel()), 1e-12)
        errors[key] = np.linalg.norm((num - analytic[key]).ravel()) / denom
    return errors


def structured_cohort(num_students, seed, opportunities=15, num_skills=2):
    """Cohort with strong mastery structure: learnable next-step signal."""
    params = bkt.BktParams(p_init=0.3, p_transit=0.2, p_guess=0.1, p_slip=0.1)
    skills = tuple(
        simulator.SkillSpec(f"skill_{i:02d}", opportunities, params)
        for i in range(1, num_skills + 1)
    )
    spec = simulator.CohortSpec(
        num_students=num_students,
        skills=skills,
        ability_sd=1.5,
        posttest_items_per_skill=10,
        posttest_guess=0.2,
        posttest_slip=0.15,
        seed=seed,
    )
    records, posttest, truth = simulator.generate_cohort(spec)
    catalog = SkillCatalog.from_records(records)
    sequences = build_sequences(first_attempts(records), catalog)
    return sequences, catalog, posttest, truth


def per_skill_subsequences(sequences, catalog):
    out = {s: [] for s in catalog}
    for seq in sequences:
        for skill_id in catalog:
            sub = skill_subsequence(seq, skill_id)
            if sub:
                out[skill_id].append(sub)
    return out


@pytest.fixture(scope="session")
def small_corpus():
    """120-student corpus shared by the slower model tests."""
    return structured_cohort(120, seed=11)
