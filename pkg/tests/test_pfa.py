import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from skilltrace import pfa
from skilltrace.pfa import EmptyData, SkillWeights


def generate_sequences(weights, num_students, steps, seed):
    rng = np.random.default_rng(seed)
    seqs = []
    for _ in range(num_students):
        s = f = 0
        seq = []
        for _ in range(steps):
            m = weights.beta + weights.gamma * s + weights.rho * f
            correct = bool(rng.random() < 1.0 / (1.0 + math.exp(-m)))
            seq.append(correct)
            if correct:
                s += 1
            else:
                f += 1
        seqs.append(seq)
    return seqs


class TestPredict:
    def test_logistic_at_zero(self):
        assert pfa.predict(0, 0, SkillWeights(0.0, 0.5, -0.2)) == 0.5

    def test_hand_value(self):
        w = SkillWeights(-1.0, 0.5, -0.2)
        assert pfa.predict(2, 1, w) == pytest.approx(0.450166, abs=1e-6)

    def test_success_monotone_when_gamma_positive(self):
        w = SkillWeights(-0.3, 0.4, -0.1)
        assert pfa.predict(3, 2, w) > pfa.predict(2, 2, w)


class TestTraceStudent:
    def test_first_step_uses_no_history(self):
        w = SkillWeights(-0.7, 1.0, -1.0)
        preds = pfa.trace_student([True, False, True], w)
        assert preds[0] == pytest.approx(1.0 / (1.0 + math.exp(0.7)))

    def test_hand_sequence(self):
        w = SkillWeights(0.0, 1.0, -1.0)
        preds = pfa.trace_student([True, False], w)
        assert preds == pytest.approx([0.5, 0.731059], abs=1e-6)
        assert pfa.final_probability([True, False], w) == pytest.approx(0.5)

    def test_null_model_constant_half(self):
        w = SkillWeights(0.0, 0.0, 0.0)
        assert pfa.trace_student([True] * 5, w) == [0.5] * 5


class TestFit:
    def test_recovers_generator(self):
        true = SkillWeights(beta=-0.5, gamma=0.4, rho=-0.3)
        seqs = generate_sequences(true, 1000, 10, seed=3)
        fitted = pfa.fit_skill_weights(seqs)
        assert fitted.beta == pytest.approx(true.beta, abs=0.1)
        assert fitted.gamma == pytest.approx(true.gamma, abs=0.1)
        assert fitted.rho == pytest.approx(true.rho, abs=0.1)

    def test_null_data_recovers_zero(self):
        rng = np.random.default_rng(8)
        seqs = [[bool(b) for b in rng.integers(0, 2, 10)] for _ in range(600)]
        fitted = pfa.fit_skill_weights(seqs)
        assert abs(fitted.beta) < 0.05
        assert abs(fitted.gamma) < 0.05
        assert abs(fitted.rho) < 0.05

    def test_first_order_optimality(self):
        true = SkillWeights(0.2, 0.3, -0.4)
        seqs = generate_sequences(true, 500, 8, seed=5)
        fitted = pfa.fit_skill_weights(seqs)
        X, y = pfa._design_matrix(seqs)
        grad = pfa.gradient(fitted.as_array(), X, y)
        assert np.max(np.abs(grad)) < 1e-6

    def test_separable_data_stays_capped(self):
        fitted = pfa.fit_skill_weights([[True] * 6] * 30)
        for value in (fitted.beta, fitted.gamma, fitted.rho):
            assert abs(value) <= pfa.PARAM_CAP

    def test_permuting_students_leaves_fit_unchanged(self):
        true = SkillWeights(-0.2, 0.5, -0.1)
        seqs = generate_sequences(true, 80, 6, seed=13)
        fitted = pfa.fit_skill_weights(seqs)
        permuted = pfa.fit_skill_weights(list(reversed(seqs)))
        # summation order perturbs the float path; the optimum is shared
        assert fitted.as_array() == pytest.approx(permuted.as_array(), abs=1e-7)

    def test_empty_data(self):
        with pytest.raises(EmptyData):
            pfa.fit_skill_weights([], "ord")


@given(
    beta=st.floats(-2, 2),
    gamma=st.floats(-1, 1),
    rho=st.floats(-1, 1),
    point=st.tuples(st.floats(-2, 2), st.floats(-1, 1), st.floats(-1, 1)),
)
def test_gradient_matches_finite_differences(beta, gamma, rho, point):
    seqs = generate_sequences(SkillWeights(beta, gamma, rho), 30, 6, seed=1)
    X, y = pfa._design_matrix(seqs)
    theta = np.asarray(point)
    analytic = pfa.gradient(theta, X, y)
    eps = 1e-6
    for dim in range(3):
        shift = np.zeros(3)
        shift[dim] = eps
        num = (
            pfa.log_likelihood(theta + shift, X, y)
            - pfa.log_likelihood(theta - shift, X, y)
        ) / (2 * eps)
        denom = max(abs(num), abs(analytic[dim]), 1.0)
        assert abs(num - analytic[dim]) / denom < 1e-6


def test_concavity_along_random_segments():
    seqs = generate_sequences(SkillWeights(0.1, 0.2, -0.2), 50, 8, seed=2)
    X, y = pfa._design_matrix(seqs)
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.normal(size=3)
        b = rng.normal(size=3)
        mid = pfa.log_likelihood((a + b) / 2, X, y)
        assert mid >= (pfa.log_likelihood(a, X, y) + pfa.log_likelihood(b, X, y)) / 2 - 1e-9


def test_fit_requires_observations_per_skill():
    with pytest.raises(EmptyData):
        pfa.fit({"ord": [[True, False]], "num": []})


def test_params_csv_header():
    params = pfa.fit({"ord": [[True, False, True]] * 10})
    lines = pfa.params_to_csv(params).decode().strip().split("\n")
    assert lines[0] == "skill_id,beta,gamma,rho"
    assert len(lines) == 2
