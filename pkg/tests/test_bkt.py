import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skilltrace import bkt
from skilltrace.bkt import BktParams, DegenerateDenominator, EmptyData


def path_enumeration_predictions(obs, params):
    """Independent oracle: per-step P(correct_t | obs_1..t-1) by summing over
    every knowledge path in {0,1}^t."""

    def joint(observations):
        t = len(observations)
        total = 0.0
        for path in itertools.product([0, 1], repeat=t):
            p = params.p_init if path[0] else 1.0 - params.p_init
            for a, b in zip(path, path[1:]):
                if a == 1:
                    p *= 1.0 if b == 1 else 0.0
                else:
                    p *= params.p_transit if b == 1 else 1.0 - params.p_transit
            for k, o in zip(path, observations):
                p_correct = 1.0 - params.p_slip if k else params.p_guess
                p *= p_correct if o else 1.0 - p_correct
            total += p
        return total

    preds = []
    for t in range(len(obs)):
        prefix = list(obs[:t])
        denom = joint(prefix) if prefix else 1.0
        preds.append(joint(prefix + [True]) / denom)
    return preds


class TestPredictCorrect:
    def test_known_student_never_slips(self):
        params = BktParams(0.5, 0.1, 0.25, 0.0)
        assert bkt.predict_correct(1.0, params) == 1.0

    def test_hand_value(self):
        params = BktParams(0.5, 0.1, 0.2, 0.1)
        assert bkt.predict_correct(0.5, params) == pytest.approx(0.55, abs=1e-12)

    def test_unknown_student_only_guesses(self):
        params = BktParams(0.5, 0.1, 0.2, 0.1)
        assert bkt.predict_correct(0.0, params) == 0.2

    @given(
        L=st.floats(0, 1),
        g=st.floats(0.01, 0.3),
        s=st.floats(0.01, 0.3),
    )
    def test_convex_combination_bound(self, L, g, s):
        params = BktParams(0.5, 0.1, g, s)
        p = bkt.predict_correct(L, params)
        assert min(g, 1 - s) - 1e-12 <= p <= max(g, 1 - s) + 1e-12


class TestUpdateKnowledge:
    def test_hand_value_correct(self):
        params = BktParams(0.5, 0.3, 0.2, 0.1)
        assert bkt.update_knowledge(0.5, True, params) == pytest.approx(
            0.45 / 0.55 + (1 - 0.45 / 0.55) * 0.3, abs=1e-12
        )
        assert bkt.update_knowledge(0.5, True, params) == pytest.approx(0.872727, abs=1e-6)

    def test_hand_value_incorrect(self):
        params = BktParams(0.5, 0.3, 0.2, 0.1)
        assert bkt.update_knowledge(0.5, False, params) == pytest.approx(0.377778, abs=1e-6)

    def test_zero_transit_symmetric_guess_slip(self):
        params = BktParams(0.5, 0.0, 0.2, 0.2)
        assert bkt.update_knowledge(0.5, True, params) == pytest.approx(0.8, abs=1e-12)

    def test_degenerate_denominator(self):
        params = BktParams(0.5, 0.1, 0.0, 0.0)
        with pytest.raises(DegenerateDenominator):
            bkt.update_knowledge(0.0, True, params)

    @given(
        L=st.floats(0.01, 0.99),
        g=st.floats(0.01, 0.3),
        s=st.floats(0.01, 0.3),
        correct=st.booleans(),
    )
    def test_bayes_sanity(self, L, g, s, correct):
        # zero transit isolates the posterior: correct never lowers L,
        # incorrect never raises it
        params = BktParams(0.5, 0.0, g, s)
        posterior = bkt.update_knowledge(L, correct, params)
        if correct:
            assert posterior >= L - 1e-12
        else:
            assert posterior <= L + 1e-12


class TestTraceStudent:
    def test_length_one_initializes_at_p_init(self):
        params = BktParams(0.37, 0.2, 0.15, 0.1)
        trace = bkt.trace_student([True], params)
        assert len(trace) == 1
        assert trace.p_known_before[0] == 0.37

    def test_all_correct_monotone_knowledge(self):
        params = BktParams(0.3, 0.2, 0.15, 0.1)
        trace = bkt.trace_student([True] * 12, params)
        after = trace.p_known_after
        assert all(b > a for a, b in zip(after, after[1:]))

    def test_learning_step_never_reduces_posterior(self):
        params = BktParams(0.3, 0.25, 0.2, 0.15)
        rng = np.random.default_rng(4)
        seq = [bool(b) for b in rng.integers(0, 2, 20)]
        # p_known_after must dominate the posterior before the learning step
        trace = bkt.trace_student(seq, params)
        L = params.p_init
        for obs, after in zip(seq, trace.p_known_after):
            posterior = bkt.update_knowledge(L, obs, BktParams(0.3, 0.0, 0.2, 0.15))
            assert after >= posterior - 1e-12
            L = after

    def test_empty_sequence_rejected(self):
        with pytest.raises(EmptyData):
            bkt.trace_student([], BktParams(0.3, 0.2, 0.15, 0.1))

    def test_matches_path_enumeration_oracle(self):
        rng = np.random.default_rng(123)
        for _ in range(25):
            params = BktParams(
                p_init=rng.uniform(0.01, 0.99),
                p_transit=rng.uniform(0.01, 0.99),
                p_guess=rng.uniform(0.01, 0.3),
                p_slip=rng.uniform(0.01, 0.3),
            )
            t = int(rng.integers(1, 11))
            obs = [bool(b) for b in rng.integers(0, 2, t)]
            expected = path_enumeration_predictions(obs, params)
            trace = bkt.trace_student(obs, params)
            assert np.allclose(trace.p_correct_pred, expected, atol=1e-10)


class TestFitSkill:
    def test_all_correct_saturates_at_bounds(self):
        fitted = bkt.fit_skill([[True] * 8] * 20)
        assert fitted.p_slip == bkt.PROB_FLOOR
        assert (
            fitted.p_init == bkt.PROB_CEILING
            or fitted.p_guess == bkt.GUESS_SLIP_CEILING
        )

    def test_single_observation_dominates_baseline(self):
        fitted = bkt.fit_skill([[True]])
        baseline = BktParams(0.5, 0.5, 0.3, 0.01)
        assert fitted.in_bounds()
        assert bkt.log_likelihood([[True]], fitted) >= bkt.log_likelihood(
            [[True]], baseline
        )

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        seqs = [[bool(b) for b in rng.integers(0, 2, 10)] for _ in range(40)]
        assert bkt.fit_skill(seqs) == bkt.fit_skill(seqs)

    def test_empty_data(self):
        with pytest.raises(EmptyData):
            bkt.fit_skill([])
        with pytest.raises(EmptyData):
            bkt.fit_skill([[], []])


class TestKernelPaths:
    def test_numpy_path_matches_numba_path(self):
        from skilltrace import _bkt_kernels as kern

        rng = np.random.default_rng(5)
        seqs = [[bool(b) for b in rng.integers(0, 2, rng.integers(1, 12))] for _ in range(30)]
        patterns, lengths, counts = kern.group_patterns(seqs)
        k = 50
        p0 = rng.uniform(0.01, 0.99, k)
        pt = rng.uniform(0.01, 0.99, k)
        pg = rng.uniform(0.01, 0.3, k)
        ps = rng.uniform(0.01, 0.3, k)
        ll_numpy = kern.grid_loglik_numpy(patterns, lengths, counts, p0, pt, pg, ps)
        if kern.grid_loglik_numba is not None:
            ll_numba = kern.grid_loglik_numba(patterns, lengths, counts, p0, pt, pg, ps)
            assert np.allclose(ll_numpy, ll_numba, rtol=1e-12, atol=1e-9)
        # the scalar reference agrees with the vectorized fallback
        ll_scalar = kern._grid_loglik_scalar(patterns, lengths, counts, p0, pt, pg, ps)
        assert np.allclose(ll_numpy, ll_scalar, rtol=1e-12, atol=1e-9)


def test_params_csv_round_trippable():
    fitted = {
        "ord": BktParams(0.4, 0.2, 0.15, 0.1),
        "num": BktParams(0.3, 0.25, 0.2, 0.05),
    }
    blob = bkt.params_to_csv(fitted).decode()
    lines = blob.strip().split("\n")
    assert lines[0] == "skill_id,p_init,p_transit,p_guess,p_slip"
    assert len(lines) == 3
    assert lines[1].startswith("num,")
