import itertools
import math

import numpy as np
import pytest

from capex.errors import InvalidModelError, InvalidValueError, MissingBindingError
from capex.learner import (
    LearnerState,
    best_query,
    evaluate_all_queries,
    expected_posterior_error,
    initial_learner_state,
    model_error,
    passive_query,
    record_observation,
)
from capex.model import (
    DirichletCPT,
    Instantiation,
    ModelState,
    NetworkStructure,
    VariableSpec,
    enumerate_instantiations,
    uniform_model,
)

from oracles import brute_force_epe, delta_direct, model_error_from_scratch

LN4 = math.log(4.0)


def two_row_learner(alpha_rows, outcome_k=2):
    x = VariableSpec("X", ("a", "b"), "command", True)
    o = VariableSpec("O", tuple(f"v{i}" for i in range(outcome_k)), "outcome")
    structure = NetworkStructure((x, o), {"O": ("X",)})
    cpt = DirichletCPT("O", np.array(alpha_rows, dtype=float))
    return initial_learner_state(ModelState(structure, {"O": cpt}))


class TestModelError:
    def test_fresh_ballkick(self, ballkick_learner):
        assert model_error(ballkick_learner) == pytest.approx(LN4 - 13 / 12, abs=1e-12)

    def test_concentrated_rows(self, ballkick_learner):
        model = ballkick_learner.model.with_cpt(DirichletCPT("KDo", np.full((9, 4), 100.0)))
        state = initial_learner_state(model)
        assert model_error(state) < 0.004

    def test_two_row_toy_matches_oracle(self):
        state = two_row_learner([[1.0, 1.0], [3.0, 1.0]])
        expect = (delta_direct([1.0, 1.0]) + delta_direct([3.0, 1.0])) / 2.0
        assert model_error(state) == pytest.approx(expect, abs=1e-12)

    def test_matches_scratch_recompute(self, ballkick_learner):
        rng = np.random.default_rng(11)
        model = ballkick_learner.model.with_cpt(
            DirichletCPT("KDo", rng.uniform(0.5, 9.0, size=(9, 4)))
        )
        state = initial_learner_state(model)
        assert model_error(state) == pytest.approx(model_error_from_scratch(model), abs=1e-12)


class TestExpectedPosteriorError:
    def test_fresh_ballkick_value(self, ballkick_learner):
        q = enumerate_instantiations(ballkick_learner.query_specs)[0]
        ev = expected_posterior_error(ballkick_learner, q)
        me = LN4 - 13 / 12
        expect = me - (1.0 / 9.0) * (delta_direct([1, 1, 1, 1]) - delta_direct([2, 1, 1, 1]))
        assert ev.epe == pytest.approx(expect, abs=1e-12)
        assert ev.epe == pytest.approx(0.29695, abs=5e-6)

    def test_saturated_model(self, ballkick_learner):
        model = ballkick_learner.model.with_cpt(DirichletCPT("KDo", np.full((9, 4), 1e6)))
        state = initial_learner_state(model)
        q = enumerate_instantiations(state.query_specs)[0]
        assert expected_posterior_error(state, q).epe == pytest.approx(model_error(state), rel=1e-3)

    def test_prefers_uncertain_row(self):
        state = two_row_learner([[1.0, 1.0], [10.0, 10.0]])
        qa, qb = enumerate_instantiations(state.query_specs)
        assert expected_posterior_error(state, qa).epe < expected_posterior_error(state, qb).epe

    def test_rejects_non_query_binding(self, ballkick_learner):
        with pytest.raises(InvalidValueError):
            expected_posterior_error(
                ballkick_learner,
                Instantiation({"Position": "Middle", "KDc": "Left", "KDo": "Left"}),
            )
        with pytest.raises((InvalidValueError, MissingBindingError)):
            expected_posterior_error(ballkick_learner, Instantiation({"KDc": "Left"}))

    def test_never_exceeds_model_error(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            rows = rng.uniform(0.3, 15.0, size=(2, 3))
            state = two_row_learner(rows, outcome_k=3)
            me = model_error(state)
            for q in enumerate_instantiations(state.query_specs):
                assert expected_posterior_error(state, q).epe <= me + 1e-12

    def test_risk_decomposition_matches_epe(self):
        rng = np.random.default_rng(23)
        rows = rng.uniform(0.5, 8.0, size=(2, 4))
        state = two_row_learner(rows, outcome_k=4)
        q = enumerate_instantiations(state.query_specs)[0]
        ev = expected_posterior_error(state, q)
        spec = state.model.structure.outcome_vars[0]
        cpt = state.model.cpts["O"]
        pred = cpt.alpha[0] / cpt.alpha[0].sum()
        combined = sum(pred[j] * ev.posterior_risk_by_outcome[v] for j, v in enumerate(spec.domain))
        assert combined == pytest.approx(ev.epe, abs=1e-12)

    def test_matches_brute_force_oracle(self, ballkick_learner):
        rng = np.random.default_rng(29)
        model = ballkick_learner.model.with_cpt(
            DirichletCPT("KDo", rng.uniform(0.5, 12.0, size=(9, 4)))
        )
        state = initial_learner_state(model)
        for q in enumerate_instantiations(state.query_specs)[:3]:
            assert expected_posterior_error(state, q).epe == pytest.approx(
                brute_force_epe(state, q), abs=1e-10
            )


class TestUncontrolledMarginalization:
    def make_state(self, env):
        x = VariableSpec("X", ("a", "b"), "command", True)
        u = VariableSpec("U", ("u0", "u1"), "context", controllable=False)
        o = VariableSpec("O", ("s", "f"), "outcome")
        structure = NetworkStructure((x, u, o), {"O": ("X", "U")})
        model = uniform_model(structure)
        rng = np.random.default_rng(31)
        model = model.with_cpt(DirichletCPT("O", rng.uniform(0.5, 6.0, size=(4, 2))))
        state = initial_learner_state(model)  # Q = {X}, U uncontrolled
        return LearnerState(model, state.query_vars, {"U": np.array(env)}, ())

    def test_epe_matches_oracle_under_environment_dist(self):
        state = self.make_state([0.3, 0.7])
        assert state.query_vars == ("X",)
        for q in enumerate_instantiations(state.query_specs):
            assert expected_posterior_error(state, q).epe == pytest.approx(
                brute_force_epe(state, q), abs=1e-12
            )

    def test_zero_probability_branch_skipped(self):
        state = self.make_state([1.0, 0.0])
        q = enumerate_instantiations(state.query_specs)[0]
        assert expected_posterior_error(state, q).epe == pytest.approx(
            brute_force_epe(state, q), abs=1e-12
        )


class TestBestQuery:
    def test_symmetric_model_takes_first(self, ballkick_learner):
        queries = enumerate_instantiations(ballkick_learner.query_specs)
        assert best_query(ballkick_learner) == queries[0]

    def test_avoids_concentrated_row(self):
        state = two_row_learner([[10.0, 10.0], [1.0, 1.0]])
        assert best_query(state) == Instantiation({"X": "b"})

    def test_single_query_space(self):
        x = VariableSpec("X", ("a", "b"), "command", True)
        o = VariableSpec("O", ("s", "f"), "outcome")
        structure = NetworkStructure((x, o), {"O": ("X",)})
        state = initial_learner_state(uniform_model(structure))
        assert best_query(state) in enumerate_instantiations(state.query_specs)

    def test_greedy_equals_exhaustive_oracle_small_models(self):
        rng = np.random.default_rng(41)
        for n_sit, k in itertools.product([1, 2], [2, 3, 4]):
            sit_vars = tuple(
                VariableSpec(f"S{i}", ("0", "1"), "command", True) for i in range(n_sit)
            )
            o = VariableSpec("O", tuple(f"v{j}" for j in range(k)), "outcome")
            structure = NetworkStructure(
                sit_vars + (o,), {"O": tuple(v.name for v in sit_vars)}
            )
            alpha = rng.uniform(0.4, 9.0, size=(2**n_sit, k))
            state = initial_learner_state(
                ModelState(structure, {"O": DirichletCPT("O", alpha)})
            )
            evals = evaluate_all_queries(state)
            oracle = [brute_force_epe(state, q) for q, _ in evals]
            for (_, epe), expect in zip(evals, oracle):
                assert epe == pytest.approx(expect, abs=1e-10)
            assert best_query(state) == evals[int(np.argmin(oracle))][0]

    def test_information_seeking_two_rows(self):
        # row a carries strictly larger residual risk, so the learner goes there
        state = two_row_learner([[1.0, 1.0], [4.0, 4.0]])
        assert best_query(state) == Instantiation({"X": "a"})


class TestPassiveQuery:
    def test_deterministic_per_seed(self, ballkick_learner):
        seq1 = [passive_query(ballkick_learner, np.random.default_rng(3)) for _ in range(5)]
        rng = np.random.default_rng(3)
        seq2 = [passive_query(ballkick_learner, rng) for _ in range(1)]
        assert seq1[0] == seq2[0]
        rng_a, rng_b = np.random.default_rng(9), np.random.default_rng(9)
        assert [passive_query(ballkick_learner, rng_a) for _ in range(10)] == [
            passive_query(ballkick_learner, rng_b) for _ in range(10)
        ]

    def test_uniform_frequencies(self, ballkick_learner):
        rng = np.random.default_rng(12)
        counts = {}
        for _ in range(9000):
            q = passive_query(ballkick_learner, rng)
            counts[q] = counts.get(q, 0) + 1
        assert len(counts) == 9
        assert all(900 <= c <= 1100 for c in counts.values())

    def test_single_query_space(self):
        x = VariableSpec("X", ("a", "b"), "command", True)
        o = VariableSpec("O", ("s", "f"), "outcome")
        structure = NetworkStructure((x, o), {"O": ("X",)})
        state = initial_learner_state(uniform_model(structure))
        q = passive_query(state, np.random.default_rng(0))
        assert set(q) == {"X"}


class TestRecordObservation:
    def test_single_row_updated(self, ballkick_learner):
        sit = Instantiation({"Position": "Middle", "KDc": "Left"})
        out = Instantiation({"KDo": "Left"})
        new = record_observation(ballkick_learner, sit, out)
        alpha = new.model.cpts["KDo"].alpha
        assert alpha.sum() == 9 * 4 + 1
        changed = np.argwhere(alpha != 1.0)
        assert len(changed) == 1
        assert len(new.history) == 1

    def test_repeated_observation_dominates(self, ballkick_learner):
        state = ballkick_learner
        sit = Instantiation({"Position": "LeftSide", "KDc": "Right"})
        out = Instantiation({"KDo": "Right"})
        for _ in range(4):  # n >= |domain|
            state = record_observation(state, sit, out)
        from capex.model import posterior_mean, situation_index

        idx = situation_index(state.model.structure, "KDo", sit)
        mean = posterior_mean(state.model.cpts["KDo"], idx)
        assert state.model.structure.var("KDo").domain[int(np.argmax(mean))] == "Right"

    def test_model_error_strictly_decreases(self, ballkick_learner):
        sit = Instantiation({"Position": "Middle", "KDc": "Mid"})
        out = Instantiation({"KDo": "None"})
        before = model_error(ballkick_learner)
        after = model_error(record_observation(ballkick_learner, sit, out))
        assert after < before

    def test_order_invariance_over_multiset(self, ballkick_learner):
        sits = enumerate_instantiations(ballkick_learner.model.structure.situation_vars)
        obs = [
            (sits[0], Instantiation({"KDo": "Left"})),
            (sits[0], Instantiation({"KDo": "None"})),
            (sits[4], Instantiation({"KDo": "Mid"})),
            (sits[8], Instantiation({"KDo": "Right"})),
        ]
        finals = []
        for perm in itertools.permutations(obs):
            state = ballkick_learner
            for sit, out in perm:
                state = record_observation(state, sit, out)
            finals.append(state.model.cpts["KDo"].alpha)
        for a in finals[1:]:
            assert np.array_equal(a, finals[0])

    def test_incomplete_bindings_rejected(self, ballkick_learner):
        with pytest.raises(MissingBindingError):
            record_observation(
                ballkick_learner,
                Instantiation({"Position": "Middle"}),
                Instantiation({"KDo": "Left"}),
            )
        with pytest.raises(MissingBindingError):
            record_observation(
                ballkick_learner,
                Instantiation({"Position": "Middle", "KDc": "Left"}),
                Instantiation({}),
            )


class TestLearnerStateValidation:
    def test_command_must_be_in_query_vars(self, ballkick_model):
        with pytest.raises(InvalidModelError):
            LearnerState(ballkick_model, ("Position",), {})

    def test_uncontrolled_must_cover_complement(self):
        x = VariableSpec("X", ("a", "b"), "command", True)
        u = VariableSpec("U", ("u0", "u1"), "context", controllable=False)
        o = VariableSpec("O", ("s", "f"), "outcome")
        structure = NetworkStructure((x, u, o), {"O": ("X", "U")})
        model = uniform_model(structure)
        with pytest.raises((InvalidModelError, KeyError)):
            LearnerState(model, ("X",), {})
