import io
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfent.born import MeasurementSetting, RngStream, collapse, correlator, expectation, measure_sequence, spin_family
from cfent.protocols import (
    FACTORABLE_PRESETS,
    GHZ_PRESETS,
    Scenario,
    TrialRecord,
    analyze,
    bayes_check,
    build_factorable,
    build_ghz,
    chsh_grid_scan,
    chsh_menu,
    conditional_given_ancilla,
    conditional_pair_state,
    estimate_stats,
    exact_chsh,
    exact_joint,
    matching_bell_label,
    optimal_chsh_angles,
    partition_records,
    preset_menu,
    read_jsonl,
    run_trials,
    swap_outcome_state,
    write_jsonl,
)
from cfent.qcore import (
    BELL_LABELS,
    SX,
    SZ,
    X,
    Z,
    BlochDirection,
    bell_basis,
    bell_state,
    fidelity,
    partial_trace,
    projector,
    random_direction,
    tensor,
)
from conftest import directions

TSIRELSON = 2 * math.sqrt(2)
SPEC_ANGLES = (0.0, math.pi / 2, math.pi / 4, -math.pi / 4)


def brute_force_local_bound(corr, grid=24):
    """Max |S| from an analytic correlator function on the same angle grid."""
    g = [k * math.pi / grid for k in range(grid)]
    e = np.array([[corr(a, b) for b in g] for a in g])
    best = 0.0
    for i in range(grid):
        for j in range(grid):
            s = e[i, :, None] + e[i, None, :] + e[j, :, None] - e[j, None, :]
            best = max(best, float(np.abs(s).max()))
    return best


class TestStates:
    def test_ghz(self):
        r = 1 / math.sqrt(2)
        np.testing.assert_allclose(build_ghz(), [r, 0, 0, 0, 0, 0, 0, r])
        assert abs(np.linalg.norm(build_ghz()) - 1) < 1e-15
        psi = build_ghz()
        # odd parity: <zzz> = (1 + (-1)^3) / 2 = 0; pairs are perfectly correlated
        assert abs(expectation(psi, tensor(SZ, SZ, SZ))) < 1e-12
        assert abs(expectation(psi, tensor(SZ, SZ, np.eye(2))) - 1) < 1e-12
        assert abs(expectation(psi, tensor(SX, SX, SX)) - 1) < 1e-12

    def test_factorable(self):
        assert abs(np.linalg.norm(build_factorable()) - 1) < 1e-15
        np.testing.assert_allclose(partial_trace(build_factorable(), [0, 1]), np.eye(4) / 4, atol=1e-12)
        # particles 1 and 3 share phi_plus
        np.testing.assert_allclose(partial_trace(build_factorable(), [0, 2]), projector(bell_basis()[0]), atol=1e-12)

    def test_scenario_validation(self):
        with pytest.raises(ValueError):
            Scenario("werner")


class TestConditionalPairState:
    def test_x_branches(self):
        plus = conditional_pair_state(X, 1)
        minus = conditional_pair_state(X, -1)
        assert abs(fidelity(plus.state, bell_state("phi_plus")) - 1) < 1e-12
        assert abs(fidelity(minus.state, bell_state("phi_minus")) - 1) < 1e-12
        assert plus.probability == minus.probability == 0.5
        assert not plus.degenerate

    @given(st.floats(0, math.pi))
    def test_xz_plane_matches_real_coefficients(self, theta):
        # alpha = cos(theta/2), beta = sin(theta/2) in the x-z plane
        a, b = math.cos(theta / 2), math.sin(theta / 2)
        d = BlochDirection(theta, 0.0)
        np.testing.assert_allclose(conditional_pair_state(d, 1).state, [a, 0, 0, b], atol=1e-15)
        np.testing.assert_allclose(conditional_pair_state(d, -1).state, [b, 0, 0, -a], atol=1e-15)

    @given(directions(), st.sampled_from([1, -1]))
    def test_matches_collapse(self, d, outcome):
        fam = spin_family(d, 2, 3)
        post = collapse(build_ghz(), fam, fam.index(outcome))
        branch = conditional_pair_state(d, outcome)
        anc = np.linalg.eigh(partial_trace(post, [2]))[1][:, -1]
        expected = tensor(branch.state, anc)
        assert abs(fidelity(post, expected) - 1) < 1e-12
        assert abs(np.linalg.norm(branch.state) - 1) < 1e-12

    def test_degenerate_z(self):
        for outcome in (1, -1):
            b = conditional_pair_state(Z, outcome)
            assert b.degenerate
            for q in (0, 1):
                r = partial_trace(b.state, [q])
                assert abs(np.trace(r @ r).real - 1) < 1e-12

    def test_bad_outcome(self):
        with pytest.raises(ValueError):
            conditional_pair_state(X, 0)


class TestSwap:
    @pytest.mark.parametrize("label", BELL_LABELS)
    def test_swap_gives_same_bell_state(self, label):
        assert matching_bell_label(swap_outcome_state(label)) == label

    def test_outputs_orthogonal_and_maximally_entangled(self):
        outs = [swap_outcome_state(l) for l in BELL_LABELS]
        for i in range(4):
            for j in range(i + 1, 4):
                assert abs(np.vdot(outs[i], outs[j])) < 1e-12
            for q in (0, 1):
                np.testing.assert_allclose(partial_trace(outs[i], [q]), np.eye(2) / 2, atol=1e-12)


class TestExactChsh:
    def test_phi_plus_tsirelson(self):
        assert abs(exact_chsh(bell_state("phi_plus"), SPEC_ANGLES) - TSIRELSON) < 1e-12

    def test_separable_grid_bound(self):
        rho = partial_trace(build_ghz(), [0, 1])
        best, _ = chsh_grid_scan(rho)
        oracle = brute_force_local_bound(lambda a, b: math.cos(a) * math.cos(b))
        assert abs(best - 2) < 1e-9
        assert abs(best - oracle) < 1e-12

    def test_product_grid_bound(self):
        best, _ = chsh_grid_scan(np.array([1, 0, 0, 0], dtype=complex))
        assert abs(best - 2) < 1e-9

    def test_grid_finds_violation_for_entangled(self):
        best, ang = chsh_grid_scan(bell_state("phi_plus"))
        assert abs(best - TSIRELSON) < 1e-9
        assert abs(abs(exact_chsh(bell_state("phi_plus"), ang)) - best) < 1e-12

    @pytest.mark.parametrize("label", BELL_LABELS)
    def test_presets_reproduce_optimizer(self, label):
        state = swap_outcome_state(label)
        angles, value = optimal_chsh_angles(state)
        np.testing.assert_allclose(angles, FACTORABLE_PRESETS[label], atol=1e-12)
        assert abs(value - TSIRELSON) < 1e-9
        assert abs(exact_chsh(state, FACTORABLE_PRESETS[label]) - TSIRELSON) < 1e-9

    @pytest.mark.parametrize("outcome", [1, -1])
    def test_ghz_presets(self, outcome):
        state = conditional_pair_state(X, outcome).state
        angles, value = optimal_chsh_angles(state)
        np.testing.assert_allclose(angles, GHZ_PRESETS[outcome], atol=1e-12)
        assert abs(exact_chsh(state, GHZ_PRESETS[outcome]) - TSIRELSON) < 1e-9

    def test_optimizer_on_partial_entanglement(self):
        # alpha|uu> + beta|dd>: Horodecki max S = 2 sqrt(1 + sin^2 theta)
        theta = 1.0
        state = conditional_pair_state(BlochDirection(theta, 0.0), 1).state
        _, value = optimal_chsh_angles(state)
        assert abs(value - 2 * math.sqrt(1 + math.sin(theta) ** 2)) < 1e-9


class TestBayes:
    def test_z_z_x(self):
        assert bayes_check(Z, Z, X) < 1e-12

    def test_random(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            assert bayes_check(*(random_direction(rng) for _ in range(3))) < 1e-12

    def test_degenerate(self):
        assert bayes_check(BlochDirection(1.0, 0.5), BlochDirection(2.0, 4.0), Z) < 1e-12


class TestExactJoint:
    @settings(max_examples=20, deadline=None)
    @given(st.sampled_from(["ghz", "factorable"]), directions(), directions(), directions())
    def test_pre_post_equivalence(self, kind, a1, a2, d3):
        sc = Scenario(kind, d3)
        last = conditional_given_ancilla(exact_joint(sc, a1, a2, ("o1", "o2", "ancilla")))
        first = conditional_given_ancilla(exact_joint(sc, a1, a2, ("ancilla", "o1", "o2")))
        assert last.keys() == first.keys()
        for anc in last:
            for k in last[anc]:
                assert abs(last[anc][k] - first[anc][k]) < 1e-12

    def test_bad_order(self):
        with pytest.raises(ValueError):
            exact_joint(Scenario("ghz"), Z, Z, ("o1", "o1", "ancilla"))


class TestRunTrials:
    def test_ghz_zz_correlated(self):
        recs = run_trials(Scenario("ghz"), [(Z, Z)], 1000, 5)
        assert all(r.o1 == r.o2 for r in recs)
        assert [r.run for r in recs] == list(range(1000))

    def test_factorable_zz_independent(self):
        n = 100_000
        recs = run_trials(Scenario("factorable"), [(Z, Z)], n, 6)
        joint = exact_joint(Scenario("factorable"), Z, Z)
        p_o1 = sum(p for (o1, _, _), p in joint.items() if o1 == 1)
        p_both = sum(p for (o1, o2, _), p in joint.items() if o1 == o2 == 1)
        assert abs(p_o1 - 0.5) < 1e-12 and abs(p_both - 0.25) < 1e-12
        f1 = sum(r.o1 == 1 for r in recs) / n
        f2 = sum(r.o2 == 1 for r in recs) / n
        f12 = sum(r.o1 == r.o2 == 1 for r in recs) / n
        tol = lambda p: 5 * math.sqrt(p * (1 - p) / n)
        assert abs(f1 - 0.5) <= tol(0.5)
        assert abs(f2 - 0.5) <= tol(0.5)
        assert abs(f12 - 0.25) <= tol(0.25)

    def test_zero_shots(self):
        with pytest.raises(ValueError):
            run_trials(Scenario("ghz"), [(Z, Z)], 0, 1)

    def test_empty_menu(self):
        with pytest.raises(ValueError):
            run_trials(Scenario("ghz"), [], 10, 1)

    def test_matches_measure_sequence(self):
        menu = chsh_menu(SPEC_ANGLES)
        recs = run_trials(Scenario("ghz"), menu, 200, 17)
        for r in recs:
            a1, a2 = menu[r.run % 4]
            seq = [MeasurementSetting(0, a1), MeasurementSetting(1, a2), MeasurementSetting(2, X)]
            out, _ = measure_sequence(build_ghz(), seq, RngStream(17, r.run))
            assert out == [r.o1, r.o2, r.ancilla]

    def test_deterministic(self):
        menu = preset_menu(FACTORABLE_PRESETS)
        a = run_trials(Scenario("factorable"), menu, 500, 3, setting_policy="random")
        b = run_trials(Scenario("factorable"), menu, 500, 3, setting_policy="random")
        assert a == b
        assert len({(r.a1_theta, r.a1_phi, r.a2_theta, r.a2_phi) for r in a}) == len(menu)

    def test_trial_independent_of_shot_count(self):
        a = run_trials(Scenario("ghz"), chsh_menu(SPEC_ANGLES), 50, 8)
        b = run_trials(Scenario("ghz"), chsh_menu(SPEC_ANGLES), 10, 8)
        assert a[:10] == b


class TestPartition:
    def test_ghz_two_groups_no_discard(self):
        recs = run_trials(Scenario("ghz"), chsh_menu(SPEC_ANGLES), 2000, 1)
        parts = partition_records(recs)
        assert set(parts) == {1, -1}
        assert Counter(r for g in parts.values() for r in g) == Counter(recs)
        assert all(r.ancilla == k for k, g in parts.items() for r in g)

    def test_factorable_groups(self):
        recs = run_trials(Scenario("factorable"), [(Z, X)], 2000, 1)
        parts = partition_records(recs)
        assert set(parts) <= set(BELL_LABELS)
        assert sum(map(len, parts.values())) == len(recs)

    def test_ghz_group_sizes(self):
        n = 100_000
        parts = partition_records(run_trials(Scenario("ghz"), chsh_menu(SPEC_ANGLES), n, 2))
        for g in parts.values():
            assert abs(len(g) / n - 0.5) <= 5 * math.sqrt(0.25 / n)


def _rec(run, a, b, o1, o2, anc=1):
    return TrialRecord(run, "ghz", a.theta, a.phi, b.theta, b.phi, o1, o2, anc, X.theta, X.phi)


class TestEstimateStats:
    def test_all_aligned(self):
        recs = [_rec(k, Z, Z, 1, 1) for k in range(10)]
        s = estimate_stats(recs, (0, 0, 0, 0))
        (c,) = s.correlators
        assert c.mean == 1 and c.stderr == 0
        assert s.chsh == 2

    def test_missing_pair(self):
        recs = [_rec(k, Z, Z, 1, 1) for k in range(4)]
        s = estimate_stats(recs, SPEC_ANGLES)
        assert s.chsh is None
        assert len(s.missing) == 4

    def test_table_independent_of_record_order(self):
        recs = run_trials(Scenario("ghz"), chsh_menu(SPEC_ANGLES), 400, 3)
        a = estimate_stats(recs, SPEC_ANGLES).correlators
        b = estimate_stats(recs[::-1], SPEC_ANGLES).correlators
        assert [(c.a, c.b, c.n) for c in a] == [(c.a, c.b, c.n) for c in b]

    @pytest.mark.slow
    def test_postselected_violation(self):
        n = 400_000
        recs = run_trials(Scenario("ghz"), chsh_menu(SPEC_ANGLES), n, 12)
        parts = partition_records(recs)
        plus = estimate_stats(parts[1], SPEC_ANGLES)
        assert abs(plus.chsh - TSIRELSON) <= 5 * plus.chsh_stderr
        whole = estimate_stats(recs, SPEC_ANGLES)
        assert abs(whole.chsh) <= 2 + 5 * whole.chsh_stderr
        # exact whole-ensemble value: E(a,b) = cos a cos b
        exact_whole = exact_chsh(partial_trace(build_ghz(), [0, 1]), SPEC_ANGLES)
        assert abs(whole.chsh - exact_whole) <= 5 * whole.chsh_stderr

    def test_estimates_match_exact_correlators(self):
        n = 100_000
        for kind, presets in (("ghz", GHZ_PRESETS), ("factorable", FACTORABLE_PRESETS)):
            recs = run_trials(Scenario(kind), preset_menu(presets), n, 21)
            for label, group in partition_records(recs).items():
                state = conditional_pair_state(X, label).state if kind == "ghz" else swap_outcome_state(label)
                for c in estimate_stats(group, presets[label]).correlators:
                    assert abs(c.mean - correlator(state, c.a, c.b)) <= 5 * c.stderr


class TestRecordsIO:
    def test_round_trip(self):
        recs = run_trials(Scenario("ghz"), chsh_menu(SPEC_ANGLES), 50, 1)
        recs += run_trials(Scenario("factorable"), chsh_menu(SPEC_ANGLES), 50, 1)
        buf = io.StringIO()
        write_jsonl(recs, buf)
        buf.seek(0)
        assert read_jsonl(buf) == recs

    def test_factorable_fields(self):
        (r,) = run_trials(Scenario("factorable"), [(Z, Z)], 1, 1)
        assert set(r.to_dict()) == {"run", "scenario", "a1_theta", "a1_phi", "a2_theta", "a2_phi", "o1", "o2", "ancilla"}
        assert r.ancilla in BELL_LABELS

    @pytest.mark.parametrize(
        "line",
        [
            '{"run": 0}',
            '{"run": 0, "scenario": "ghz", "a1_theta": 0, "a1_phi": 0, "a2_theta": 0, "a2_phi": 0, "o1": 2, "o2": 1, "ancilla": 1, "anc_theta": 0, "anc_phi": 0}',
            '{"run": 0, "scenario": "factorable", "a1_theta": 0, "a1_phi": 0, "a2_theta": 0, "a2_phi": 0, "o1": 1, "o2": 1, "ancilla": 1}',
            "not json",
        ],
    )
    def test_malformed_reports_line(self, line):
        good = run_trials(Scenario("ghz"), [(Z, Z)], 1, 1)[0].to_json()
        with pytest.raises(ValueError, match="line 2"):
            read_jsonl(io.StringIO(good + "\n" + line + "\n"))


class TestAnalyze:
    def test_structure(self):
        recs = run_trials(Scenario("factorable"), preset_menu(FACTORABLE_PRESETS), 4000, 9)
        out = analyze(recs)
        assert out["total"] == 4000
        assert sum(s["count"] for s in out["subensembles"]) == 4000
        assert [s["label"] for s in out["subensembles"]] == list(BELL_LABELS)
        assert all(s["chsh"] is not None for s in out["subensembles"])

    def test_mixed_scenarios(self):
        recs = run_trials(Scenario("ghz"), [(Z, Z)], 2, 1) + run_trials(Scenario("factorable"), [(Z, Z)], 2, 1)
        with pytest.raises(ValueError):
            analyze(recs)
