import json
import math

import numpy as np
import pytest

from dkf.errors import ValidationError
from dkf.expr import CompiledExpr, compile_expr
from dkf.runner import truth_rng
from dkf.scenario import (
    PRESET_NAMES,
    load_scenario,
    preset,
    preset_document,
    simulate_truth,
)


class TestExpr:
    def test_arithmetic_and_functions(self):
        e = compile_expr("sat(2*sin(x1**2 + x2**2) + b0, 2)")
        assert e(x1=0.0, x2=0.0, b0=5.0) == 2.0
        assert e(x1=0.0, x2=0.0, b0=-5.0) == -2.0

    def test_sigma_grammar(self):
        e = compile_expr("mod(floor(k/5), 3) + 1")
        assert [e(k=k) for k in (0, 5, 7, 14, 15)] == [1.0, 2.0, 2.0, 3.0, 1.0]

    def test_constants_pass_through(self):
        assert compile_expr(1600.0)(k=3) == 1600.0

    def test_rejects_attribute_access(self):
        with pytest.raises(ValidationError):
            compile_expr("().__class__")

    def test_rejects_unlisted_calls(self):
        with pytest.raises(ValidationError):
            compile_expr("open('x')")
        with pytest.raises(ValidationError):
            compile_expr("__import__('os')")

    def test_missing_name_reported(self):
        e = compile_expr("x1 + q7")
        with pytest.raises(ValidationError, match="q7"):
            e(x1=1.0)

    def test_division_and_max(self):
        e = compile_expr("4/max(k, 1)**2")
        assert e(k=0) == 4.0
        assert e(k=2) == 1.0


class TestPresets:
    def test_all_presets_load(self):
        for name in PRESET_NAMES:
            sc = preset(name)
            assert sc.name == name
            sc.system_model().validate_dimensions()

    def test_sec61_sigma_examples(self):
        sc = preset("sec61")
        # 1-based graph index per the switching formula
        assert sc.topology.sigma(0) + 1 == 1
        assert sc.topology.sigma(5) + 1 == 2
        assert sc.topology.sigma(7) + 1 == 2
        assert sc.topology.sigma(14) + 1 == 3

    def test_sec61_observation_cycle(self):
        sc = preset("sec61")
        # sensor 1 (index 0) at k = 0: bank index mod(1 + 0, 4) + 1 = 2
        assert np.array_equal(sc.model.h_bar(0, 0), np.array([[0, 1, 0, 0.0]]))
        # sensor 4 (index 3) at k = 0: mod(4, 4) + 1 = 1
        assert np.array_equal(sc.model.h_bar(0, 3), np.array([[1, 0, 0, 0.0]]))
        # period 40 in k
        for i in range(4):
            assert np.array_equal(sc.model.h_bar(3, i), sc.model.h_bar(43, i))

    def test_sec63_singular_schedule(self):
        sc = preset("sec63")
        assert np.linalg.matrix_rank(sc.model.a_bar.at(8)) == 3
        assert np.linalg.matrix_rank(sc.model.a_bar.at(9)) == 3
        for k in (0, 5, 7, 10, 17):
            assert np.linalg.matrix_rank(sc.model.a_bar.at(k)) == 4

    def test_sec63_node_kinds(self):
        sc = preset("sec63")
        kinds = {"x1": 0, "x2": 0, "none": 0}
        for i in range(20):
            h = sc.model.h_bar(0, i)
            if np.array_equal(h, [[1, 0, 0, 0]]):
                kinds["x1"] += 1
            elif np.array_equal(h, [[0, 1, 0, 0]]):
                kinds["x2"] += 1
            else:
                assert not h.any()
                kinds["none"] += 1
        assert kinds["x1"] > 0 and kinds["x2"] > 0 and kinds["none"] > 0
        assert sum(kinds.values()) == 20

    def test_sec62_bias_bounds(self):
        s2 = preset("sec62_situation2")
        assert s2.model.b_bound[2].at(10)[0, 0] == 1600.0
        assert s2.model.b_bound[0].at(2)[0, 0] == pytest.approx(1.0)  # 4/k^2
        s1 = preset("sec62_situation1")
        assert s1.model.b_bound[3].at(2)[0, 0] == pytest.approx(1.0)

    def test_sec62_initialization(self):
        sc = preset("sec62_situation1")
        x0 = sc.initial.x_hat[0]
        assert x0[0] == -10 and x0[2] == pytest.approx(-math.sqrt(10))
        assert sc.initial.p[0][0, 0] == pytest.approx(110.0)
        assert sc.initial.p[0][4, 4] == 1.0

    def test_unknown_preset_rejected(self):
        with pytest.raises(ValidationError, match="unknown preset"):
            preset_document("sec99")


class TestLoader:
    def test_round_trip_through_json_file(self, tmp_path):
        doc = preset_document("sec61")
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(doc))
        sc = load_scenario(path)
        assert sc.name == "sec61"
        assert sc.horizon == 300

    def test_missing_file_is_error(self):
        with pytest.raises(ValidationError, match="neither a preset nor a file|neither"):
            load_scenario("does_not_exist.json")

    def test_dimension_mismatch_names_matrix(self):
        doc = preset_document("sec61")
        doc["model"]["G_bar"] = [[0, 0], [0, 0], [0.1, 0]]  # 3x2, n = 4
        with pytest.raises(ValidationError, match="G_bar"):
            load_scenario(doc)

    def test_row_stochastic_enforced(self):
        doc = preset_document("sec61")
        doc["topology"]["adjacency"][0][0] = [0.9, 0, 0, 0]
        with pytest.raises(ValidationError, match="row"):
            load_scenario(doc)

    def test_negative_tau_rejected(self):
        doc = preset_document("sec61")
        doc["filter"]["tau"] = -1.0
        with pytest.raises(ValidationError, match="threshold"):
            load_scenario(doc)

    def test_explicit_sigma_list(self):
        doc = preset_document("sec61")
        doc["horizon"] = 5
        doc["topology"]["sigma"] = [1, 1, 2, 3, 2, 1]  # 1-based graph indices
        sc = load_scenario(doc)
        assert [sc.topology.sigma(k) for k in range(6)] == [0, 0, 1, 2, 1, 0]
        with pytest.raises(ValidationError, match="cover"):
            sc.topology.sigma(6)

    def test_per_sensor_quantizer_steps(self):
        doc = preset_document("sec61")
        doc["quantizer"] = {"delta": [0.0, 0.5, 0.25, 0.0]}
        sc = load_scenario(doc)
        assert np.array_equal(sc.deltas, [0.0, 0.5, 0.25, 0.0])
        doc["quantizer"] = {"delta": [-0.1, 0, 0, 0]}
        with pytest.raises(ValidationError, match="delta"):
            load_scenario(doc)

    def test_overrides(self):
        sc = preset("sec61").with_overrides(horizon=10, tau=0.0, delta=0.5, runs=3, seed=7)
        assert sc.horizon == 10
        assert sc.filter.tau == 0.0
        assert np.all(sc.deltas == 0.5)
        assert sc.monte_carlo.runs == 3
        assert sc.monte_carlo.seed == 7
        # original untouched
        assert preset("sec61").horizon == 300


class TestTruth:
    def test_uncertain_dynamics_at_origin(self):
        sc = preset("sec61")
        f = sc.model.f_value(np.zeros(4), 9)
        assert np.allclose(f, [3.0, 3.0])  # (sin 0 + k)/3

    def test_bias_saturated(self):
        sc = preset("sec61")
        truth = simulate_truth(sc.with_overrides(horizon=80), truth_rng(1, 0))
        for i in range(4):
            assert np.max(np.abs(truth.b[i])) <= 2.0

    def test_deterministic_rollout_with_zero_noise(self):
        doc = preset_document("sec61")
        doc["model"]["Q"] = (1e-12 * np.eye(4)).tolist()
        doc["model"]["R"] = 1e-12
        doc["model"]["f"] = ["0", "0"]
        doc["model"]["bias"] = "0"
        doc["model"]["b0_range"] = [0, 0]
        doc["initial"]["x0_cov"] = (1e-24 * np.eye(4)).tolist()
        doc["horizon"] = 5
        sc = load_scenario(doc)
        truth = simulate_truth(sc, truth_rng(0, 0))
        # x stays at (numerically) zero under the linear rollout
        assert np.max(np.abs(truth.x)) < 1e-4
        assert np.max(np.abs(truth.f)) == 0.0

    def test_same_seed_same_trajectory(self):
        sc = preset("sec61").with_overrides(horizon=20)
        t1 = simulate_truth(sc, truth_rng(5, 3))
        t2 = simulate_truth(sc, truth_rng(5, 3))
        assert np.array_equal(t1.x, t2.x)
        assert all(np.array_equal(a, b) for a, b in zip(t1.y, t2.y))
        t3 = simulate_truth(sc, truth_rng(5, 4))
        assert not np.array_equal(t1.x, t3.x)

    def test_extended_state_concatenates_f(self):
        sc = preset("sec61").with_overrides(horizon=3)
        truth = simulate_truth(sc, truth_rng(2, 0))
        assert np.array_equal(truth.extended(2), np.concatenate([truth.x[2], truth.f[2]]))
