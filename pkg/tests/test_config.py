import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_nosd.config import (DEFAULT_TUNING_GRID, ConfigError, build_config, counts_from_json, counts_to_json,
                                load_config, parse_gamma_list, plan_from_json, plan_to_json)
from robust_nosd.data import LAMBDA1, SEER_COUNTS, SEER_PLAN, SHIFT1, SIM1_PLAN, contaminate, simulate_counts


def seer_doc():
    return {"plan": plan_to_json(SEER_PLAN), "counts": counts_to_json(SEER_COUNTS)}


class TestSchema:
    def test_seer_reference_instance(self):
        doc = seer_doc()
        assert doc["plan"]["groups"][0] == {"g": 69, "s": 1.0, "tau": [2.0, 10.0, 30.0]}
        assert doc["counts"]["n"][0] == [[7, 1], [26, 0], [28, 2]]
        assert doc["counts"]["k"] == [5, 7, 7]

    def test_round_trip_through_text(self):
        doc = json.loads(json.dumps(seer_doc()))
        plan = plan_from_json(doc["plan"])
        assert plan == SEER_PLAN
        counts = counts_from_json(doc["counts"], plan)
        np.testing.assert_array_equal(counts.cells, SEER_COUNTS.cells)

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_round_trip_property(self, data):
        I = data.draw(st.integers(1, 4))
        L = data.draw(st.integers(1, 4))
        groups, n, k = [], [], []
        for _ in range(I):
            steps = data.draw(st.lists(st.floats(0.01, 5.0), min_size=L, max_size=L))
            tau = np.cumsum(steps).tolist()
            cells = data.draw(st.lists(st.integers(0, 30), min_size=2 * L + 1, max_size=2 * L + 1))
            s = data.draw(st.floats(-5, 5, allow_nan=False))
            groups.append({"g": max(sum(cells), 1), "s": s, "tau": tau})
            n.append([cells[2 * l: 2 * l + 2] for l in range(L)])
            k.append(cells[-1] + (1 if sum(cells) == 0 else 0))
        doc = {"plan": {"groups": groups}, "counts": {"n": n, "k": k}}
        plan = plan_from_json(doc["plan"])
        counts = counts_from_json(doc["counts"], plan)
        assert plan_to_json(plan) == doc["plan"]
        assert counts_to_json(counts) == doc["counts"]

    @pytest.mark.parametrize(
        "mutate, where",
        [
            (lambda d: d["plan"]["groups"][1].pop("tau"), "plan.groups[1]"),
            (lambda d: d["plan"]["groups"][0].__setitem__("g", 0), "plan.groups[0].g"),
            (lambda d: d["plan"]["groups"][2].__setitem__("s", "high"), "plan.groups[2].s"),
            (lambda d: d["plan"]["groups"][0].__setitem__("tau", [2, 1, 30]), "plan"),
            (lambda d: d["counts"]["n"][1][2].__setitem__(0, -1), "counts.n[1][2][0]"),
            (lambda d: d["counts"]["n"][0].pop(), "counts.n[0]"),
            (lambda d: d["counts"]["k"].__setitem__(0, 6), "group 1"),
            (lambda d: d["counts"].__setitem__("extra", 1), "counts"),
            (lambda d: d.__setitem__("gama", [0.5]), "gama"),
        ],
    )
    def test_field_diagnostics(self, mutate, where):
        doc = seer_doc()
        mutate(doc)
        with pytest.raises(ConfigError, match=where.replace("[", r"\[").replace("]", r"\]")):
            build_config(doc)


class TestBuild:
    def test_preset_plan(self):
        cfg = build_config(preset="sim1")
        assert [g.g for g in cfg.plan.groups] == [20, 25, 30]
        assert [g.s for g in cfg.plan.groups] == [1.5, 3.5, 5.5]
        assert cfg.counts is None and cfg.truth == LAMBDA1

    def test_fixture_carries_counts(self):
        cfg = build_config({"fixture": "seer-pancreatic-2016"})
        assert cfg.plan == SEER_PLAN and cfg.counts is SEER_COUNTS

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            build_config(preset="sim3")

    def test_no_plan(self):
        with pytest.raises(ConfigError, match="no test plan"):
            build_config({})

    def test_simulated_counts_follow_seed(self):
        a = build_config(preset="sim1", seed=4).require_counts()
        np.testing.assert_array_equal(a.cells, simulate_counts(LAMBDA1, SIM1_PLAN, 4).cells)

    def test_contaminated(self):
        cfg = build_config({"preset": "sim1", "contaminated": True}, seed=2)
        assert cfg.generating_params() == contaminate(LAMBDA1, SHIFT1)

    def test_missing_counts(self):
        with pytest.raises(ConfigError, match="counts: missing"):
            build_config({"plan": plan_to_json(SEER_PLAN)}).require_counts()

    def test_overrides(self):
        cfg = build_config({"preset": "sim1", "seed": 3, "gamma": [0.1]}, seed=9, gammas=(0.2, 0.4))
        assert cfg.seed == 9 and cfg.gamma_list() == (0.2, 0.4)

    def test_sections(self):
        cfg = build_config({
            "fixture": "seer-pancreatic-2016",
            "prior": {"kind": "dirichlet", "sigma2_p": 0.05},
            "hmc": {"n_samples": 300, "burn_in": 100},
            "hypothesis": {"lambda0": [-0.6, 0.34, 0.5, 0.1], "radius": 0.01, "rho0": 0.5},
            "tuning": {"C1": 0.3, "C2": 0.7},
            "influence": {"estimators": ["wmdpde"], "n_grid": 11, "cause": 2},
        })
        assert cfg.prior.kind == "dirichlet"
        h = cfg.hmc_config()
        assert (h.n_samples, h.burn_in, h.step_size) == (300, 100, 0.001)
        assert cfg.hypothesis.radius == 0.01
        assert cfg.influence["cause"] == 2

    @pytest.mark.parametrize(
        "section",
        [
            {"prior": {"kind": "cauchy"}},
            {"hmc": {"burn_in": 5000}},
            {"hmc": {"leapfrog": 5}},
            {"hypothesis": {"radius": 0.1}},
            {"hypothesis": {"lambda0": [0, 0, 0], "radius": 0.1}},
            {"influence": {"estimators": ["mle"]}},
            {"n_boot": 10},
            {"level": 1.5},
            {"seed": -1},
            {"gamma": []},
            {"gamma": [-0.2]},
        ],
    )
    def test_bad_sections(self, section):
        with pytest.raises(ConfigError):
            build_config({"fixture": "seer-pancreatic-2016", **section}).hmc_config()


class TestFiles:
    def test_json_syntax_error_has_line(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{\n  "preset": "sim1",\n  "seed": \n}')
        with pytest.raises(ConfigError, match="line 4"):
            load_config(p)

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "missing.json")

    def test_gamma_list(self):
        assert parse_gamma_list("0.2, 0.4,1") == (0.2, 0.4, 1.0)
        with pytest.raises(ConfigError):
            parse_gamma_list("0.2,x")

    def test_default_tuning_grid(self):
        assert DEFAULT_TUNING_GRID[0] == 0.1 and DEFAULT_TUNING_GRID[-1] == 1.0
        assert len(DEFAULT_TUNING_GRID) == 19 and 0.75 in DEFAULT_TUNING_GRID
