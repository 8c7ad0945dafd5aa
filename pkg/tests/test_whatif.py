import json

import pytest

from modelytics.whatif import (
    ScenarioError, compare_scenarios, parse_scenario, run_scenario)


def scenario_json(**kw):
    doc = {"name": "s", "base": "root", "actions": []}
    doc.update(kw)
    return json.dumps(doc)


class TestParse:
    def test_minimal(self):
        s = parse_scenario(scenario_json())
        assert s.name == "s" and s.base == 0 and s.actions == ()

    def test_actions(self):
        s = parse_scenario(scenario_json(actions=[
            {"type": "set", "node": "M0", "attr": "energyConsumed",
             "t": 100, "value": 5.0},
            {"type": "disconnect", "node": "C0", "rel": "meters",
             "target": "M0", "t": 200},
        ], queryT=300))
        assert s.actions[0].type == "set" and s.actions[0].value == 5.0
        assert s.actions[1].rel == "meters"
        assert s.query_t == 300

    def test_errors(self):
        with pytest.raises(ScenarioError):
            parse_scenario("not json{")
        with pytest.raises(ScenarioError):
            parse_scenario("[1, 2]")
        with pytest.raises(ScenarioError):
            parse_scenario(scenario_json(actions=[{"type": "explode",
                                                   "node": "x", "t": 0}]))
        with pytest.raises(ScenarioError):
            parse_scenario(scenario_json(actions=[{"type": "set",
                                                   "node": "x", "t": 0}]))
        with pytest.raises(ScenarioError):
            parse_scenario(scenario_json(actions=[{"type": "connect",
                                                   "node": "x", "t": 0}]))


def _seed_grid(grid):
    store, engine, ids = grid
    for i in range(3):
        store.set_attribute(0, ids[f"m{i}"], "energyConsumed", 100, float(i + 1))
    engine.refine(0)
    return store, engine, ids


class TestRun:
    def test_base_world_untouched(self, grid):
        store, engine, ids = _seed_grid(grid)
        before = store.get_attribute(0, ids["cable"], "load", 1000)
        s = parse_scenario(scenario_json(actions=[
            {"type": "disconnect", "node": "C0", "rel": "meters",
             "target": "M2", "t": 500}], queryT=1000))
        result = run_scenario(store, engine, s)
        assert store.get_attribute(0, ids["cable"], "load", 1000) == before == 6.0
        assert store.get_attribute(result.world, ids["cable"], "load", 1000) == 3.0

    def test_divergence_lists_changed_members(self, grid):
        store, engine, ids = _seed_grid(grid)
        s = parse_scenario(scenario_json(actions=[
            {"type": "disconnect", "node": "C0", "rel": "meters",
             "target": "M2", "t": 500}], queryT=1000))
        result = run_scenario(store, engine, s)
        assert (ids["cable"], "load", 6.0, 3.0) in result.divergence

    def test_backdated_set_rejected_in_fork(self, grid):
        # the append contract spans the fork chain: a scenario cannot
        # rewrite raw history the base already has
        store, engine, ids = _seed_grid(grid)
        s = parse_scenario(scenario_json(actions=[
            {"type": "set", "node": "M1", "attr": "energyConsumed",
             "t": 50, "value": 0.0}], queryT=60))
        with pytest.raises(Exception):
            run_scenario(store, engine, s)

    def test_action_before_inherited_value_reruns_it(self, grid):
        # base computed load at t=100 and t=600; a disconnect at t=300
        # must re-derive the inherited t=600 value inside the fork
        store, engine, ids = _seed_grid(grid)
        for i in range(3):
            store.set_attribute(0, ids[f"m{i}"], "energyConsumed", 600,
                                float(i + 1))
        engine.refine(0)
        assert store.get_attribute(0, ids["cable"], "load", 600) == 6.0
        s = parse_scenario(scenario_json(actions=[
            {"type": "disconnect", "node": "C0", "rel": "meters",
             "target": "M2", "t": 300}], queryT=600))
        result = run_scenario(store, engine, s)
        assert store.get_attribute(result.world, ids["cable"], "load", 600) == 3.0
        assert store.get_attribute(0, ids["cable"], "load", 600) == 6.0
        assert (ids["cable"], "load", 6.0, 3.0) in result.divergence

    def test_repeat_runs_are_identical(self, grid):
        store, engine, ids = _seed_grid(grid)
        text = scenario_json(actions=[
            {"type": "disconnect", "node": "C0", "rel": "meters",
             "target": "M0", "t": 500}], queryT=1000)
        r1 = run_scenario(store, engine, parse_scenario(text))
        r2 = run_scenario(store, engine, parse_scenario(text))
        strip = lambda rows: [(n, m, a, b) for n, m, a, b in rows]
        assert strip(r1.divergence) == strip(r2.divergence)

    def test_unknown_node_raises(self, grid):
        store, engine, ids = _seed_grid(grid)
        s = parse_scenario(scenario_json(actions=[
            {"type": "set", "node": "ghost", "attr": "x", "t": 1, "value": 0.0}]))
        with pytest.raises(Exception):
            run_scenario(store, engine, s)


class TestMetric:
    def test_metric_evaluated_in_fork(self, grid):
        store, engine, ids = _seed_grid(grid)
        s = parse_scenario(scenario_json(
            actions=[{"type": "disconnect", "node": "C0", "rel": "meters",
                      "target": "M2", "t": 500}],
            queryT=1000, metric="load", metricNode="C0"))
        result = run_scenario(store, engine, s)
        assert result.metric_value == 3.0

    def test_metric_without_node_rejected(self, grid):
        store, engine, ids = _seed_grid(grid)
        s = parse_scenario(scenario_json(queryT=10, metric="load"))
        with pytest.raises(ScenarioError):
            run_scenario(store, engine, s)

    def test_compare_orders_by_metric_stably(self, grid):
        store, engine, ids = _seed_grid(grid)

        def disc(meter):
            return parse_scenario(scenario_json(
                name=f"drop-{meter}",
                actions=[{"type": "disconnect", "node": "C0", "rel": "meters",
                          "target": meter, "t": 500}],
                queryT=1000, metric="load", metricNode="C0"))

        results = [run_scenario(store, engine, disc(m))
                   for m in ("M0", "M1", "M2")]
        ordered = compare_scenarios(results)
        # dropping the biggest meter leaves the smallest load
        assert [r.scenario.name for r in ordered] == \
            ["drop-M2", "drop-M1", "drop-M0"]
        assert [r.metric_value for r in ordered] == [3.0, 4.0, 5.0]

    def test_compare_requires_metrics_and_shared_base(self, grid):
        store, engine, ids = _seed_grid(grid)
        s = parse_scenario(scenario_json(queryT=10))
        r = run_scenario(store, engine, s)
        with pytest.raises(ScenarioError):
            compare_scenarios([r])
