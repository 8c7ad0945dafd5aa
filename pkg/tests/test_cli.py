import json

import pytest
from click.testing import CliRunner

from modelytics.cli import main, parse_when
from conftest import GRID_TEXT


runner = CliRunner()


def run(*args, **kw):
    return runner.invoke(main, list(args), catch_exceptions=False, **kw)


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("fixture")
    res = run("generate", "--out", str(d), "--days", "2", "--meters", "4")
    assert res.exit_code == 0, res.output
    return d


@pytest.fixture(scope="module")
def store_dir(tmp_path_factory, fixture_dir):
    d = tmp_path_factory.mktemp("stores") / "grid"
    res = run("init", "--store", str(d),
              "--model", str(fixture_dir / "grid.mdm"),
              "--topology", str(fixture_dir / "topology.json"),
              "--config", str(fixture_dir / "analytics.cfg"))
    assert res.exit_code == 0, res.output
    res = run("ingest", "--store", str(d),
              "--input", str(fixture_dir / "readings.csv"))
    assert res.exit_code == 0, res.output
    assert "rows=192 " in res.output and "failures=0" in res.output
    return d


class TestParseWhen:
    def test_raw_ms(self):
        assert parse_when("123456") == 123456

    def test_iso_utc(self):
        assert parse_when("1970-01-01T01:00:00Z") == 3_600_000
        assert parse_when("1970-01-01T01:00:00+00:00") == 3_600_000

    def test_naive_is_utc(self):
        assert parse_when("1970-01-02T00:00:00") == 86_400_000

    def test_garbage_rejected(self):
        import click
        with pytest.raises(click.UsageError):
            parse_when("yesterday-ish")


class TestCheck:
    def test_clean_model(self, tmp_path):
        p = tmp_path / "m.mdm"
        p.write_text(GRID_TEXT)
        res = run("check", str(p))
        assert res.exit_code == 0
        assert "ok: 5 classes" in res.output

    def test_broken_model_located(self, tmp_path):
        p = tmp_path / "m.mdm"
        p.write_text("class A {\n  att x: Flibber\n}\n")
        res = run("check", str(p))
        assert res.exit_code == 1
        assert "Flibber" in res.output
        assert f"{p}:" in res.output

    def test_missing_file(self):
        res = run("check", "/nonexistent/m.mdm")
        assert res.exit_code == 2


class TestInit:
    def test_refuses_nonempty_dir(self, store_dir, fixture_dir):
        res = run("init", "--store", str(store_dir),
                  "--model", str(fixture_dir / "grid.mdm"))
        assert res.exit_code == 2

    def test_reports_counts(self, tmp_path, fixture_dir):
        d = tmp_path / "s"
        res = run("init", "--store", str(d),
                  "--model", str(fixture_dir / "grid.mdm"),
                  "--topology", str(fixture_dir / "topology.json"))
        assert res.exit_code == 0
        assert "nodes=13" in res.output  # 4 meters + 3 cables + 4 profilers + 2


class TestIngestErrors:
    def _store(self, tmp_path, fixture_dir):
        d = tmp_path / "s"
        res = run("init", "--store", str(d),
                  "--model", str(fixture_dir / "grid.mdm"),
                  "--topology", str(fixture_dir / "topology.json"))
        assert res.exit_code == 0
        return d

    def test_malformed_row_aborts_with_row_number(self, tmp_path, fixture_dir):
        d = self._store(tmp_path, fixture_dir)
        bad = tmp_path / "bad.csv"
        bad.write_text("node_id,attribute,timestamp_ms,value\n"
                       "METER_0,energyConsumed,1000\n")
        res = run("ingest", "--store", str(d), "--input", str(bad))
        assert res.exit_code == 1
        assert "row 2" in res.output

    def test_out_of_order_aborts(self, tmp_path, fixture_dir):
        d = self._store(tmp_path, fixture_dir)
        bad = tmp_path / "bad.csv"
        bad.write_text("node_id,attribute,timestamp_ms,value\n"
                       "METER_0,energyConsumed,2000,1.0\n"
                       "METER_0,energyConsumed,1000,1.0\n")
        res = run("ingest", "--store", str(d), "--input", str(bad))
        assert res.exit_code == 1
        assert "row 3" in res.output

    def test_unknown_node_aborts(self, tmp_path, fixture_dir):
        d = self._store(tmp_path, fixture_dir)
        bad = tmp_path / "bad.csv"
        bad.write_text("GHOST,energyConsumed,1000,1.0\n")
        res = run("ingest", "--store", str(d), "--input", str(bad))
        assert res.exit_code == 1
        assert "row 1" in res.output

    def test_locked_store_refused(self, tmp_path, fixture_dir):
        d = self._store(tmp_path, fixture_dir)
        lock = d / "store.lock"
        lock.write_text("12345")
        src = tmp_path / "ok.csv"
        src.write_text("METER_0,energyConsumed,1000,1.0\n")
        res = run("ingest", "--store", str(d), "--input", str(src))
        assert res.exit_code == 2
        assert "locked" in res.output
        lock.unlink()

    def test_unknown_profiler_key_rejected(self, tmp_path, fixture_dir):
        d = self._store(tmp_path, fixture_dir)
        (d / "analytics.cfg").write_text("[profiler]\nturbo = true\n")
        src = tmp_path / "ok.csv"
        src.write_text("METER_0,energyConsumed,1000,1.0\n")
        res = run("ingest", "--store", str(d), "--input", str(src))
        assert res.exit_code == 2
        assert "turbo" in res.output


class TestQuery:
    def test_raw_value(self, store_dir):
        res = run("query", "--store", str(store_dir), "--node", "METER_0",
                  "--attr", "energyConsumed", "--at", "0")
        assert res.exit_code == 0
        float(res.output.strip())  # parses as a float repr

    def test_derived_value_matches_sum(self, store_dir):
        res = run("query", "--store", str(store_dir), "--node", "CABLE_0",
                  "--attr", "load", "--at", "3600000", "--json")
        assert res.exit_code == 0
        doc = json.loads(res.output)
        assert isinstance(doc["value"], float)

    def test_novalue(self, store_dir):
        res = run("query", "--store", str(store_dir), "--node", "CABLE_0",
                  "--attr", "capacity", "--at", "0")
        assert res.exit_code == 0
        assert res.output.strip() == "novalue"

    def test_missing_store(self):
        res = run("query", "--store", "/nonexistent", "--node", "x",
                  "--attr", "y", "--at", "0")
        assert res.exit_code == 2


class TestStats:
    def test_table_and_json_agree(self, store_dir):
        res = run("stats", "--store", str(store_dir))
        assert res.exit_code == 0
        assert "Meter.energyConsumed" in res.output
        res_j = run("stats", "--store", str(store_dir), "--json")
        rows = json.loads(res_j.output)
        row = next(r for r in rows if r["class"] == "Meter")
        assert row["raw_points"] == 192

    def test_plot_written(self, store_dir, tmp_path):
        out = tmp_path / "stats.png"
        res = run("stats", "--store", str(store_dir), "--plot", str(out))
        assert res.exit_code == 0
        assert out.exists() and out.stat().st_size > 0


class TestAnomalies:
    def test_empty_window_is_quiet(self, store_dir):
        res = run("anomalies", "--store", str(store_dir),
                  "--from", "0", "--to", "3600000", "--json")
        assert res.exit_code == 0
        assert json.loads(res.output) == []

    def test_line_format(self, store_dir):
        res = run("anomalies", "--store", str(store_dir),
                  "--from", "0", "--to", "200000000", "--threshold", "1.1")
        assert res.exit_code == 0
        # threshold above 1 flags everything scored; check the line shape
        lines = res.output.strip().splitlines()
        if lines:
            ts, node, value, p, verdict = lines[0].split(",")
            int(ts), float(value), float(p)
            assert verdict == "suspicious"


class TestWhatif:
    def test_disconnect_and_determinism(self, store_dir, tmp_path):
        scenario = tmp_path / "s.json"
        scenario.write_text(json.dumps({
            "name": "drop",
            "base": "root",
            "actions": [{"type": "disconnect", "node": "CABLE_0",
                         "rel": "meters", "target": "METER_0",
                         "t": 90_000_000}],
            "queryT": 172_700_000,
            "metric": "load", "metricNode": "CABLE_0"}))
        outs = []
        for _ in range(2):
            res = run("whatif", "--store", str(store_dir), str(scenario),
                      "--json")
            assert res.exit_code == 0, res.output
            outs.append(json.loads(res.output))
        assert outs[0]["divergence"] == outs[1]["divergence"]
        assert any(d["node"] == "CABLE_0" and d["member"] == "load"
                   for d in outs[0]["divergence"])
        assert isinstance(outs[0]["metric"], float)

    def test_bad_scenario_exits_1(self, store_dir, tmp_path):
        scenario = tmp_path / "bad.json"
        scenario.write_text("{\"actions\": [{\"type\": \"warp\"}]}")
        res = run("whatif", "--store", str(store_dir), str(scenario))
        assert res.exit_code == 1


class TestBench:
    def test_constant_json(self, tmp_path):
        res = run("bench", "--signal", "constant", "--points", "5000",
                  "--reads", "5", "--json")
        assert res.exit_code == 0
        doc = json.loads(res.output)
        assert doc["ratio"] > 0.99
        assert doc["segments"] == 1
        assert doc["speedup"] is not None

    def test_percent_epsilon_and_plot(self, tmp_path):
        out = tmp_path / "bench.png"
        res = run("bench", "--signal", "sine", "--points", "3000",
                  "--epsilon", "1%", "--reads", "5", "--plot", str(out))
        assert res.exit_code == 0
        assert "ratio=" in res.output
        assert out.exists() and out.stat().st_size > 0


class TestGenerate:
    def test_files_written(self, fixture_dir):
        for name in ("grid.mdm", "topology.json", "readings.csv",
                     "ground_truth.csv", "analytics.cfg"):
            assert (fixture_dir / name).exists()
        topo = json.loads((fixture_dir / "topology.json").read_text())
        assert len(topo["nodes"]) == 13
