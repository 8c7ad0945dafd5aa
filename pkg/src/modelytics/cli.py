"""Command-line front end.

Subcommands cover the whole lifecycle: check a model file, initialize a
store from a topology, batch-ingest CSV readings, query values at a
point in time, inspect compression statistics, list anomaly alerts,
run what-if scenarios, micro-benchmark the encoder, and generate the
synthetic smart-grid fixture.

Exit codes: 0 success, 1 domain failure (bad model, bad data, failed
scenario), 2 usage or I/O failure.  Stable contract for scripting.
"""

from __future__ import annotations

import csv
import json
import math
import os
import random
import shutil
import sys
import tempfile
import time
from datetime import datetime, timezone

import click

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import demo, dsl, report
from .engine import RefinementEngine, build_learned_specs, eval_expr, TaskFailure
from .polystore import SegmentChain
from .store import NOVALUE, ROOT_WORLD, Store, StoreError, AppendContractError
from .whatif import ScenarioError, parse_scenario, run_scenario

DEFAULT_BATCH = 1000


# ---------------------------------------------------------------------------
# helpers


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def parse_when(text: str) -> int:
    """Milliseconds since the epoch, from a raw integer or ISO 8601."""
    try:
        return int(text)
    except ValueError:
        pass
    iso = text.replace("Z", "+00:00") if text.endswith("Z") else text
    try:
        dt = datetime.fromisoformat(iso)
    except ValueError:
        raise click.UsageError(f"cannot parse time {text!r} (want ms or ISO 8601)")
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


def load_config(store_dir: str, explicit: str | None = None) -> dict:
    """analytics.cfg from the store dir (or an explicit path); {} if absent."""
    path = explicit or os.path.join(store_dir, "analytics.cfg")
    if not os.path.exists(path):
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        _fail(f"{path}: {exc}", 2)


def config_epsilon(cfg: dict) -> dict:
    out = {}
    for key, value in cfg.get("epsilon", {}).items():
        out[key] = float(value)
    return out


def config_profiler(cfg: dict) -> dict:
    allowed = {"k_max", "tau", "theta", "n_min", "var_floor", "slot_offset_ms"}
    section = cfg.get("profiler", {})
    unknown = set(section) - allowed
    if unknown:
        _fail(f"analytics.cfg: unknown profiler keys {sorted(unknown)}", 2)
    return dict(section)


class StoreLock:
    """Exclusive ownership of a store directory for one CLI process."""

    def __init__(self, store_dir: str):
        self.path = os.path.join(store_dir, "store.lock")
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            _fail(f"store is locked by another process ({self.path})", 2)
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            os.unlink(self.path)


def open_store(store_dir: str, cfg: dict) -> Store:
    if not os.path.isdir(store_dir):
        _fail(f"no store at {store_dir}", 2)
    try:
        return Store.open(store_dir, epsilon=config_epsilon(cfg))
    except (StoreError, OSError) as exc:
        _fail(str(exc), 2)


# ---------------------------------------------------------------------------
# commands


@click.group()
def main():
    """Model-driven analytics over temporal graph data."""


@main.command()
@click.argument("model_path", type=click.Path())
def check(model_path):
    """Validate a model file; exit 0 only if it is clean."""
    if not os.path.exists(model_path):
        _fail(f"no such file: {model_path}", 2)
    with open(model_path, encoding="utf-8") as fh:
        text = fh.read()
    model, diags = dsl.parse_model(text)
    if model is not None:
        diags = diags + dsl.validate(model)
    for d in diags:
        click.echo(d.render(model_path), err=True)
    if diags:
        sys.exit(1)
    click.echo(f"ok: {len(model.classes)} classes")


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--topology", "topology_path", type=click.Path())
@click.option("--config", "config_path", type=click.Path())
def init(store_dir, model_path, topology_path, config_path):
    """Create a store from a model and an optional node/relation layout."""
    if not os.path.exists(model_path):
        _fail(f"no such file: {model_path}", 2)
    if os.path.isdir(store_dir) and os.listdir(store_dir):
        _fail(f"{store_dir} already exists and is not empty", 2)
    with open(model_path, encoding="utf-8") as fh:
        text = fh.read()
    model, diags = dsl.parse_model(text)
    if model is not None:
        diags = diags + dsl.validate(model)
    if diags:
        for d in diags:
            click.echo(d.render(model_path), err=True)
        sys.exit(1)
    os.makedirs(store_dir, exist_ok=True)
    if config_path:
        shutil.copyfile(config_path, os.path.join(store_dir, "analytics.cfg"))
    cfg = load_config(store_dir)
    store = Store(model, epsilon=config_epsilon(cfg))
    engine = RefinementEngine(store, config_profiler(cfg))
    nodes = 0
    rels = 0
    if topology_path:
        with open(topology_path, encoding="utf-8") as fh:
            topo = json.load(fh)
        for n in topo.get("nodes", []):
            try:
                store.create_node(ROOT_WORLD, n["class"], n["id"])
            except StoreError as exc:
                _fail(str(exc), 1)
            nodes += 1
        for r in topo.get("relations", []):
            try:
                store.add_relation(ROOT_WORLD, store.node_by_name(r["node"]),
                                   r["rel"], store.node_by_name(r["target"]),
                                   int(r.get("t", 0)))
            except StoreError as exc:
                _fail(str(exc), 1)
            rels += 1
        engine.refine(ROOT_WORLD)
    with StoreLock(store_dir):
        store.persist(store_dir)
    click.echo(f"initialized {store_dir}: nodes={nodes} relations={rels}")


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--batch", type=int, default=None, help="rows per refine pass")
@click.option("--json", "as_json", is_flag=True)
def ingest(store_dir, input_path, batch, as_json):
    """Append CSV readings (node_id,attribute,timestamp_ms,value)."""
    if not os.path.exists(input_path):
        _fail(f"no such file: {input_path}", 2)
    cfg = load_config(store_dir)
    if batch is None:
        batch = int(cfg.get("ingest", {}).get("batch_size", DEFAULT_BATCH))
    with StoreLock(store_dir):
        store = open_store(store_dir, cfg)
        engine = RefinementEngine(store, config_profiler(cfg))
        from .engine import RefinementReport
        total = RefinementReport()
        rows = 0
        pending = 0
        last_ts = None
        with open(input_path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            for lineno, row in enumerate(reader, start=1):
                if lineno == 1 and row and row[0] == "node_id":
                    continue
                if not row:
                    continue
                if len(row) != 4:
                    _fail(f"row {lineno}: expected 4 columns, got {len(row)}", 1)
                name, attr, ts_text, value_text = row
                try:
                    ts = int(ts_text)
                    value = float(value_text)
                except ValueError as exc:
                    _fail(f"row {lineno}: {exc}", 1)
                try:
                    nid = store.node_by_name(name)
                except StoreError as exc:
                    _fail(f"row {lineno}: {exc}", 1)
                if pending >= batch and ts != last_ts:
                    # refine only at a timestamp-group boundary so one
                    # instant is never split across two passes
                    total.merge(engine.refine(ROOT_WORLD))
                    pending = 0
                try:
                    store.set_attribute(ROOT_WORLD, nid, attr, ts, value)
                except AppendContractError as exc:
                    _fail(f"row {lineno}: {exc}", 1)
                except StoreError as exc:
                    _fail(f"row {lineno}: {exc}", 1)
                rows += 1
                pending += 1
                last_ts = ts
        total.merge(engine.refine(ROOT_WORLD))
        store.persist(store_dir)
    if as_json:
        click.echo(json.dumps({"rows": rows, "tasks": total.tasks_run,
                               "failures": total.failures}))
    else:
        click.echo(f"rows={rows} tasks={total.tasks_run} "
                   f"failures={len(total.failures)}")
        for f in total.failures:
            click.echo(f"failure: {f['node']}.{f['member']}: {f['reason']}",
                       err=True)


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--node", "node_name", required=True)
@click.option("--attr", required=True)
@click.option("--at", "at_text", required=True, help="ms since epoch or ISO 8601")
@click.option("--world", type=int, default=ROOT_WORLD)
@click.option("--json", "as_json", is_flag=True)
def query(store_dir, node_name, attr, at_text, world, as_json):
    """Resolve one attribute at one point in time."""
    t = parse_when(at_text)
    store = open_store(store_dir, load_config(store_dir))
    try:
        nid = store.node_by_name(node_name)
        value = store.get_attribute(world, nid, attr, t)
    except StoreError as exc:
        _fail(str(exc), 1)
    if as_json:
        click.echo(json.dumps({"node": node_name, "attr": attr, "t": t,
                               "value": None if value is NOVALUE else value}))
    elif value is NOVALUE:
        click.echo("novalue")
    else:
        click.echo(repr(value) if isinstance(value, float) else str(value))


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
@click.option("--plot", "plot_path", type=click.Path(),
              help="also render a bar chart to this file")
def stats(store_dir, as_json, plot_path):
    """Per-attribute compression statistics."""
    store = open_store(store_dir, load_config(store_dir))
    rows = store.chain_stats()
    if as_json:
        click.echo(json.dumps(rows))
    else:
        click.echo(f"{'attribute':<40}{'rawPoints':>12}{'segments':>10}"
                   f"{'storedScalars':>15}{'ratio':>9}")
        for r in rows:
            ratio = "-" if r["ratio"] is None else f"{r['ratio']:.4f}"
            click.echo(f"{r['class'] + '.' + r['attribute']:<40}"
                       f"{r['raw_points']:>12}{r['segments']:>10}"
                       f"{r['stored_scalars']:>15}{ratio:>9}")
    if plot_path and rows:
        out = report.stats_figure(rows, plot_path)
        click.echo(f"figure: {out}", err=True)


def _profiled_nodes(store: Store):
    """(profiler nid, learned spec) for every node of a learned class."""
    specs = build_learned_specs(store.model)
    for nid in sorted(store.visible_nodes(ROOT_WORLD)):
        spec = specs.get(store.nodes[nid].cls)
        if spec is not None:
            yield nid, spec


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--from", "from_text", required=True)
@click.option("--to", "to_text", required=True)
@click.option("--threshold", type=float, default=None,
              help="alert when probability drops below this")
@click.option("--world", type=int, default=ROOT_WORLD)
@click.option("--json", "as_json", is_flag=True)
@click.option("--plot", "plot_path", type=click.Path(),
              help="also render a scatter chart to this file")
def anomalies(store_dir, from_text, to_text, threshold, world, as_json, plot_path):
    """Suspicious rows in a time range, one line per alert."""
    t0 = parse_when(from_text)
    t1 = parse_when(to_text)
    if t0 > t1:
        _fail(f"--from {t0} is after --to {t1}", 1)
    cfg = load_config(store_dir)
    overrides = config_profiler(cfg)
    store = open_store(store_dir, cfg)
    specs = build_learned_specs(store.model, overrides)
    alerts = []
    scored = []
    for nid in sorted(store.visible_nodes(world)):
        spec = specs.get(store.nodes[nid].cls)
        if spec is None:
            continue
        theta = threshold if threshold is not None else spec.cfg.theta
        for ts, p in store.history(world, nid, spec.output, t0, t1):
            targets = store.get_relations(world, nid, spec.dep_name, ts)
            if len(targets) != 1:
                continue
            target = targets[0]
            try:
                value = float(eval_expr(spec.value_expr, store, world,
                                        target, ts))
            except TaskFailure:
                continue
            scored.append((ts, value))
            if p < theta:
                alerts.append({"timestamp_ms": ts,
                               "node_id": store.node_label(target),
                               "value": value, "probability": p,
                               "verdict": "suspicious"})
    alerts.sort(key=lambda a: (a["timestamp_ms"], a["node_id"]))
    if as_json:
        click.echo(json.dumps(alerts))
    else:
        for a in alerts:
            click.echo(f"{a['timestamp_ms']},{a['node_id']},{a['value']!r},"
                       f"{a['probability']!r},{a['verdict']}")
    if plot_path:
        out = report.anomalies_figure(
            scored, [(a["timestamp_ms"], a["value"]) for a in alerts], plot_path)
        click.echo(f"figure: {out}", err=True)


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.argument("scenario_path", type=click.Path())
@click.option("--json", "as_json", is_flag=True)
def whatif(store_dir, scenario_path, as_json):
    """Run a scenario in a forked world and report the divergence."""
    if not os.path.exists(scenario_path):
        _fail(f"no such file: {scenario_path}", 2)
    cfg = load_config(store_dir)
    store = open_store(store_dir, cfg)
    engine = RefinementEngine(store, config_profiler(cfg))
    with open(scenario_path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        scenario = parse_scenario(text)
        result = run_scenario(store, engine, scenario)
    except (ScenarioError, StoreError) as exc:
        _fail(str(exc), 1)
    if as_json:
        click.echo(json.dumps({
            "scenario": scenario.name, "world": result.world,
            "tasksRun": result.report.tasks_run,
            "divergence": [{"node": store.node_label(n), "member": m,
                            "base": b, "fork": f}
                           for n, m, b, f in result.divergence],
            "metric": result.metric_value}))
        return
    click.echo(f"scenario {scenario.name}: world={result.world} "
               f"tasksRun={result.report.tasks_run}")
    if not result.divergence:
        click.echo("no divergence")
    for n, m, b, f in result.divergence:
        base = "novalue" if b is NOVALUE else repr(b)
        fork = "novalue" if f is NOVALUE else repr(f)
        click.echo(f"{store.node_label(n)}.{m}: {base} -> {fork}")
    if result.metric_value is not None:
        click.echo(f"metric={result.metric_value!r}")


def _bench_signal(kind: str, points: int, seed: int) -> list[float]:
    rng = random.Random(seed)
    if kind == "constant":
        return [42.0] * points
    if kind == "sine":
        return [50.0 + 10.0 * math.sin(2.0 * math.pi * i / 500.0)
                for i in range(points)]
    return [rng.uniform(0.0, 100.0) for _ in range(points)]


def _csv_scan(path: str, t: int):
    """Latest value at or before t by scanning the whole file."""
    hit = None
    with open(path, newline="") as fh:
        for line in fh:
            ts_text, value_text = line.split(",", 1)
            ts = int(ts_text)
            if ts <= t:
                hit = float(value_text)
            else:
                break
    return hit


@main.command()
@click.option("--signal", type=click.Choice(["constant", "sine", "random"]),
              default="sine")
@click.option("--points", type=int, default=10_000)
@click.option("--epsilon", "epsilon_text", default="0",
              help="absolute bound, or a percentage of signal range like '1%'")
@click.option("--reads", type=int, default=20,
              help="random reads for the latency comparison")
@click.option("--seed", type=int, default=7)
@click.option("--json", "as_json", is_flag=True)
@click.option("--plot", "plot_path", type=click.Path(),
              help="also render the comparison chart to this file")
def bench(signal, points, epsilon_text, reads, seed, as_json, plot_path):
    """Encode a synthetic signal; report ratio and read speedup."""
    if points < 1:
        _fail("--points must be >= 1", 2)
    values = _bench_signal(signal, points, seed)
    if epsilon_text.endswith("%"):
        span = max(values) - min(values)
        epsilon = span * float(epsilon_text[:-1]) / 100.0
    else:
        epsilon = float(epsilon_text)
    chain = SegmentChain(epsilon)
    t_enc = time.perf_counter()
    for i, v in enumerate(values):
        chain.append(i * 1000, v)
    chain.flush()
    t_enc = time.perf_counter() - t_enc
    ratio = chain.compression_ratio()

    rng = random.Random(seed + 1)
    read_ts = [rng.randrange(points) * 1000 for _ in range(max(1, reads))]
    t_read = time.perf_counter()
    for t in read_ts:
        chain.read(t)
    read_us = (time.perf_counter() - t_read) / len(read_ts) * 1e6

    with tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False) as fh:
        raw_path = fh.name
        for i, v in enumerate(values):
            fh.write(f"{i * 1000},{v!r}\n")
    try:
        t_base = time.perf_counter()
        for t in read_ts:
            _csv_scan(raw_path, t)
        baseline_us = (time.perf_counter() - t_base) / len(read_ts) * 1e6
    finally:
        os.unlink(raw_path)

    result = {"signal": signal, "points": points, "epsilon": epsilon,
              "segments": len(chain.segments) + (1 if chain.buf_ts else 0),
              "ratio": ratio, "encode_s": round(t_enc, 3),
              "read_us": round(read_us, 2),
              "baseline_us": round(baseline_us, 2),
              "speedup": round(baseline_us / read_us, 1) if read_us else None}
    if as_json:
        click.echo(json.dumps(result))
    else:
        click.echo(f"signal={signal} points={points} epsilon={epsilon!r}")
        click.echo(f"ratio={ratio:.4f} segments={result['segments']} "
                   f"encode={t_enc:.2f}s")
        click.echo(f"read={read_us:.1f}us baseline={baseline_us:.1f}us "
                   f"speedup={result['speedup']}x")
    if plot_path:
        out = report.bench_figure(result, plot_path)
        click.echo(f"figure: {out}", err=True)


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--days", type=int, default=None)
@click.option("--meters", type=int, default=None)
@click.option("--seed", type=int, default=None)
def generate(out_dir, days, meters, seed):
    """Write the synthetic smart-grid fixture to a directory."""
    kwargs = {}
    if days is not None:
        kwargs["days"] = days
    if meters is not None:
        kwargs["meter_count"] = meters
    if seed is not None:
        kwargs["seed"] = seed
    cfg = demo.GeneratorConfig(**kwargs)
    data = demo.generate(cfg)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "grid.mdm"), "w", encoding="utf-8") as fh:
        fh.write(demo.GRID_MODEL)
    with open(os.path.join(out_dir, "topology.json"), "w", encoding="utf-8") as fh:
        json.dump(demo.topology(cfg), fh, indent=2)
    with open(os.path.join(out_dir, "readings.csv"), "w", encoding="utf-8") as fh:
        fh.write(demo.readings_csv(data))
    with open(os.path.join(out_dir, "ground_truth.csv"), "w", encoding="utf-8") as fh:
        fh.write(demo.ground_truth_csv(data))
    with open(os.path.join(out_dir, "analytics.cfg"), "w", encoding="utf-8") as fh:
        fh.write("[profiler]\n")
        for key, value in demo.DEMO_PROFILER_OVERRIDES.items():
            fh.write(f"{key} = {value}\n")
    click.echo(f"wrote {out_dir}: readings={len(data.readings)} "
               f"anomalies={len(data.ground_truth)} days={cfg.days} "
               f"meters={cfg.meter_count}")


if __name__ == "__main__":
    main()
