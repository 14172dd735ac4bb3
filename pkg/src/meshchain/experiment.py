"""Config-driven experiment runner and CSV reports.

A config is an INI file (see ``configs/experiment.ini`` in the repository for
every key). One experiment = ``repetitions`` runs with seeds ``seed``,
``seed + 1``, ... for each value of an optional one-key sweep.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import os
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

from .engine import Engine, SimTrace
from .hlf import HlfConfig, HlfNetwork
from .placement import (DEFAULT_AVAILABILITY_THRESHOLD, PlacementError, PlacementPlan, basp,
                        fixed_placement, load_plan, random_placement)
from .poa import PoaConfig, PoaNetwork
from .records import DROPPED, INVALID, REJECTED, VALID, TxRecord
from .topology import DEFAULT_PROFILE, MeshTopology, qmpsu_fixture, read_topology, synth_topology
from .workload import WorkloadSpec, fire

SCHEMA_VERSION = "1"
PIPELINE_METRICS = {
    "hlf": ("tte", "ttc"),
    "poa": ("seal", "seal_observed", "complete", "complete_observed"),
}
DEFAULT_METRIC = {"hlf": "ttc", "poa": "seal_observed"}
POA_GENESIS = {"alice": 10**12, "bob": 0}


class ConfigError(ValueError):
    pass


@dataclass
class TopologySource:
    file: str | None = "qmpsu"
    synth_nodes: int = 85
    synth_seed: int | None = None  # None: follow the run seed

    def build(self, run_seed: int, base_dir: Path | None = None) -> MeshTopology:
        if self.file == "qmpsu":
            return qmpsu_fixture()
        if self.file:
            path = Path(self.file)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return read_topology(path)
        return synth_topology(self.synth_nodes, run_seed if self.synth_seed is None else self.synth_seed,
                              DEFAULT_PROFILE)


@dataclass
class ExperimentConfig:
    pipeline: str = "hlf"
    repetitions: int = 1
    seed: int = 0
    metric: str = ""
    output: str | None = None
    topology: TopologySource = field(default_factory=TopologySource)
    placement_method: str = "basp"
    placement_k: int | None = None
    availability_threshold: float = DEFAULT_AVAILABILITY_THRESHOLD
    placement_seed: int | None = None
    placement_plan: str | None = None
    hlf: HlfConfig = field(default_factory=HlfConfig)
    poa: PoaConfig = field(default_factory=PoaConfig)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    sweep_key: str | None = None
    sweep_values: tuple = ()
    base_dir: Path | None = None

    @property
    def pipeline_config(self):
        return self.hlf if self.pipeline == "hlf" else self.poa

    @property
    def main_metric(self) -> str:
        return self.metric or DEFAULT_METRIC[self.pipeline]

    def roles(self) -> list[str]:
        return self.pipeline_config.roles()

    def variants(self) -> list[tuple[str, "ExperimentConfig"]]:
        if not self.sweep_key:
            return [("base", self)]
        flat = replace(self, sweep_key=None, sweep_values=())
        return [(f"{self.sweep_key}={v}", _set_key(flat, self.sweep_key, v)) for v in self.sweep_values]


# --------------------------------------------------------------------------- config parsing

_TOP_KEYS = {"pipeline", "repetitions", "seed", "metric", "output"}


def _coerce(name: str, raw: str, like: Any):
    try:
        if isinstance(like, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return raw.strip()


def _set_key(cfg: ExperimentConfig, dotted: str, raw) -> ExperimentConfig:
    section, _, key = dotted.partition(".")
    raw = str(raw)
    if section in ("hlf", "poa"):
        sub = getattr(cfg, section)
        names = {f.name for f in dataclasses.fields(sub)}
        if key not in names:
            raise ConfigError(f"{dotted}: unknown {section} parameter")
        return replace(cfg, **{section: replace(sub, **{key: _coerce(dotted, raw, getattr(sub, key))})})
    if section == "workload" and key in ("n", "start_time", "mode"):
        like = getattr(cfg.workload, key)
        return replace(cfg, workload=replace(cfg.workload, **{key: _coerce(dotted, raw, like)}))
    raise ConfigError(f"{dotted}: cannot be swept")


def _split_call(raw: str, pipeline: str) -> tuple:
    parts = raw.split()
    if pipeline == "hlf":
        if not parts:
            raise ConfigError("workload.call: empty")
        return (parts[0], tuple(parts[1:]))
    if len(parts) != 3:
        raise ConfigError("workload.call: PoA calls are 'sender receiver value'")
    return (parts[0], parts[1], int(parts[2]))


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    known = {"experiment", "topology", "placement", "hlf", "poa", "workload", "sweep"}
    for s in cp.sections():
        if s not in known:
            raise ConfigError(f"[{s}]: unknown section")
    cfg = ExperimentConfig(base_dir=base_dir)
    e = cp["experiment"] if cp.has_section("experiment") else {}
    for k in e:
        if k not in _TOP_KEYS:
            raise ConfigError(f"experiment.{k}: unknown key")
    cfg.pipeline = e.get("pipeline", "hlf").strip()
    if cfg.pipeline not in ("hlf", "poa"):
        raise ConfigError(f"experiment.pipeline: must be hlf or poa, got {cfg.pipeline!r}")
    cfg.repetitions = _coerce("experiment.repetitions", e.get("repetitions", "1"), 1)
    if cfg.repetitions < 1:
        raise ConfigError("experiment.repetitions: must be >= 1")
    cfg.seed = _coerce("experiment.seed", e.get("seed", "0"), 0)
    cfg.metric = e.get("metric", "").strip()
    if cfg.metric and cfg.metric not in PIPELINE_METRICS[cfg.pipeline]:
        raise ConfigError(f"experiment.metric: {cfg.metric!r} not one of {PIPELINE_METRICS[cfg.pipeline]}")
    cfg.output = e.get("output") or None

    if cp.has_section("topology"):
        t = cp["topology"]
        for k in t:
            if k not in ("file", "synth_nodes", "synth_seed"):
                raise ConfigError(f"topology.{k}: unknown key")
        src = TopologySource(file=t.get("file") or None,
                             synth_nodes=_coerce("topology.synth_nodes", t.get("synth_nodes", "85"), 1))
        if "synth_seed" in t:
            src.synth_seed = _coerce("topology.synth_seed", t["synth_seed"], 1)
        if src.file and src.file != "qmpsu":
            path = Path(src.file) if base_dir is None or Path(src.file).is_absolute() else base_dir / src.file
            if not path.exists():
                raise ConfigError(f"topology.file: {path} does not exist")
        cfg.topology = src

    if cp.has_section("placement"):
        p = cp["placement"]
        for k in p:
            if k not in ("method", "k", "availability_threshold", "seed", "plan"):
                raise ConfigError(f"placement.{k}: unknown key")
        cfg.placement_method = p.get("method", "basp").strip()
        if cfg.placement_method not in ("basp", "random", "fixed"):
            raise ConfigError("placement.method: must be basp, random or fixed")
        if "k" in p:
            cfg.placement_k = _coerce("placement.k", p["k"], 1)
            if cfg.placement_k < 1:
                raise ConfigError("placement.k: must be >= 1")
        cfg.availability_threshold = _coerce("placement.availability_threshold",
                                             p.get("availability_threshold", str(DEFAULT_AVAILABILITY_THRESHOLD)), 0.0)
        if "seed" in p:
            cfg.placement_seed = _coerce("placement.seed", p["seed"], 1)
        cfg.placement_plan = p.get("plan") or None
        if cfg.placement_method == "fixed" and not cfg.placement_plan:
            raise ConfigError("placement.plan: required for method fixed")

    for section in ("hlf", "poa"):
        if cp.has_section(section):
            for k, v in cp[section].items():
                cfg = _set_key(cfg, f"{section}.{k}", v)
    try:
        cfg.pipeline_config.validate()
    except ValueError as exc:
        raise ConfigError(f"{cfg.pipeline}: {exc}") from None

    default_call = "sendMoney alice 1 +" if cfg.pipeline == "hlf" else "alice bob 1"
    w = cp["workload"] if cp.has_section("workload") else {}
    for k in w:
        if k not in ("mode", "n", "target", "call", "start_time"):
            raise ConfigError(f"workload.{k}: unknown key")
    try:
        cfg.workload = WorkloadSpec(
            mode=w.get("mode", "parallel").strip(),
            n=_coerce("workload.n", w.get("n", "100"), 1),
            target=w.get("target", "").strip(),
            call=_split_call(w.get("call", default_call), cfg.pipeline),
            start_time=_coerce("workload.start_time", w.get("start_time", "0"), 0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"workload: {exc}") from None

    if cp.has_section("sweep"):
        items = list(cp["sweep"].items())
        if len(items) != 1:
            raise ConfigError("sweep: exactly one 'section.key = v1, v2, ...' line is supported")
        key, values = items[0]
        cfg.sweep_key = key
        cfg.sweep_values = tuple(v.strip() for v in values.split(",") if v.strip())
        if not cfg.sweep_values:
            raise ConfigError(f"sweep.{key}: no values")
        for _, variant in cfg.variants():
            try:
                variant.pipeline_config.validate()
            except ValueError as exc:
                raise ConfigError(f"sweep.{key}: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent)


# --------------------------------------------------------------------------- single run


@dataclass
class RunResult:
    run: int
    variant: str
    seed: int
    plan: PlacementPlan
    records: list[TxRecord]
    busy: dict[str, float]
    end_ms: float
    blocks: int
    trace: SimTrace
    consistent: bool


def make_plan(cfg: ExperimentConfig, t: MeshTopology, seed: int, method: str | None = None) -> PlacementPlan:
    method = method or cfg.placement_method
    roles = cfg.roles()
    k = cfg.placement_k or len(roles)
    pseed = seed if cfg.placement_seed is None else cfg.placement_seed
    try:
        if method == "basp":
            return basp(t, k, cfg.availability_threshold, pseed, roles)
        if method == "random":
            return random_placement(t, k, pseed, roles)
        if method == "fixed":
            path = Path(cfg.placement_plan)
            if cfg.base_dir is not None and not path.is_absolute():
                path = cfg.base_dir / path
            with open(path, encoding="utf-8") as fh:
                return fixed_placement(load_plan(fh).role_assignment, t)
    except (PlacementError, KeyError) as exc:
        raise ConfigError(f"placement: {exc}") from None
    raise ConfigError(f"placement.method: unknown method {method!r}")


def simulate(cfg: ExperimentConfig, t: MeshTopology, plan: PlacementPlan, seed: int, run: int = 0,
             variant: str = "base", record_trace: bool = True) -> RunResult:
    engine = Engine(t, seed=seed, record_trace=record_trace)
    if cfg.pipeline == "hlf":
        net = HlfNetwork(engine, plan, cfg.hlf)
    else:
        net = PoaNetwork(engine, plan, cfg.poa, POA_GENESIS)
    fire(net, cfg.workload)
    engine.run_until()
    end_us = engine.now_us
    busy = {node: q.busy_fraction(0, end_us) for node, q in sorted(engine.cpus.items())}
    if cfg.pipeline == "hlf":
        consistent = len(set(net.store_digests().values())) == 1 and \
            net.replay().digest() == next(iter(net.store_digests().values()))
        blocks = len(net.blocks)
    else:
        consistent = all(net.get_balance(a) == acc.balance for a, acc in net.accounts.items())
        blocks = net.head.number
    records = sorted(net.records.values(), key=lambda r: (r.submit, r.tx_id))
    return RunResult(run, variant, seed, plan, records, busy, engine.now, blocks, engine.trace, consistent)


# --------------------------------------------------------------------------- metrics


def summarize(values: Sequence[float]) -> dict[str, float]:
    if not values:
        return {"mean": float("nan"), "median": float("nan"), "min": float("nan"), "max": float("nan")}
    return {"mean": statistics.fmean(values), "median": statistics.median(values),
            "min": min(values), "max": max(values)}


def _finish_metric(pipeline: str) -> str:
    return "ttc" if pipeline == "hlf" else "complete_observed"


def run_row(res: RunResult, pipeline: str) -> dict[str, Any]:
    recs = res.records
    row: dict[str, Any] = {"variant": res.variant, "run": res.run, "seed": res.seed, "n_tx": len(recs),
                           "valid": sum(r.status == VALID for r in recs),
                           "invalid": sum(r.status == INVALID for r in recs),
                           "rejected": sum(r.status == REJECTED for r in recs),
                           "dropped": sum(r.status == DROPPED for r in recs),
                           "blocks": res.blocks}
    ends = [r.latency(_finish_metric(pipeline)) for r in recs]
    ends = [e + r.submit for e, r in zip(ends, recs) if e is not None]
    row["makespan_ms"] = max(ends) - min(r.submit for r in recs) if ends else float("nan")
    for m in PIPELINE_METRICS[pipeline]:
        vals = [v for v in (r.latency(m) for r in recs) if v is not None]
        for stat, v in summarize(vals).items():
            row[f"{m}_{stat}"] = v
    row["max_cpu_busy"] = max(res.busy.values()) if res.busy else 0.0
    row["sim_end_ms"] = res.end_ms
    row["consistent"] = int(res.consistent)
    return row


TX_COLUMNS = ("variant", "run", "seed", "tx_id", "client", "status", "block", "submit_ms", "endorse_ms",
              "order_ms", "commit_ms", "seal_ms", "seal_observed_ms", "complete_ms", "complete_observed_ms")


def tx_rows(res: RunResult) -> list[dict[str, Any]]:
    out = []
    for r in res.records:
        out.append({"variant": res.variant, "run": res.run, "seed": res.seed, "tx_id": r.tx_id,
                    "client": r.client, "status": r.status, "block": r.block, "submit_ms": r.submit,
                    "endorse_ms": r.endorse, "order_ms": r.order, "commit_ms": r.commit, "seal_ms": r.seal,
                    "seal_observed_ms": r.seal_observed, "complete_ms": r.complete,
                    "complete_observed_ms": r.complete_observed})
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if v != v:
            return "nan"
        return f"{v:.3f}"
    return str(v)


def _csv(kind: str, columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# meshchain {kind} schema v{SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def read_csv(text: str) -> list[dict[str, str]]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@dataclass
class MetricsReport:
    pipeline: str
    metric: str
    runs: list[dict[str, Any]]
    means: list[dict[str, Any]]
    txs: list[dict[str, Any]]
    cpu: list[dict[str, Any]]
    traces: list[tuple[int, str, SimTrace]] = field(default_factory=list, repr=False)

    @property
    def run_columns(self) -> list[str]:
        return list(self.runs[0])

    def runs_csv(self) -> str:
        return _csv("runs", self.run_columns, self.runs + self.means)

    def tx_csv(self) -> str:
        return _csv("tx", TX_COLUMNS, self.txs)

    def cpu_csv(self) -> str:
        return _csv("cpu", ("variant", "run", "node", "roles", "busy_fraction"), self.cpu)

    def trace_text(self) -> str:
        return "".join(f"# run {run} {variant}\n" + tr.dumps() for run, variant, tr in self.traces)

    def write(self, out, trace: str | os.PathLike | None = None) -> list[Path]:
        """Write ``out`` (per-run and mean rows) plus ``.tx.csv`` and ``.cpu.csv`` siblings."""
        out = Path(out)
        stem = out.with_suffix("")
        paths = [out, Path(f"{stem}.tx.csv"), Path(f"{stem}.cpu.csv")]
        for path, text in zip(paths, (self.runs_csv(), self.tx_csv(), self.cpu_csv())):
            path.write_text(text, encoding="utf-8")
        if trace is not None:
            Path(trace).write_text(self.trace_text(), encoding="utf-8")
            paths.append(Path(trace))
        return paths

    def variant_mean(self, variant: str, column: str) -> float:
        return next(r[column] for r in self.means if r["variant"] == variant)


def mean_rows(runs: Sequence[dict[str, Any]]) -> list[dict[str, Any]]:
    out = []
    for variant in dict.fromkeys(r["variant"] for r in runs):
        group = [r for r in runs if r["variant"] == variant]
        row: dict[str, Any] = {"variant": variant, "run": "mean", "seed": ""}
        for col, v in group[0].items():
            if col in row:
                continue
            vals = [g[col] for g in group]
            row[col] = statistics.fmean(vals) if all(isinstance(x, (int, float)) for x in vals) else ""
        out.append(row)
    return out


def run_experiment(cfg: ExperimentConfig, record_trace: bool = True) -> MetricsReport:
    """Every sweep variant times ``repetitions`` runs, seeds ``seed + r``."""
    runs, txs, cpu, traces = [], [], [], []
    run_index = 0
    for name, variant in cfg.variants():
        for r in range(cfg.repetitions):
            seed = cfg.seed + r
            t = variant.topology.build(seed, cfg.base_dir)
            plan = make_plan(variant, t, seed)
            res = simulate(variant, t, plan, seed, run_index, name, record_trace)
            runs.append(run_row(res, cfg.pipeline))
            txs.extend(tx_rows(res))
            for node, frac in res.busy.items():
                roles = " ".join(role for role, nid in plan.role_assignment.items() if nid == node)
                cpu.append({"variant": name, "run": run_index, "node": node, "roles": roles,
                            "busy_fraction": frac})
            if record_trace:
                traces.append((run_index, name, res.trace))
            run_index += 1
    return MetricsReport(cfg.pipeline, cfg.main_metric, runs, mean_rows(runs), txs, cpu, traces)


# --------------------------------------------------------------------------- placement comparison


COMPARE_COLUMNS = ("seed", "metric", "method_a", "method_b", "nodes_a", "nodes_b", "latency_a_ms",
                   "latency_b_ms", "gain_pct")


@dataclass
class Comparison:
    metric: str
    methods: tuple[str, str]
    rows: list[dict[str, Any]]

    @property
    def gains(self) -> list[float]:
        return [r["gain_pct"] for r in self.rows]

    @property
    def mean_gain(self) -> float:
        return statistics.fmean(self.gains)

    @property
    def win_rate(self) -> float:
        return sum(g > 0 for g in self.gains) / len(self.gains)

    def to_csv(self) -> str:
        summary = {"seed": "mean", "metric": self.metric, "method_a": self.methods[0],
                   "method_b": self.methods[1],
                   "latency_a_ms": statistics.fmean(r["latency_a_ms"] for r in self.rows),
                   "latency_b_ms": statistics.fmean(r["latency_b_ms"] for r in self.rows),
                   "gain_pct": self.mean_gain}
        return _csv("compare", COMPARE_COLUMNS, self.rows + [summary])


def compare_placements(cfg: ExperimentConfig, methods: tuple[str, str] = ("basp", "random"),
                       seeds: int = 30) -> Comparison:
    """Paired runs: for each seed, one topology and one run per placement method.

    ``gain_pct`` is how much lower method A's mean latency is than method B's,
    as a percentage of B.
    """
    if seeds < 1:
        raise ConfigError("seeds must be >= 1")
    metric = cfg.main_metric
    rows = []
    for s in range(cfg.seed, cfg.seed + seeds):
        t = cfg.topology.build(s, cfg.base_dir)
        lat, nodes = [], []
        for method in methods:
            plan = make_plan(cfg, t, s, method)
            res = simulate(cfg, t, plan, s, record_trace=False)
            vals = [v for v in (r.latency(metric) for r in res.records) if v is not None]
            lat.append(statistics.fmean(vals) if vals else float("nan"))
            nodes.append(" ".join(plan.sites()))
        gain = (lat[1] - lat[0]) / lat[1] * 100.0 if lat[1] else 0.0
        rows.append({"seed": s, "metric": metric, "method_a": methods[0], "method_b": methods[1],
                     "nodes_a": nodes[0], "nodes_b": nodes[1], "latency_a_ms": lat[0], "latency_b_ms": lat[1],
                     "gain_pct": gain})
    return Comparison(metric, tuple(methods), rows)
