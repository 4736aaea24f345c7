"""Command line: single runs, strategy x skew sweeps and the acceptance suite.

Configuration is YAML with four sections (``cluster``, ``workload``,
``engine``, ``experiment``).  Unknown keys and bad values are rejected with
the line number of the offending entry before anything runs.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import yaml

from .engine import ALL_STRATEGIES, EngineConfig, Strategy
from .sim import ClusterSpec, Metrics, run
from .workload import WorkloadSpec

WORKERS_ENV = "PUSHDOWN_WORKERS"
DEFAULT_ZIPF = (0.0, 0.5, 1.0, 1.5)

RUN_COLUMNS = [
    "strategy", "preset", "zipf_z", "seed", "adaptive",
    "completion_time_s", "throughput_tps", "tuples",
    "computed_at_data", "computed_fetched", "computed_from_cache",
    "data_requests", "compute_requests", "returned_raw",
    "hit_rate_mem", "hit_rate_disk", "data_cpu_skew",
]
SWEEP_COLUMNS = [
    "strategy", "preset", "zipf_z", "seed", "adaptive",
    "completion_time_s", "throughput_tps", "normalized_time",
    "nonadaptive_time_s", "nonadaptive_over_adaptive",
]
UNITS = {
    "completion_time_s": "seconds (simulated)", "throughput_tps": "tuples per simulated second",
    "normalized_time": "completion time / NO at z=0, same seed",
    "nonadaptive_time_s": "seconds (simulated)",
    "nonadaptive_over_adaptive": "ratio", "zipf_z": "Zipf exponent",
    "hit_rate_mem": "fraction of tuples", "hit_rate_disk": "fraction of tuples",
    "data_cpu_skew": "max/mean data-node CPU busy time",
    "cpu_busy": "fraction of completion time", "link_in_busy": "fraction of completion time",
    "link_out_busy": "fraction of completion time", "disk_busy": "fraction of completion time",
}


class ConfigError(Exception):
    """Invalid configuration; the message carries ``path:line``."""


@dataclass
class Experiment:
    strategies: List[str] = field(default_factory=lambda: list(ALL_STRATEGIES))
    zipf: Optional[List[float]] = None      # None: the workload's own zipf_z (run) / DEFAULT_ZIPF (sweep)
    seeds: int = 1
    compare_adaptive: bool = False


@dataclass
class RunConfig:
    cluster: ClusterSpec
    workload: WorkloadSpec
    engine: EngineConfig
    experiment: Experiment
    source: str = "<config>"

    def zipf_grid(self, sweep: bool) -> List[float]:
        if self.experiment.zipf is not None:
            return list(self.experiment.zipf)
        return list(DEFAULT_ZIPF) if sweep else [self.workload.zipf_z]


SECTIONS = {"cluster": ClusterSpec, "workload": WorkloadSpec, "engine": EngineConfig,
            "experiment": Experiment}


def _line(node) -> int:
    return node.start_mark.line + 1


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: malformed YAML: {getattr(exc, 'problem', exc)}") from None
    if root is None:
        root = yaml.MappingNode("tag:yaml.org,2002:map", [])
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{source}:{_line(root)}: top level must be a mapping of sections")
    built = {}
    for key_node, value_node in root.value:
        name = key_node.value
        if name not in SECTIONS:
            raise ConfigError(f"{source}:{_line(key_node)}: unknown section {name!r} "
                              f"(expected one of {', '.join(SECTIONS)})")
        if name in built:
            raise ConfigError(f"{source}:{_line(key_node)}: duplicate section {name!r}")
        built[name] = _build_section(SECTIONS[name], name, value_node, source)
    for name, cls in SECTIONS.items():
        if name not in built:
            built[name] = cls()
    cfg = RunConfig(built["cluster"], built["workload"], built["engine"], built["experiment"], source)
    for s in cfg.experiment.strategies:
        if s not in ALL_STRATEGIES:
            raise ConfigError(f"{source}: unknown strategy {s!r}")
    if cfg.experiment.seeds < 1:
        raise ConfigError(f"{source}: experiment.seeds must be >= 1")
    return cfg


def _build_section(cls, name: str, node, source: str):
    if isinstance(node, yaml.ScalarNode) and node.value in ("", "~", "null"):
        return cls()
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{source}:{_line(node)}: section {name!r} must be a mapping")
    allowed = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key_node, value_node in node.value:
        key = key_node.value
        if key not in allowed:
            raise ConfigError(f"{source}:{_line(key_node)}: unknown key {key!r} in section {name!r}")
        if cls is Experiment and key == "strategies":
            # raw scalars: YAML 1.1 would otherwise read the strategy NO as false
            if not isinstance(value_node, yaml.SequenceNode) or not all(
                    isinstance(n, yaml.ScalarNode) for n in value_node.value):
                raise ConfigError(f"{source}:{_line(value_node)}: strategies must be a list of names")
            kwargs[key] = [n.value for n in value_node.value]
            continue
        kwargs[key] = yaml.safe_load(yaml.serialize(value_node))
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}:{_line(node)}: invalid {name!r} section: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))


# -- running cells ----------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    strategy: str
    zipf_z: float
    seed: int
    adaptive: bool = True


def _run_cell(args) -> Metrics:
    cfg, cell = args
    workload = cfg.workload.with_(zipf_z=cell.zipf_z)
    engine = dataclasses.replace(cfg.engine, adaptive=cell.adaptive)
    return run(cfg.cluster, workload, cell.strategy, engine, seed=cell.seed)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
        return max(1, n)
    return max(1, os.cpu_count() or 1)


def run_cells(cfg: RunConfig, cells: Sequence[Cell], workers: Optional[int] = None) -> List[Metrics]:
    """Run cells, in parallel when more than one worker; results keep cell order."""
    workers = worker_count() if workers is None else workers
    jobs = [(cfg, c) for c in cells]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_cell(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_cell, jobs))


def _seeds(cfg: RunConfig, override: Optional[int]) -> List[int]:
    n = override if override is not None else cfg.experiment.seeds
    return [cfg.cluster.seed + s for s in range(n)]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, bool):
        return "1" if x else "0"
    return str(x)


def run_rows(cfg: RunConfig, seeds: Optional[int] = None) -> Tuple[List[str], List[list]]:
    cells = [Cell(s, z, seed) for z in cfg.zipf_grid(False) for seed in _seeds(cfg, seeds)
             for s in cfg.experiment.strategies]
    results = run_cells(cfg, cells)
    node_names = [u.node for u in results[0].usage] if results else []
    columns = list(RUN_COLUMNS)
    for n in node_names:
        columns += [f"{n}_cpu_busy", f"{n}_disk_busy", f"{n}_link_in_busy", f"{n}_link_out_busy"]
    rows = []
    for cell, m in zip(cells, results):
        c = m.counts
        row = [cell.strategy, cfg.workload.preset, cell.zipf_z, cell.seed, cell.adaptive,
               m.completion_time, m.throughput, m.tuples,
               c["resolved_data"], c["resolved_fetched"], c["resolved_cache"],
               c["req_data"], c["req_compute"], c["returned_raw"],
               m.cache["hit_rate_mem"], m.cache["hit_rate_disk"], m.cpu_skew("d")]
        for u in m.usage:
            row += [u.cpu, u.disk, u.link_in, u.link_out]
        rows.append(row)
    return columns, rows


def sweep_rows(cfg: RunConfig, seeds: Optional[int] = None) -> Tuple[List[str], List[list]]:
    grid = cfg.zipf_grid(True)
    seed_list = _seeds(cfg, seeds)
    strategies = cfg.experiment.strategies
    cells = [Cell(s, z, seed) for z in grid for seed in seed_list for s in strategies]
    index = {c: n for n, c in enumerate(cells)}
    extra = []
    for seed in seed_list:
        base = Cell("NO", 0.0, seed)
        if base not in index:
            extra.append(base)
    compare = cfg.experiment.compare_adaptive
    if compare:
        extra += [dataclasses.replace(c, adaptive=False) for c in cells if Strategy(c.strategy).caches]
    all_cells = cells + extra
    results = run_cells(cfg, all_cells)
    by_cell = dict(zip(all_cells, results))
    rows = []
    for cell in cells:
        m = by_cell[cell]
        base = by_cell[Cell("NO", 0.0, cell.seed)].completion_time
        norm = m.completion_time / base if base > 0 else float("nan")
        non, ratio = "", ""
        off = dataclasses.replace(cell, adaptive=False)
        if compare and off in by_cell:
            non = by_cell[off].completion_time
            ratio = non / m.completion_time if m.completion_time > 0 else float("nan")
        rows.append([cell.strategy, cfg.workload.preset, cell.zipf_z, cell.seed, cell.adaptive,
                     m.completion_time, m.throughput, norm, non, ratio])
    return list(SWEEP_COLUMNS), rows


def write_csv(columns: List[str], rows: List[list], out) -> None:
    units = "; ".join(f"{c}: {UNITS[c]}" for c in columns if c in UNITS)
    generic = sorted({c.split("_", 1)[1] for c in columns if c.startswith(("c", "d"))
                      and c.split("_", 1)[-1] in UNITS and c not in UNITS})
    if generic:
        units += "; per-node " + ", ".join(f"<node>_{g}: {UNITS[g]}" for g in generic)
    out.write(f"# units: {units}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(x) for x in row])


def _emit(columns, rows, out_path: Optional[str]) -> None:
    if out_path in (None, "-"):
        write_csv(columns, rows, sys.stdout)
        return
    buf = io.StringIO()
    write_csv(columns, rows, buf)
    Path(out_path).write_text(buf.getvalue())


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    columns, rows = run_rows(cfg, args.seeds)
    _emit(columns, rows, args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    columns, rows = sweep_rows(cfg, args.seeds)
    _emit(columns, rows, args.out)
    return 0


def cmd_accept(args) -> int:
    from .acceptance import run_all

    results = run_all(quick=args.quick, stream=sys.stdout)
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pushdown", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run each (strategy, z, seed) cell and emit raw metrics")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default="-")
    r.add_argument("--seeds", type=int, default=None)
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", help="strategy x skew sweep normalised to NO at z=0")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default="-")
    s.add_argument("--seeds", type=int, default=None)
    s.set_defaults(func=cmd_sweep)
    a = sub.add_parser("accept", help="run the acceptance criteria and print verdicts")
    a.add_argument("--quick", action="store_true", help="reduced sizes; verdicts are indicative only")
    a.set_defaults(func=cmd_accept)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seeds", None) is not None and args.seeds < 1:
        print("error: --seeds must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
