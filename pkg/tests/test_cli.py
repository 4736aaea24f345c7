import csv
import io

import pytest

from pushdown.cli import (RUN_COLUMNS, SWEEP_COLUMNS, ConfigError, main, parse_config, run_rows,
                          sweep_rows, worker_count, write_csv)

TINY = """
cluster:
  n_compute: 2
  n_data: 2
workload:
  preset: CH
  n_tuples: 400
  key_universe: 100
  zipf_z: 1.0
experiment:
  strategies: [FO]
"""

GOLDEN_RUN_HEADER = (
    "strategy,preset,zipf_z,seed,adaptive,completion_time_s,throughput_tps,tuples,"
    "computed_at_data,computed_fetched,computed_from_cache,data_requests,compute_requests,"
    "returned_raw,hit_rate_mem,hit_rate_disk,data_cpu_skew,"
    "c0_cpu_busy,c0_disk_busy,c0_link_in_busy,c0_link_out_busy,"
    "c1_cpu_busy,c1_disk_busy,c1_link_in_busy,c1_link_out_busy,"
    "d0_cpu_busy,d0_disk_busy,d0_link_in_busy,d0_link_out_busy,"
    "d1_cpu_busy,d1_disk_busy,d1_link_in_busy,d1_link_out_busy"
)
GOLDEN_SWEEP_HEADER = ("strategy,preset,zipf_z,seed,adaptive,completion_time_s,throughput_tps,"
                       "normalized_time,nonadaptive_time_s,nonadaptive_over_adaptive")


def read(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# units:")
    return lines[1], list(csv.DictReader(lines[1:]))


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY)
    return p


def test_run_one_row_and_golden_header(tiny, tmp_path):
    out = tmp_path / "out.csv"
    assert main(["run", "--config", str(tiny), "--out", str(out)]) == 0
    header, rows = read(out)
    assert header == GOLDEN_RUN_HEADER
    assert header.split(",")[:len(RUN_COLUMNS)] == RUN_COLUMNS
    assert len(rows) == 1 and rows[0]["strategy"] == "FO" and rows[0]["tuples"] == "400"


def test_run_is_reproducible(tiny, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["run", "--config", str(tiny), "--out", str(a), "--seeds", "2"])
    main(["run", "--config", str(tiny), "--out", str(b), "--seeds", "2"])
    assert a.read_bytes() == b.read_bytes()


def test_units_header_documents_columns(tiny, tmp_path):
    out = tmp_path / "o.csv"
    main(["run", "--config", str(tiny), "--out", str(out)])
    units = out.read_text().splitlines()[0]
    assert "completion_time_s: seconds" in units and "<node>_cpu_busy" in units


@pytest.mark.parametrize("text, line, fragment", [
    ("cluster:\n  n_compute: 2\n  bogus: 1\n", 3, "unknown key 'bogus'"),
    ("workload:\n  preset: DH\nextra:\n  x: 1\n", 3, "unknown section"),
    ("workload:\n  preset: [DH\n", 3, "malformed YAML"),
    ("cluster:\n  n_compute: 0\n", 2, "invalid 'cluster'"),
    ("workload: 5\n", 1, "must be a mapping"),
])
def test_malformed_config_line_numbers(tmp_path, capsys, text, line, fragment):
    p = tmp_path / "bad.yaml"
    p.write_text(text)
    assert main(["run", "--config", str(p)]) == 2
    err = capsys.readouterr().err
    assert f"bad.yaml:{line}:" in err and fragment in err


def test_unknown_strategy_rejected():
    with pytest.raises(ConfigError, match="unknown strategy"):
        parse_config("experiment:\n  strategies: [XX]\n")


def test_missing_file(capsys):
    assert main(["run", "--config", "/nonexistent/x.yaml"]) == 2


def test_empty_config_uses_defaults():
    cfg = parse_config("")
    assert cfg.workload.n_tuples == 100_000 and cfg.cluster.n_compute == 4


def test_sweep_arity_and_normalisation():
    cfg = parse_config(TINY.replace("strategies: [FO]", "strategies: [NO, FC, FD, FR, CO, LO, FO]\n  seeds: 3"))
    columns, rows = sweep_rows(cfg)
    assert columns == SWEEP_COLUMNS
    assert len(rows) == 7 * 4 * 3
    for row in rows:
        if row[0] == "NO" and row[2] == 0.0:
            assert row[7] == 1.0


def test_sweep_runs_missing_baseline():
    cfg = parse_config(TINY + "  zipf: [1.0]\n")
    _, rows = sweep_rows(cfg)
    assert len(rows) == 1 and rows[0][7] > 0


def test_compare_adaptive_ratio_column(tmp_path):
    cfg = parse_config(TINY + "  zipf: [1.0]\n  compare_adaptive: true\n")
    _, rows = sweep_rows(cfg)
    (row,) = rows
    assert row[9] == pytest.approx(row[8] / row[5])


def test_sweep_cli_golden_header(tiny, tmp_path):
    out = tmp_path / "s.csv"
    tiny.write_text(TINY + "  zipf: [0.0]\n")
    assert main(["sweep", "--config", str(tiny), "--out", str(out)]) == 0
    header, rows = read(out)
    assert header == GOLDEN_SWEEP_HEADER and len(rows) == 1


def test_parallel_workers_match_serial(tiny, monkeypatch):
    cfg = parse_config(TINY.replace("[FO]", "[FD, FO]"))
    monkeypatch.setenv("PUSHDOWN_WORKERS", "1")
    serial = run_rows(cfg, 2)
    monkeypatch.setenv("PUSHDOWN_WORKERS", "2")
    assert worker_count() == 2
    assert run_rows(cfg, 2) == serial


def test_bad_worker_env(monkeypatch):
    monkeypatch.setenv("PUSHDOWN_WORKERS", "many")
    with pytest.raises(ConfigError):
        worker_count()


def test_bad_seeds_flag(tiny):
    assert main(["run", "--config", str(tiny), "--seeds", "0"]) == 2


def test_write_csv_stdout_format():
    buf = io.StringIO()
    write_csv(["strategy", "completion_time_s"], [["FO", 0.1]], buf)
    assert buf.getvalue().splitlines()[1:] == ["strategy,completion_time_s", "FO,0.1"]


def test_shipped_configs_parse():
    from pathlib import Path
    for p in sorted((Path(__file__).parent.parent / "configs").glob("*.yaml")):
        parse_config(p.read_text(), str(p))
