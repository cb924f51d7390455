"""Run, sweep and report through the command line entry point."""

import configparser
import csv

import pytest

from starsr.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, main
from starsr.experiment import SWEEP_HEADER, TRACE_HEADER, SweepSpec, read_config, report

SMALL = "[scenario]\nnum_elements = 4\nnum_pu = 2\n"


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return str(path)


def test_default_config_is_the_shipped_scenario():
    cfg = read_config(None)
    assert (cfg.num_antennas, cfg.num_elements, cfg.num_pu, cfg.num_su) == (4, 20, 4, 1)
    assert cfg.gamma_b_min_db == 30 and cfg.rate_b_min == 2 and cfg.rate_u_min == 0.42


def test_run_writes_deterministic_files(tmp_path, small_cfg):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--config", small_cfg, "--seed", "1", "--out", str(out)]) == EXIT_OK
        outs.append(out)
    for fname in ("trace.csv", "result.txt"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
    rows = list(csv.reader((outs[0] / "trace.csv").read_text().splitlines()))
    assert rows[0] == TRACE_HEADER
    assert rows[1][1] == "init" and rows[-1][1] == "final"
    parsed = configparser.ConfigParser()
    parsed.read(outs[0] / "result.txt")
    for section in ("run", "power", "coefficients", "beamformer", "constraints", "config"):
        assert section in parsed
    assert parsed["run"]["feasible"] == "1"


@pytest.mark.parametrize("argv, needle", [
    (["run", "--scheme", "baseline9"], "valid: proposed, proposed-no-phase-corr"),
    (["run", "--model", "multicast"], "unknown model"),
    (["sweep", "--param", "Z", "--values", "1"], "unknown sweep parameter"),
    (["sweep", "--param", "M", "--values", "1,x"], "cannot parse"),
    (["sweep", "--param", "M", "--values", "2.5", "--seeds", "1"], "integer"),
    (["sweep", "--param", "M", "--values", "4", "--seeds", "5-1"], "empty seed range"),
    (["report", "missing.csv"], "no such file"),
])
def test_usage_errors(argv, needle, capsys, tmp_path):
    assert main(argv + (["--out", str(tmp_path)] if argv[0] != "report" else [])) == EXIT_USAGE
    assert needle in capsys.readouterr().err


def test_missing_arguments_are_usage_errors(capsys):
    assert main(["sweep"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE


def test_bad_config_key(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("[scenario]\nnum_elements = 4\nwarp_factor = 9\n")
    assert main(["run", "--config", str(path), "--out", str(tmp_path)]) == EXIT_USAGE
    assert "warp_factor" in capsys.readouterr().err


def test_infeasible_run_exit_code(tmp_path):
    path = tmp_path / "hard.cfg"
    path.write_text(SMALL + "gamma_b_min_db = 250\n")
    code = main(["run", "--config", str(path), "--out", str(tmp_path / "o")])
    assert code == EXIT_INFEASIBLE
    assert (tmp_path / "o" / "result.txt").is_file()


def sweep_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_sweep_rows_and_report(tmp_path, small_cfg, capsys):
    out = tmp_path / "sw"
    argv = ["sweep", "--config", small_cfg, "--scheme", "proposed,baseline2", "--param", "M",
            "--values", "3,4", "--seeds", "1-2", "--out", str(out)]
    assert main(argv) == EXIT_OK
    rows = sweep_rows(out / "sweep.csv")
    assert rows[0] == SWEEP_HEADER
    body = rows[1:]
    assert len(body) == 2 * 2 * 2
    keys = [(r[0], r[3], r[4]) for r in body]
    assert keys == sorted(keys, key=lambda k: (("proposed", "baseline2").index(k[0]),
                                                float(k[1]), int(k[2])))
    capsys.readouterr()
    assert main(["report", str(out / "sweep.csv"), "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "parameter: M" in text and "proposed<=baseline1:n/a" in text
    assert (out / "summary.csv").is_file()


def test_parallel_sweep_matches_serial(tmp_path, small_cfg, monkeypatch):
    argv = ["sweep", "--config", small_cfg, "--scheme", "baseline2,baseline3", "--param", "N",
            "--values", "2,3", "--seeds", "1,2"]
    monkeypatch.setenv("STARSR_WORKERS", "1")
    assert main(argv + ["--out", str(tmp_path / "s")]) == EXIT_OK
    monkeypatch.setenv("STARSR_WORKERS", "2")
    assert main(argv + ["--out", str(tmp_path / "p")]) == EXIT_OK
    assert (tmp_path / "s" / "sweep.csv").read_bytes() == (tmp_path / "p" / "sweep.csv").read_bytes()


def test_report_empty_single_and_malformed(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text(",".join(SWEEP_HEADER) + "\n")
    summary = report(empty)
    assert summary.stats == {} and "no runs" in summary.to_text()
    assert main(["report", str(empty)]) == EXIT_OK

    row = ["proposed", "broadcast", "M", "20", "1", "converged", "1", "1", "0.5", "26.99",
           "1", "3", "0.1", "0.2", "1", "1", "0.5", "26.99", "0"]
    good = tmp_path / "one.csv"
    good.write_text(",".join(SWEEP_HEADER) + "\n" + ",".join(row) + "\n"
                    + "garbage,row\n" + ",".join(row[:5] + ["converged", "x"] + row[7:]) + "\n")
    summary = report(good)
    assert summary.skipped == 2
    assert set(summary.chain.values()) == {"n/a"}
    assert "skipped 2 malformed rows" in summary.to_text()


def test_report_flags_non_monotone_runs(tmp_path):
    row = ["proposed", "broadcast", "M", "20", "4", "converged", "1", "0", "0.5", "26.99",
           "1", "3", "0.1", "0.2", "1", "1", "0.5", "26.99", "0"]
    path = tmp_path / "flag.csv"
    path.write_text(",".join(SWEEP_HEADER) + "\n" + ",".join(row) + "\n")
    assert "non-monotone trace: scheme=proposed value=20 seed=4" in report(path).to_text()


def test_sweep_spec_validation(tmp_path):
    with pytest.raises(ValueError):
        SweepSpec("M", [], "broadcast", ["proposed"], [1], tmp_path)
    with pytest.raises(ValueError):
        SweepSpec("M", [4], "broadcast", ["proposed"], [], tmp_path)
    with pytest.raises(ValueError):
        SweepSpec("M", [4], "multicast", ["proposed"], [1], tmp_path)
