import csv
import json

import numpy as np
import pytest
from scipy import stats as sps

from sleboundary.cli import main
from sleboundary.harness import ConfigError, RunConfig, run
from sleboundary.parallel import map_paths
from sleboundary.stats import Estimate, binomial_estimate, estimate
from sleboundary.streams import derive_stream, step_key, step_uniform


def test_stream_identical():
    a = derive_stream(5, 3).standard_normal(1000)
    b = derive_stream(5, 3).standard_normal(1000)
    assert np.array_equal(a, b)


def test_streams_uncorrelated_and_normal():
    a = derive_stream(5, 0).standard_normal(100_000)
    b = derive_stream(5, 1).standard_normal(100_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01
    res = sps.anderson(a, "norm")
    # 1% critical value: stronger than p > 0.001
    assert res.statistic < res.critical_values[-1]


def test_step_uniform_is_pure():
    k = step_key(1, 2)
    u = [step_uniform(k, s) for s in (0, 5, 5, 10 ** 9)]
    assert u[1] == u[2]
    assert all(0 < v < 1 for v in u)


def test_estimate():
    v = np.array([1.0, 2.0, 3.0, 4.0])
    e = estimate(v)
    assert e == Estimate(2.5, float(np.std(v, ddof=1) / 2), 4)
    b = binomial_estimate([True, False, False, True])
    assert b.mean == 0.5 and b.n == 4


def test_estimate_order_independent():
    rng = np.random.default_rng(1)
    v = rng.standard_cauchy(5000)
    ids = np.arange(5000)
    perm = rng.permutation(5000)
    assert estimate(v, ids) == estimate(v[perm], ids[perm])


def _square(i):
    return i * i


def test_map_paths_order_and_workers():
    assert map_paths(_square, [3, 1, 2]) == [1, 4, 9]
    assert map_paths(_square, range(40), workers=2) == map_paths(_square, range(40), workers=1)


# --------------------------------------------------------------------------
# configuration


def test_config_invariants(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig(n_paths=1)
    with pytest.raises(ConfigError):
        RunConfig(tasks=("measure",), xs_count=10)
    with pytest.raises(ConfigError):
        RunConfig(tasks=("nope",))
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"n_paths": 4, "colour": "red"})
    cfg = RunConfig(n_paths=3, output_dir=str(tmp_path))
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.as_dict()))
    assert RunConfig.load(p) == RunConfig(n_paths=3, output_dir=str(tmp_path), workers=None)
    assert cfg.as_dict()["schema_version"] == 1


def test_flow_task_shape(tmp_path):
    cfg = RunConfig(n_paths=2, xs_count=5, tasks=("flow",), output_dir=str(tmp_path))
    out = run(cfg)
    rows = list(csv.reader((tmp_path / "swallow_times.csv").open()))
    assert rows[0] == ["path_id", "x", "T_x"]
    assert len(rows) - 1 == 2 * 5
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert {"schema_version", "config", "params", "code_version", "started", "finished"} <= set(man)
    assert out.passed


def _digest(d):
    out = {}
    for f in sorted(d.iterdir()):
        if f.name == "manifest.json":
            m = json.loads(f.read_text())
            m.pop("started")
            m.pop("finished")
            out[f.name] = json.dumps(m, sort_keys=True)
        else:
            out[f.name] = f.read_bytes()
    return out


def test_rerun_is_byte_identical(tmp_path):
    cfg = RunConfig(n_paths=3, xs_min=1.0, xs_max=2.0, xs_count=160, tasks=("flow", "measure", "hitting", "energy"),
                    eps_ladder=(0.2, 0.1, 0.05), output_dir=str(tmp_path / "run"))
    run(cfg)
    first = _digest(tmp_path / "run")
    run(cfg)
    assert _digest(tmp_path / "run") == first
    assert {"measure.csv", "measure_summary.json", "hitting.csv", "energy.csv"} <= set(first)


def test_workers_do_not_change_results(tmp_path):
    base = dict(n_paths=4, xs_count=20, tasks=("flow",))
    run(RunConfig(output_dir=str(tmp_path / "a"), workers=1, **base))
    run(RunConfig(output_dir=str(tmp_path / "b"), workers=2, **base))
    assert (tmp_path / "a" / "swallow_times.csv").read_bytes() == (tmp_path / "b" / "swallow_times.csv").read_bytes()


# --------------------------------------------------------------------------
# command line


def test_cli_flow(tmp_path, capsys):
    code = main(["flow", "--paths", "2", "--xs", "1:2:4", "--seed", "3", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "swallow_times.csv").exists()


def test_cli_trace_and_hitting(tmp_path):
    assert main(["trace", "--paths", "2", "--xs", "1:2:4", "--t-max", "2", "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "trace.csv").exists()
    assert main(["hitting", "--paths", "3", "--xs", "1:1.5:3", "--out", str(tmp_path / "h")]) == 0
    rows = list(csv.DictReader((tmp_path / "h" / "hitting.csv").open()))
    assert len(rows) == 2


def test_cli_config_error(tmp_path, capsys):
    assert main(["flow", "--paths", "1", "--out", str(tmp_path)]) == 2
    assert main(["measure", "--interval", "2:1", "--out", str(tmp_path)]) == 2


def test_cli_config_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"n_paths": 2, "xs_min": 1.0, "xs_max": 2.0, "xs_count": 160,
                             "eps_ladder": [0.2, 0.1, 0.05], "intervals": [[1.0, 2.0]]}))
    assert main(["measure", "--config", str(p), "--out", str(tmp_path / "m")]) == 0
    summary = json.loads((tmp_path / "m" / "measure_summary.json").read_text())
    assert summary["intervals"][0]["interval"] == [1.0, 2.0]


def test_cli_validate_exit_code(tmp_path):
    # criterion 16 at the smallest scale passes; the exit code follows the verdicts
    code = main(["validate", "--only", "16", "--scale", "0.01", "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "validation.json").read_text())
    assert [c["test_id"] for c in rep["criteria"]] == ["16"]
