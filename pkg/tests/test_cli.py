import csv
import logging

import pytest

from questkv.cli import main
from questkv.workloads import gen_gaussian_trace, write_trace


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_verify_passes(capsys):
    assert main(["verify", "--scale", "0.05"]) == 0
    err = capsys.readouterr().err
    assert "FAIL" not in err and err.count("PASS") == 5


def test_verify_inject_fault_fails():
    assert main(["verify", "--scale", "0.05", "--inject-fault", "--suite", "upper_bound"]) == 1


def test_verify_suite_filter(tmp_path, capsys):
    out = tmp_path / "v.csv"
    assert main(["verify", "--suite", "traffic", "--suite", "oracle", "--scale", "0.05",
                 "--out", str(out)]) == 0
    assert [r["name"] for r in read_rows(out)] == ["traffic", "oracle"]


def test_verify_unknown_suite():
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--suite", "nope"])
    assert exc.value.code == 2


def test_recall_full_policy_is_perfect(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["recall", "--policy", "full", "--budget", "16", "--length", "64",
                 "--head-dim", "8", "--means-only", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert rows and all(float(r["recall"]) == 1.0 for r in rows)


def test_recall_quest_full_budget(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["recall", "--policy", "quest", "--budget", "96", "--length", "96",
                 "--head-dim", "8", "--out", str(out)]) == 0
    rows = read_rows(out)
    # Only the final step holds all 96 tokens, and there the budget covers everything.
    last = [r for r in rows if r["step"] == "95"]
    assert float(last[0]["recall"]) == 1.0
    assert float(last[0]["output_error"]) == 0.0


def test_recall_grid_shape(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["recall", "--policy", "quest,h2o,tova,streaming", "--budget",
                 "16,32,48,64,80", "--length", "96", "--head-dim", "8", "--means-only",
                 "--no-error", "--out", str(out)]) == 0
    rows = read_rows(out)
    per_seed = [r for r in rows if r["seed"] == "0"]
    assert len(per_seed) == 20
    assert {(r["policy"], r["budget"]) for r in per_seed} == {
        (p, str(b)) for p in ("quest", "h2o", "tova", "streaming") for b in (16, 32, 48, 64, 80)
    }
    assert list(rows[0]) == ["seed", "step", "policy", "budget", "recall",
                             "traffic_fraction", "output_error"]


def test_recall_from_trace_file(tmp_path):
    path = tmp_path / "t.qkvt"
    write_trace(path, gen_gaussian_trace(3, 80, 8))
    out = tmp_path / "r.csv"
    assert main(["recall", "--trace", str(path), "--policy", "streaming", "--budget", "20",
                 "--means-only", "--out", str(out)]) == 0
    assert {r["seed"] for r in read_rows(out)} == {"t.qkvt", "all"}


def test_recall_config_errors(tmp_path, capsys):
    assert main(["recall", "--budget", "512", "--length", "100", "--head-dim", "4"]) == 2
    assert main(["recall", "--policy", "bogus", "--length", "100"]) == 2
    assert main(["recall", "--policy", "quest", "--budget", "8", "--length", "100"]) == 2
    assert main(["recall", "--trace", str(tmp_path / "missing.qkvt")]) == 2
    assert main(["recall", "--reps", "0"]) == 2


def test_traffic_worked_example(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["traffic", "--model-only", "--out", str(out)]) == 0
    (row,) = read_rows(out)
    assert float(row["fraction_model"]) == 0.125
    assert row["overhead_warning"] == "False"


def test_traffic_counted(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["traffic", "--length", "4096", "--budget", "256,1024", "--page-size", "8,16",
                 "--head-dim", "4", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert len(rows) == 4
    for r in rows:
        slack = int(r["page_size"]) / int(r["token_count"])
        assert abs(float(r["counted_fraction"]) - float(r["fraction_model"])) <= slack


def test_traffic_page_size_one_warns(tmp_path, caplog):
    out = tmp_path / "t.csv"
    with caplog.at_level(logging.WARNING, logger="questkv"):
        assert main(["traffic", "--model-only", "--page-size", "1", "--out", str(out)]) == 0
    (row,) = read_rows(out)
    assert float(row["fraction_model"]) == 1 + 4096 / 65536
    assert row["overhead_warning"] == "True"
    assert "estimation overhead" in caplog.text


def test_traffic_empty_grid():
    assert main(["traffic", "--model-only", "--length", "100", "--budget", "200"]) == 2


def _bench(tmp_path, *extra):
    out = tmp_path / "b.csv"
    assert main(["bench", "--length", "2048", "--head-dim", "8", "--reps", "1",
                 "--warmup", "0", "--out", str(out), *extra]) == 0
    return {r["kernel"]: r for r in read_rows(out)}


def test_bench_ratio(tmp_path):
    rows = _bench(tmp_path, "--budget", "256")
    assert set(rows) == {"full", "quest-estimate", "quest-topk", "quest-sparse", "quest-total"}
    assert float(rows["quest-total"]["bytes_ratio"]) == pytest.approx(1 / 16 + 256 / 2048)
    assert int(rows["quest-topk"]["bytes_touched"]) == 0
    assert (int(rows["quest-estimate"]["bytes_touched"]) + int(rows["quest-sparse"]["bytes_touched"])
            == int(rows["quest-total"]["bytes_touched"]))


def test_bench_full_budget_costs_more_than_dense(tmp_path):
    rows = _bench(tmp_path, "--budget", "2048")
    assert int(rows["quest-total"]["bytes_touched"]) >= int(rows["full"]["bytes_touched"])


def test_bench_bytes_deterministic(tmp_path):
    a = _bench(tmp_path, "--budget", "512")
    b = _bench(tmp_path, "--budget", "512")
    for k in a:
        assert a[k]["bytes_touched"] == b[k]["bytes_touched"]


def test_bench_budget_too_large():
    assert main(["bench", "--length", "64", "--budget", "128", "--head-dim", "4"]) == 2


def test_recall_csv_reproducible(tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert main(["recall", "--length", "128", "--budget", "16,64", "--head-dim", "8",
                     "--reps", "2", "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert paths[0].read_bytes().count(b"\r\n") > 100
