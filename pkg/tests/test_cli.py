import json

import pytest

from longdml.cli import main, read_output
from longdml.core import write_dataset
from longdml.sim.dgp import DynamicDgp, LongTermDgp


@pytest.fixture
def long_term_csv(tmp_path):
    path = tmp_path / "lt.csv"
    write_dataset(LongTermDgp().generate(300, 0), path)
    return path


def test_estimate_writes_report(tmp_path, long_term_csv):
    out = tmp_path / "rep.json"
    assert main(["estimate", "--data", str(long_term_csv), "--problem", "long_term",
                 "--out", str(out), "--seed", "3"]) == 0
    head, body = read_output(out)
    assert head.startswith("# longdml ") and "seed=3" in head
    rep = json.loads(body)
    assert rep["n"] == 300 and rep["ci"][0] <= rep["theta_hat"] <= rep["ci"][1]


def test_schema_mismatch_exit_2(tmp_path, long_term_csv, capsys):
    code = main(["estimate", "--data", str(long_term_csv), "--problem", "dynamic", "--out",
                 str(tmp_path / "r.json")])
    assert code == 2
    err = capsys.readouterr().err
    assert "d1" in err and len(err.strip().splitlines()) == 1


def test_local_h_without_v(tmp_path, long_term_csv):
    code = main(["estimate", "--data", str(long_term_csv), "--problem", "long_term",
                 "--out", str(tmp_path / "r.json"), "--local-h", "0.3"])
    assert code == 2


def test_missing_data_file(tmp_path):
    assert main(["estimate", "--data", str(tmp_path / "none.csv"), "--problem", "long_term",
                 "--out", str(tmp_path / "r.json")]) == 2


def test_simulate_rows_and_determinism(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"sim{k}.csv"
        assert main(["simulate", "--dgp", "long_term", "--n", "500", "--reps", "10", "--seed", "1",
                     "--out", str(out)]) == 0
        outs.append(out)
    _, body = read_output(outs[0])
    lines = body.splitlines()
    assert len(lines) == 12 and lines[-1].startswith("summary")
    assert outs[0].read_bytes() == outs[1].read_bytes()
    assert (tmp_path / "sim0_long.csv").read_bytes() == (tmp_path / "sim1_long.csv").read_bytes()


def test_unknown_dgp_lists_tags(tmp_path, capsys):
    code = main(["simulate", "--dgp", "bogus", "--n", "100", "--reps", "1", "--out", str(tmp_path / "x")])
    assert code == 2
    err = capsys.readouterr().err
    assert all(t in err for t in ("long_term", "dynamic", "proximal_mediation"))


def test_invalid_check(tmp_path):
    assert main(["diagnose", "--dgp", "dynamic", "--check", "nope", "--out", str(tmp_path / "x")]) == 2


def test_argparse_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--dgp", "dynamic"])
    assert exc.value.code == 2


def test_diagnose_orthogonality_table(tmp_path):
    out = tmp_path / "orth.csv"
    assert main(["diagnose", "--dgp", "dynamic", "--check", "orthogonality", "--draws", "20000",
                 "--out", str(out)]) == 0
    _, body = read_output(out)
    lines = body.splitlines()
    assert lines[0].startswith("direction,derivative,se") and len(lines) == 21
    assert sum(int(line.split(",")[-1]) for line in lines[1:]) <= 1


def test_diagnose_rates_proximal(tmp_path):
    out = tmp_path / "rates.csv"
    assert main(["diagnose", "--dgp", "proximal_mediation", "--check", "rates", "--n", "500",
                 "--draws", "5000", "--out", str(out)]) == 0
    _, body = read_output(out)
    rows = {line.split(",")[0]: line for line in body.splitlines()[1:]}
    for name in ("nu", "delta", "alpha", "eta"):
        assert f"ill-posedness({name})" in rows
        assert rows[f"ill-posedness({name})"].split(",")[2] != "unavailable"


def test_diagnose_coverage_curve(tmp_path):
    out = tmp_path / "cov.csv"
    assert main(["diagnose", "--dgp", "dynamic", "--check", "coverage-curve", "--n", "200,400",
                 "--reps", "3", "--out", str(out)]) == 0
    _, body = read_output(out)
    assert [line.split(",")[0] for line in body.splitlines()] == ["n", "200", "400"]


def test_dynamic_estimate_with_local(tmp_path):
    path = tmp_path / "dyn.csv"
    write_dataset(DynamicDgp().generate(300, 1), path, dynamic=True)
    out = tmp_path / "r.json"
    assert main(["estimate", "--data", str(path), "--problem", "dynamic", "--local-v", "0.5",
                 "--local-h", "0.5", "--out", str(out)]) == 0
    assert json.loads(read_output(out)[1])["local"]["h"] == 0.5
