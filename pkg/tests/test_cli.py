import json

import pytest

from dataplace.cli import main


@pytest.fixture
def inst_path(tmp_path):
    path = tmp_path / "a.json"
    assert main(["generate", "--n", "3", "--k", "2", "--seed", "4", "--fee-range", "0", "0",
                 "-o", str(path), "--quiet"]) == 0
    return path


def _json_tail(out: str) -> dict:
    return json.loads(out[out.index("{\n"):])


def test_usage_errors_exit_2(capsys):
    assert main([]) == 2
    assert main(["brute"]) == 2
    assert main(["brute", "-i", "missing.json"]) == 2


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0


def test_invalid_instance_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n": 2}')
    assert main(["validate", "-i", str(bad)]) == 1
    assert "error" in capsys.readouterr().err


def test_bad_thread_count_exit_2(inst_path, monkeypatch, capsys):
    monkeypatch.setenv("DATAPLACE_THREADS", "zero")
    assert main(["brute", "-i", str(inst_path)]) == 2


def test_non_unit_rejected_with_hint(tmp_path, capsys):
    path = tmp_path / "cap.json"
    main(["generate", "--n", "3", "--k", "2", "--seed", "1", "--cache-range", "2", "2",
          "-o", str(path), "--quiet"])
    assert main(["brute", "-i", str(path)]) == 1
    assert "dataplace reduce" in capsys.readouterr().err
    out = tmp_path / "unit.json"
    assert main(["reduce", "-i", str(path), "-o", str(out), "--quiet"]) == 0
    assert main(["validate", "-i", str(out)]) == 0


def test_randomized_commands_print_seed(inst_path, capsys):
    capsys.readouterr()
    main(["glauber", "-i", str(inst_path), "--beta", "1", "--steps", "3"])
    out = capsys.readouterr().out
    assert out.startswith("seed: ")
    assert json.loads(out.splitlines()[1])["provenance"]["command"] == "glauber"


def test_brute_json_schema(inst_path, capsys):
    capsys.readouterr()
    assert main(["brute", "-i", str(inst_path), "--format", "json"]) == 0
    doc = _json_tail(capsys.readouterr().out)
    assert doc["schema"] == 1 and doc["provenance"]["command"] == "brute"
    assert doc["allocation"] in doc["optima"]
    assert all(1 <= r <= 2 for r in doc["allocation"])


def test_eval_matches_brute(inst_path, capsys):
    capsys.readouterr()
    main(["brute", "-i", str(inst_path), "--format", "json"])
    best = _json_tail(capsys.readouterr().out)
    alloc = ",".join(map(str, best["allocation"]))
    main(["eval", "-i", str(inst_path), "--alloc", alloc, "--format", "json"])
    doc = _json_tail(capsys.readouterr().out)
    assert doc["potential"] == pytest.approx(best["phi_star"])


def test_eval_rejects_out_of_range_allocation(inst_path, capsys):
    assert main(["eval", "-i", str(inst_path), "--alloc", "1,3,1"]) == 1


def test_csv_headers(inst_path, tmp_path):
    chain = tmp_path / "c.csv"
    trace = tmp_path / "t.csv"
    assert main(["chain", "-i", str(inst_path), "--tmax", "4", "-o", str(chain), "--quiet"]) == 0
    assert main(["glauber", "-i", str(inst_path), "--beta", "1", "--steps", "4", "--seed", "2",
                 "--trace", str(trace), "--quiet"]) == 0
    for path, header in ((chain, "t,d_t,bound_n_exp"), (trace, "t,player,old,new,phi")):
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# ") and "provenance" in json.loads(lines[0][2:])
        assert lines[1] == header


def test_glauber_trace_deterministic(inst_path, tmp_path):
    traces = []
    for name in ("a.csv", "b.csv"):
        path = tmp_path / name
        main(["glauber", "-i", str(inst_path), "--beta", "2", "--steps", "200", "--seed", "9",
              "--trace", str(path), "--quiet"])
        traces.append(path.read_text().splitlines()[1:])  # drop the timestamped comment
    assert traces[0] == traces[1]


def test_auction_report(inst_path, tmp_path, capsys):
    report = tmp_path / "r.json"
    assert main(["auction", "-i", str(inst_path), "--report", str(report), "--quiet"]) == 0
    doc = json.loads(report.read_text())
    assert doc["schema"] == 1
    assert "winners" in doc


def test_other_commands_run(inst_path, tmp_path, capsys):
    for argv in (["bestresponse", "-i", str(inst_path), "--seed", "1"],
                 ["mix", "-i", str(inst_path), "--beta", "0.5", "--replicas", "50", "--seed", "1"],
                 ["dual", "-i", str(inst_path), "--out", str(tmp_path / "d.json")],
                 ["nebound", "-i", str(inst_path), "--alloc", "2,1,2"]):
        assert main(argv + ["--quiet"]) == 0, argv


def test_experiment_only(tmp_path, capsys):
    out = tmp_path / "s.json"
    assert main(["experiment", "--only", "2,9", "--seed", "0", "-o", str(out)]) == 0
    doc = json.loads(out.read_text())
    text = json.dumps(doc)
    assert "exact potential identity" not in text
    assert "PASS" in capsys.readouterr().out


def test_nebound_rejects_non_equilibrium(inst_path, capsys):
    assert main(["nebound", "-i", str(inst_path), "--alloc", "1,1,1"]) == 1
    assert "not a Nash equilibrium" in capsys.readouterr().err
