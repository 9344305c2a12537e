import csv
import json
from pathlib import Path

import pytest

from artifacts import RunDirectory, read_manifest
from cli import build_parser, compare, main
from domain_grid import DensityMeasure
from errors import ComparisonError, InputError

PROBLEMS = Path(__file__).parent / "problems"
BAR = str(PROBLEMS / "bar.json")


def _write_problem(tmp_path, name, data):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(data), encoding='utf-8')
    return str(path)


def _bar_problem(**overrides):
    data = json.loads(Path(BAR).read_text(encoding='utf-8'))
    data.update(overrides)
    return data


def _read_csv(path):
    with open(path, newline='', encoding='utf-8') as fh:
        return list(csv.DictReader(fh))


def test_integrand_table_writes_rows(tmp_path):
    assert main(["integrand-table", "--config", BAR, "--out", str(tmp_path)]) == 0
    run_dir = tmp_path / "bar-integrand-table"
    rows = _read_csv(run_dir / "integrands.csv")
    assert len(rows) == 4
    assert float(rows[0]["j_bar"]) == pytest.approx(2.0)
    assert float(rows[0]["j"]) == pytest.approx(2.5)
    assert float(rows[0]["rho"]) == pytest.approx(2.0)
    schema = json.loads((run_dir / "integrands.schema.json").read_text(encoding='utf-8'))
    assert [c["name"] for c in schema["columns"]] == list(rows[0].keys())
    manifest = read_manifest(str(run_dir))
    assert manifest["status"] == "ok"
    assert manifest["summary"]["rows"] == 4
    assert "integrands.csv" in manifest["files"]


def test_integrand_table_without_config_uses_default_law(tmp_path):
    assert main(["integrand-table", "--out", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "problem-integrand-table" / "integrands.csv")
    assert float(rows[0]["j_bar"]) == pytest.approx(2.0)


def test_solve_mk_truss_on_bar(tmp_path):
    code = main(["solve-mk", "--config", BAR, "--truss", "--resolution", "8", "--out", str(tmp_path)])
    assert code == 0
    run_dir = tmp_path / "bar-solve-mk-truss"
    summary = json.loads((run_dir / "summary.json").read_text(encoding='utf-8'))
    assert summary["I"] == pytest.approx(1.0, abs=1e-8)
    assert summary["optimal_mass_value"] == pytest.approx(0.5, rel=1e-6)
    bars = _read_csv(run_dir / "bars.csv")
    assert sum(float(b["mass"]) for b in bars) == pytest.approx(1.0)
    assert all(float(b["y0"]) == pytest.approx(0.5) for b in bars)


def test_compliance_command(tmp_path):
    problem = _write_problem(tmp_path, "bar_c", _bar_problem(name="bar_c", compliance={"kind": "c"}))
    assert main(["compliance", "--config", problem, "--resolution", "4", "--out", str(tmp_path)]) == 0
    run_dir = tmp_path / "bar_c-compliance"
    rows = _read_csv(run_dir / "compliance.csv")
    assert rows[0]["law"] == "j"
    assert float(rows[0]["value"]) > 0
    assert (run_dir / "density.vtk").read_text(encoding='utf-8').startswith("# vtk DataFile")


def test_conj2_probe_reports_violation(tmp_path):
    problem = _write_problem(tmp_path, "delta_identity", {
        "name": "delta_identity",
        "law": {"dim": 2, "gamma": 1.0},
        "conj2": {"atoms": [{"weight": 1.0, "tensor": [[1.0, 0.0], [0.0, 1.0]]}]},
    })
    assert main(["probe", "conj2", "--config", problem, "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "delta_identity-probe-conj2" / "summary.json").read_text(encoding='utf-8'))
    assert summary["lhs"] == pytest.approx(1.0)
    assert summary["rhs"] == pytest.approx(2.0)
    assert summary["satisfied"] is False


def test_missing_config_is_a_config_error(tmp_path, capsys):
    assert main(["compliance", "--out", str(tmp_path)]) == 3
    err = capsys.readouterr().err
    assert '"exit_code": 3' in err
    assert main(["compliance", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 3


def test_invalid_problem_is_a_config_error(tmp_path):
    problem = _write_problem(tmp_path, "bad", {"law": {"dim": 2}, "unknown_block": 1})
    assert main(["integrand-table", "--config", problem, "--out", str(tmp_path)]) == 3
    mismatch = _write_problem(tmp_path, "mismatch", {"law": {"dim": 3, "gamma": 1.0},
                                                     "domain": {"lengths": [1.0, 1.0]}})
    assert main(["compliance", "--config", mismatch, "--out", str(tmp_path)]) == 3


def test_unbalanced_free_body_exits_infeasible(tmp_path):
    problem = _write_problem(tmp_path, "free", _bar_problem(name="free", clamp=[]))
    assert main(["solve-mk", "--config", problem, "--truss", "--resolution", "4", "--out", str(tmp_path)]) == 4
    error = json.loads((tmp_path / "free-solve-mk-truss" / "error.json").read_text(encoding='utf-8'))
    assert error["error"] == "infeasible"
    assert read_manifest(str(tmp_path / "free-solve-mk-truss"))["status"] == "infeasible"


@pytest.mark.parametrize("method", ["--truss", "--grid"])
def test_empty_clamp_and_no_loads_exits_infeasible(tmp_path, method):
    problem = _write_problem(tmp_path, "empty", _bar_problem(name="empty", clamp=[], loads=[]))
    assert main(["solve-mk", "--config", problem, method, "--resolution", "4", "--out", str(tmp_path)]) == 4
    run_dir = tmp_path / f"empty-solve-mk-{method.lstrip('-')}"
    error = json.loads((run_dir / "error.json").read_text(encoding='utf-8'))
    assert error["error"] == "infeasible"
    assert error["exit_code"] == 4


def test_usage_error_exits_two():
    with pytest.raises(SystemExit) as info:
        main(["solve-mk", "--truss", "--grid"])
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        build_parser().parse_args(["probe", "unknown"])


def test_compare_identical_runs(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for root in (a, b):
        assert main(["solve-mk", "--config", BAR, "--truss", "--resolution", "8", "--out", str(root)]) == 0
    rows = compare(str(a / "bar-solve-mk-truss"), str(b / "bar-solve-mk-truss"))
    assert {r["quantity"] for r in rows} >= {"I", "optimal_mass_value"}
    assert all(r["rel_delta"] == 0.0 for r in rows)
    assert main(["compare", str(a / "bar-solve-mk-truss"), str(b / "bar-solve-mk-truss"),
                 "--out", str(tmp_path), "--tolerance", "1e-12"]) == 0
    assert (tmp_path / "compare" / "compare.csv").exists()


def test_repeated_runs_write_identical_tables(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for root in (a, b):
        assert main(["integrand-table", "--config", BAR, "--out", str(root)]) == 0
        assert main(["solve-mk", "--config", BAR, "--truss", "--resolution", "8", "--seed", "7",
                     "--out", str(root)]) == 0
    for rel in ("bar-integrand-table/integrands.csv", "bar-integrand-table/integrands.schema.json",
                "bar-solve-mk-truss/bars.csv", "bar-solve-mk-truss/bars.schema.json"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_compare_rejects_different_laws(tmp_path):
    other = _write_problem(tmp_path, "bar", _bar_problem(law={"dim": 2, "alpha": 0.0, "beta": 1.0}))
    assert main(["solve-mk", "--config", BAR, "--truss", "--resolution", "8", "--out", str(tmp_path / "a")]) == 0
    assert main(["solve-mk", "--config", other, "--truss", "--resolution", "8", "--out", str(tmp_path / "b")]) == 0
    run_a, run_b = tmp_path / "a" / "bar-solve-mk-truss", tmp_path / "b" / "bar-solve-mk-truss"
    with pytest.raises(ComparisonError):
        compare(str(run_a), str(run_b))
    assert main(["compare", str(run_a), str(run_b)]) == 8


def test_compare_needs_manifests(tmp_path):
    with pytest.raises(InputError):
        compare(str(tmp_path), str(tmp_path))


def test_csv_columns_must_be_documented(tmp_path, bar8):
    out = RunDirectory(str(tmp_path), "tables")
    with pytest.raises(InputError):
        out.write_csv("bad", [{"mystery": 1.0}])
    path = out.write_csv("ok", [{"eps": 0.1, "flag": ""}])
    assert path.read_text(encoding='utf-8') == "eps,flag\n0.1,\n"
    vtk = out.write_vtk("leb", bar8, {"density": DensityMeasure.lebesgue(bar8).cell_weights})
    assert "CELL_DATA 64" in vtk.read_text(encoding='utf-8')
