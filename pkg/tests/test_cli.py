import csv
import json
import math

import pytest

from oscbath import cli
from oscbath.quadrature import THREADS_ENV

SMALL = ["--samples", "4000", "--max-n", "3"]


def run(tmp_path, command, *extra, name="out"):
    out = tmp_path / name
    code = cli.main([command, "--out", str(out), *extra])
    return code, out


def read_csv(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    meta = [l for l in lines if l.startswith("#")]
    rows = list(csv.DictReader(l for l in lines if not l.startswith("#")))
    return meta, rows


def write_cfg(tmp_path, text):
    p = tmp_path / "cfg.toml"
    p.write_text(text, encoding="utf-8")
    return str(p)


def test_lam_zero_single_row(tmp_path):
    code, out = run(tmp_path, "terms", "--override", "model.lam=0.0", *SMALL)
    assert code == cli.EXIT_OK
    meta, rows = read_csv(out / "terms.csv")
    assert len(rows) == 1
    assert rows[0]["n"] == "0" and float(rows[0]["h2n_linked"]) == 1.0


def test_terms_rows_and_monotone(tmp_path):
    code, out = run(tmp_path, "terms", *SMALL)
    assert code == 0
    _, rows = read_csv(out / "terms.csv")
    assert [r["n"] for r in rows] == ["0", "1", "2", "3"]
    roots = [float(r["sqrt_term"]) for r in rows]
    assert all(a > b for a, b in zip(roots, roots[1:]))
    assert rows[1]["h2n_direct"] and not rows[3]["h2n_direct"]
    jl = (out / "terms.jsonl").read_text().splitlines()
    assert len(jl) == 5 and json.loads(jl[0])["seed"] == 0


def test_rerun_is_byte_identical(tmp_path):
    _, a = run(tmp_path, "terms", *SMALL, name="a")
    _, b = run(tmp_path, "terms", *SMALL, name="b")
    for f in ("terms.csv", "terms.jsonl"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_thread_count_does_not_change_output(tmp_path, monkeypatch):
    extra = ["--samples", "150000", "--max-n", "2"]
    monkeypatch.setenv(THREADS_ENV, "1")
    _, a = run(tmp_path, "terms", *extra, name="t1")
    monkeypatch.setenv(THREADS_ENV, "4")
    _, b = run(tmp_path, "terms", *extra, name="t4")
    assert (a / "terms.csv").read_bytes() == (b / "terms.csv").read_bytes()


def test_seed_changes_mc_columns(tmp_path):
    _, a = run(tmp_path, "terms", *SMALL, name="a")
    _, b = run(tmp_path, "terms", *SMALL, "--seed", "7", name="b")
    ra, rb = read_csv(a / "terms.csv")[1], read_csv(b / "terms.csv")[1]
    assert ra[1]["h2n_linked"] == rb[1]["h2n_linked"]
    assert ra[1]["h2n_direct"] != rb[1]["h2n_direct"]


def test_provenance_and_float_format(tmp_path):
    _, out = run(tmp_path, "terms", *SMALL, "--seed", "5")
    meta, rows = read_csv(out / "terms.csv")
    cfg = json.loads(meta[0].removeprefix("# config: "))
    assert cfg["compute"]["seed"] == 5 and cfg["compute"]["samples"] == 4000
    assert meta[1] == "# seed: 5"
    for r in rows[1:]:
        s = r["h2n_linked"]
        assert float(s) == float(format(float(s), ".17g"))
        assert len(s.replace(".", "").replace("-", "").split("e")[0].lstrip("0")) >= 15
    assert b"\r\n" not in (out / "terms.csv").read_bytes()


@pytest.mark.parametrize("body,needle", [
    ("schema = 1\n[model]\ntheta = 1.0\nbogus = 2\n", "line 4"),
    ("schema = 1\n[compute]\nsamples = -3\n", "line 3"),
    ("schema = 2\n", "line 1"),
    ("schema = 1\n[model]\ntheta = -1.0\n", "theta"),
    ("schema = 1\n[model.form_factor]\nkind = \"nope\"\n", "line 3"),
    ("schema = 1\n[nonsense]\n", "line 2"),
    ("schema = 1\n[compute]\n\nj_method = \"mc\"\n", "line 4"),
])
def test_config_errors(tmp_path, capsys, body, needle):
    code, _ = run(tmp_path, "terms", "--config", write_cfg(tmp_path, body))
    assert code == cli.EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_missing_schema_and_bad_override(tmp_path):
    assert run(tmp_path, "terms", "--config", write_cfg(tmp_path, "[model]\nlam = 0.1\n"))[0] == 1
    assert run(tmp_path, "terms", "--override", "model.nope=1")[0] == 1
    assert run(tmp_path, "terms", "--override", "noequals")[0] == 1


def test_config_file_is_applied(tmp_path):
    cfg = write_cfg(tmp_path, 'schema = 1\n[model]\nlam = 0.2\n[model.form_factor]\n'
                              'kind = "modes"\nfrequencies = [0.5, 1.5]\ncouplings = [0.4, 0.6]\n')
    code, out = run(tmp_path, "terms", "--config", cfg, *SMALL)
    assert code == 0
    meta, _ = read_csv(out / "terms.csv")
    assert json.loads(meta[0][10:])["model"]["form_factor"]["kind"] == "modes"


def test_certify_margins(tmp_path):
    code, out = run(tmp_path, "certify")
    assert code == 0
    doc = json.loads((out / "certify.json").read_text())
    assert doc["seed"] == 0 and doc["config"]["model"]["lam"] == 0.1
    names = [c["name"] for c in doc["criteria"]]
    assert any("thm4a" in n for n in names) and "eq4_12_divergence" in names
    for c in doc["criteria"]:
        if c["name"].startswith("thm4a"):
            assert c["satisfied"] == (c["margin"] > 0)


def test_certify_comparison_divergent_while_certified(tmp_path):
    # large beta with tiny coupling: the comparison series fails while thm4a is met
    code, out = run(tmp_path, "certify", "--override", "model.beta=2000.0",
                    "--override", "model.lam=0.05",
                    "--override", 'model.form_factor={kind="power_law",amplitude=0.05,exponent=0.0,cutoff=1.0}')
    assert code == 0
    crit = {c["name"]: c for c in json.loads((out / "certify.json").read_text())["criteria"]}
    thm = next(v for k, v in crit.items() if k.startswith("thm4a"))
    bem = next(v for k, v in crit.items() if "bem3d" in k)
    assert thm["satisfied"] and bem["verdict"] == "NumericallyDivergent"


def test_certify_witness_present(tmp_path):
    _, out = run(tmp_path, "certify", "--override", "model.lam=5.0")
    crit = {c["name"]: c for c in json.loads((out / "certify.json").read_text())["criteria"]}
    w = crit["eq4_12_divergence"]
    assert w["satisfied"] and w["witness"]["lam_star"] == pytest.approx(w["lam_star"])


def test_bounds_default_all_pass(tmp_path):
    code, out = run(tmp_path, "bounds")
    doc = json.loads((out / "bounds.json").read_text())
    assert code == 0 and doc["all_pass"]
    failing = [c["name"] for c in doc["checks"] if not c["holds"] and not c["flagged"]]
    assert failing == []
    # the unhalved lower bound exceeds J and is reported as flagged
    assert any(c["flagged"] and not c["holds"] for c in doc["checks"])


def test_bounds_with_trace_method(tmp_path):
    code, out = run(tmp_path, "bounds", "--override", 'compute.j_method="trace"')
    assert code == 0 and json.loads((out / "bounds.json").read_text())["all_pass"]


def test_oracle_three_way(tmp_path):
    code, out = run(tmp_path, "oracle", "--samples", "60000", "--override", "compute.modes=6",
                    "--override", "compute.oracle_upto=1")
    assert code == 0
    doc = json.loads((out / "oracle.json").read_text())
    assert all(w["max_rel_dev"] < 1e-5 for w in doc["wick"])
    [row] = doc["h2n"]
    assert all(p["agree"] for p in row["pairs"].values())


def test_scan_monotone_boundary(tmp_path):
    betas = [0.25 * 2**i for i in range(10)]
    lams = [0.05 * 1.5**i for i in range(10)]
    code, out = run(tmp_path, "scan", "--override", f"scan.betas={betas}", "--override", f"scan.lams={lams}")
    assert code == 0
    _, rows = read_csv(out / "scan.csv")
    assert len(rows) == 100
    by_beta = {}
    for r in rows:
        by_beta.setdefault(float(r["beta"]), []).append((float(r["lam"]), r["thm4a_satisfied"] == "true"))
    for pts in by_beta.values():
        flags = [s for _, s in sorted(pts)]
        # once certification is lost it never returns at larger |lam|
        assert flags == sorted(flags, reverse=True)
    assert any(r["thm4a_satisfied"] == "true" for r in rows)
    assert any(r["thm4a_satisfied"] == "false" for r in rows)


def test_guard_exit_code(tmp_path, capsys):
    code, _ = run(tmp_path, "oracle", "--override", "compute.d_el=9000", "--override", "compute.modes=1")
    assert code == cli.EXIT_GUARD
    assert "guard" in capsys.readouterr().err


def test_direct_order_guard(tmp_path):
    code, _ = run(tmp_path, "terms", "--max-n", "6", "--override", "compute.direct_upto=6", "--samples", "100")
    assert code == cli.EXIT_GUARD


def test_prefix(tmp_path):
    _, out = run(tmp_path, "certify", "--override", 'output.prefix="x_"')
    assert (out / "x_certify.json").exists()


def test_fmt_float_roundtrip():
    for x in (math.pi, 1e-300, -2.5e17, 0.1):
        assert float(cli.fmt_float(x)) == x
    assert cli.fmt_float(float("inf")) == "inf"
