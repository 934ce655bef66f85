import json
import math
import os

import pytest

import tcfbsde


def test_laplace_exponent():
    assert tcfbsde.laplace_exponent(0.5, 1.0, 4.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        tcfbsde.laplace_exponent(0.5, 1.0, -1.0)


def test_inverse_path_is_monotone_and_deterministic():
    a = tcfbsde.inverse_path(0.7, seed=3)
    b = tcfbsde.inverse_path(0.7, seed=3)
    assert a == b
    assert a["E"][0] == 0.0
    assert all(x <= y for x, y in zip(a["E"], a["E"][1:]))
    assert a["E"][-1] <= a["passage_time"]


def test_model_names():
    assert {"linear_test", "quadratic_drift", "cash"} <= set(tcfbsde.model_names())


def test_config_defaults_and_strictness():
    cfg = tcfbsde.normalize_config({"ensemble": {"size": 7}})
    assert cfg["ensemble"]["size"] == 7
    assert cfg["schema"] == tcfbsde.CONFIG_SCHEMA
    with pytest.raises(ValueError, match="unknown key"):
        tcfbsde.normalize_config({"bogus": 1})


def test_simulate_checksums(tmp_path):
    out = tmp_path / "sim"
    res = tcfbsde.simulate({"ensemble": {"size": 3}, "output": str(out)})
    manifest = json.loads(open(res["manifest"]).read())
    assert len(manifest["paths"]) == 3
    for entry in manifest["paths"]:
        for rel, digest in entry["files"].items():
            assert tcfbsde.fnv1a_hex((out / rel).read_bytes()) == digest
    assert math.isfinite(res["mean_passage"])


def test_verify_duality_and_fault(tmp_path):
    base = {"ensemble": {"size": 2}, "checks": {"duality": True}}
    status, report = tcfbsde.verify({**base, "output": str(tmp_path / "ok")})
    assert status == 0 and report["checks"][0]["passed"]
    status, _ = tcfbsde.verify({**base, "output": str(tmp_path / "bad"), "verify": {"inject_fault": True}})
    assert status != 0


def test_cash_adjoints_closed_form():
    path = tcfbsde.cash_adjoint_path({"mu1": 1.0}, seed=2)
    assert path["p"][0] == 1.0
    assert path["q"][-1] == pytest.approx(-path["p"][-1])
    assert path["first_order_residual"] <= 1e-8 + 5 * 1e-2
    with pytest.raises(ValueError):
        tcfbsde.cash_adjoint_path({"nope": 1.0})


def test_cash_demo_gaps(tmp_path):
    report = tcfbsde.cash_demo(
        {"model": {"name": "cash"}, "ensemble": {"size": 20}, "output": str(tmp_path / "demo")}
    )
    gaps = {row["label"]: row["gap"] for row in report["gap_table"]}
    assert gaps["u*+0.2"] > gaps["u*+0.1"] > 0


@pytest.mark.skipif("TCFBSDE_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_matches_library(tmp_path):
    import subprocess

    cli = os.environ["TCFBSDE_CLI"]
    subprocess.run([cli, "simulate", "--ensemble", "2", "--out", str(tmp_path / "cli")], check=True,
                   capture_output=True)
    tcfbsde.simulate({"ensemble": {"size": 2}, "output": str(tmp_path / "lib")})
    assert (tmp_path / "cli" / "manifest.json").read_bytes() == (tmp_path / "lib" / "manifest.json").read_bytes()
