import json
import math
import os
import subprocess
import tempfile

import pytest

fpp = pytest.importorskip("forward_fbsde")


def test_flat_lambda():
    out = fpp.solve_ergodic(theta_scale=0.2, theta_kind="constant", rho=0.5, nodes=601)
    assert abs(out["lambda"] + 0.02) < 1e-8
    assert max(abs(y) for y in out["y"]) < 1e-8


def test_tanh_lambda_negative_and_methods_agree():
    ode = fpp.solve_ergodic(theta_scale=0.3, theta_kind="tanh", rho=0.5, nodes=601)
    assert ode["lambda"] < 0.0
    vd = fpp.solve_ergodic(
        theta_scale=0.3, theta_kind="tanh", rho=0.5, nodes=601,
        method="vanishing-discount-mc", seed=7,
    )
    assert abs(ode["lambda"] - vd["lambda"]) < 2e-3


def test_exponential_primal_entropic_link():
    out = fpp.exponential_primal(
        theta_scale=0.0, theta_kind="zero", rho=0.0, gamma=1.0,
        payoff_scale=0.5, T=1.0, pde_steps=400, v_nodes=601,
    )
    # theta = 0, rho = 0: Y0 is the entropic certainty equivalent, negative
    # for a symmetric payoff under a concave utility
    assert -0.2 < out["Y0"] < 0.0
    assert out["lambda"] == pytest.approx(0.0, abs=1e-10)


def test_static_oce_constant_and_shift():
    assert fpp.static_oce([0.8] * 32, gamma=1.0) == pytest.approx(0.8, abs=1e-7)
    base = fpp.static_oce([0.1, -0.4, 0.3, 0.9], gamma=1.0)
    shifted = fpp.static_oce([x + 0.25 for x in [0.1, -0.4, 0.3, 0.9]], gamma=1.0)
    assert shifted - base == pytest.approx(0.25, abs=1e-7)


def test_forward_oce_dual_gap():
    rep = fpp.forward_oce(theta_scale=0.3, theta_kind="tanh", rho=0.5, payoff_scale=0.5)
    assert rep["dual_gap"] < 5e-3 + 1e-2  # generous smoke tolerance
    assert rep["normalized"] == pytest.approx(rep["value"] - (rep["value"] - rep["normalized"]))


def test_run_scenario_roundtrip():
    cfg = json.loads(fpp.bundled_scenario("flat-theta-entropic"))
    cfg["numerics"]["n_paths"] = 2000
    cfg["numerics"]["v_grid"]["nodes"] = 401
    cfg["numerics"]["pde_time_steps"] = 200
    cfg["task"]["operations"] = ["ergodic", "primal"]
    with tempfile.TemporaryDirectory() as d:
        res = fpp.run_scenario(json.dumps(cfg), out_dir=d)
        assert res["exit_code"] == 0
        summary = json.loads(res["summary"])
        assert summary["ergodic"]["lambda"] == pytest.approx(-0.02, abs=1e-8)
        assert os.path.exists(os.path.join(d, "summary.json"))


def test_cli_binary_if_available():
    cli = os.environ.get("FPP_CLI")
    if not cli or not os.path.exists(cli):
        pytest.skip("FPP_CLI not set")
    proc = subprocess.run([cli, "scenarios"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "tanh-factor-oce" in proc.stdout
