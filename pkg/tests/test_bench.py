import csv
import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from ufem.bench.problems import PROBLEMS, X_STAR, get_problem, lens_solution, modeling_sigma, patch_problem
from ufem.bench.run import ConfigError, RunConfig, dump_config, parse_config, run
from ufem.bench.study import fit_slope
from ufem.cli import main
from ufem.estimator import AdaptiveSolver, NotFittedError


# ---------------------------------------------------------------------------
# problem definitions
# ---------------------------------------------------------------------------

def laplacian(u, x, y, h=1e-3):
    return (u(x + h, y) + u(x - h, y) + u(x, y + h) + u(x, y - h) - 4 * u(x, y)) / h ** 2


@pytest.mark.parametrize("name", ["ex1_u1", "ex1_u2"])
def test_lens_problems_solve_their_pde(name):
    pr = get_problem(name)
    rng = np.random.default_rng(1)
    x, y = rng.uniform(-0.3, 0.3, (2, 30))
    u, grad = pr.exact
    # -lap u = f away from the corners (fourth-order difference error ~ h^2)
    np.testing.assert_allclose(-laplacian(u, x, y), pr.f(x, y), atol=2e-3 * (1 + np.abs(pr.f(x, y)).max()))
    h = 1e-6
    gx, gy = grad(x, y)
    np.testing.assert_allclose(gx, (u(x + h, y) - u(x - h, y)) / (2 * h), atol=1e-6)
    np.testing.assert_allclose(gy, (u(x, y + h) - u(x, y - h)) / (2 * h), atol=1e-6)


def test_lens_solution_is_real_part_of_root():
    u, _ = lens_solution(0.0)
    z = 0.3 + 0.2j
    assert u(0.3, 0.2) == pytest.approx((np.sqrt(z * z + 0.75)).real / math.sqrt(2))


def test_patch_flux_is_continuous():
    pr = patch_problem()
    u, grad = pr.exact
    a = pr.domain.coefficients
    gl, _ = grad(0.3 - 1e-9, 0.5)
    gr, _ = grad(0.3 + 1e-9, 0.5)
    assert a[1] * gl == pytest.approx(a[2] * gr)
    assert u(0.3 - 1e-12, 0.4) == pytest.approx(u(0.3 + 1e-12, 0.4))


def test_problem_registry():
    for name in PROBLEMS:
        assert get_problem(name).name == name
    assert get_problem("ex3_eps0.001").name == "ex3_eps0.001"
    with pytest.raises(KeyError):
        get_problem("nope")


def test_sharp_domain_inside_rounded_ones():
    sharp = get_problem("ex3").domain
    rng = np.random.default_rng(2)
    pts = rng.uniform(-2, 2, (400, 2))
    inside = [p for p in pts if sharp.label(*p) != 0]
    for eps in (1e-2, 1e-3):
        dom = get_problem(f"ex3_eps{eps:g}").domain
        assert all(dom.label(*p) != 0 for p in inside)
    assert sharp.label(*X_STAR) != 0


def test_modeling_sigma():
    theta = 2 * math.pi - 2 * math.atan(math.sqrt(0.3))
    lam = math.pi / theta
    # the gradient ~ r^(lam-1) is in L^q for q < 2/(1-lam); sigma = 1/2 - 1/q
    assert modeling_sigma() == pytest.approx(0.5 - (1 - lam) / 2, rel=1e-12)
    assert round(modeling_sigma(), 3) == 0.297


def test_fit_slope_recovers_power():
    eps = np.array([1e-2, 1e-3, 1e-4])
    vals = 3.0 * (eps * np.log(1 / eps)) ** 0.4
    assert fit_slope(eps, vals) == pytest.approx(0.4, abs=1e-12)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_parse_config_and_overrides():
    cfg = parse_config("problem = patch_test  # comment\np = 2\nmax-dofs = 500\ndelta0 = none\n", tol=0.5)
    assert (cfg.problem, cfg.p, cfg.max_dofs, cfg.delta0, cfg.tol) == ("patch_test", 2, 500, None, 0.5)
    assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("text", ["colour = red", "p = 1\np = 2", "p 2", "p = two", "gamma = 1.5",
                                  "problem = nope", "eta0 = 0.7"])
def test_parse_config_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_run_writes_artifacts(tmp_path):
    cfg = RunConfig(problem="patch_test", p=2, tol=1e-3, max_iter=2, out=str(tmp_path / "a"))
    summary = run(cfg)
    assert summary["dg_error"] <= 1e-10
    out = tmp_path / "a"
    rows = list(csv.DictReader((out / "iterations.csv").open()))
    assert len(rows) == summary["iterations"] and int(rows[-1]["dofs"]) == summary["dofs"]
    assert json.loads((out / "summary.json").read_text())["problem"] == "patch_test"
    assert parse_config((out / "config.txt").read_text()).p == 2
    svgs = sorted(out.glob("mesh_*.svg"))
    assert svgs and svgs[-1].read_text().lstrip().startswith("<svg")
    cfg.out = str(tmp_path / "b")
    run(cfg)
    assert (tmp_path / "b" / "iterations.csv").read_text() == (out / "iterations.csv").read_text()


def test_svg_has_one_rect_per_macro_and_one_polyline_per_curve():
    from ufem.merging import induce
    from ufem.mesh import uniform_mesh

    pr = get_problem("ex1_u1")
    ind = induce(uniform_mesh(pr.domain.box, 8), pr.domain)
    svg = ind.to_svg()
    assert svg.count("<polyline") == len(pr.domain.curves)
    assert svg.count("<rect") >= len(ind)


# ---------------------------------------------------------------------------
# estimator wrapper
# ---------------------------------------------------------------------------

def test_estimator_params_roundtrip():
    est = AdaptiveSolver(p=2)
    assert est.get_params()["p"] == 2
    assert est.set_params(tol=0.1).tol == 0.1
    with pytest.raises(ValueError):
        est.set_params(bogus=1)
    assert repr(est).startswith("AdaptiveSolver(p=2")
    with pytest.raises(NotFittedError):
        est.predict([[0.5, 0.5]])
    with pytest.raises(ValueError):
        AdaptiveSolver(gamma=2).fit("patch_test")


def test_estimator_fit_predict_score():
    est = AdaptiveSolver(p=1, tol=1e-3, max_iter=2).fit("patch_test")
    u, grad = est.problem_.exact
    X = np.array([[0.1, 0.2], [0.7, 0.9], [0.5, 0.5]])
    np.testing.assert_allclose(est.predict(X), u(X[:, 0], X[:, 1]), atol=1e-10)
    np.testing.assert_allclose(est.transform(X), np.c_[grad(X[:, 0], X[:, 1])], atol=1e-9)
    assert -1e-10 <= est.score() <= 0
    with pytest.raises(ValueError):
        est.predict([0.1, 0.2])


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def test_cli_solve(tmp_path):
    r = CliRunner().invoke(main, ["solve", "--problem", "patch_test", "--p", "1", "--max-iter", "1",
                                  "--out", str(tmp_path), "--quiet"])
    assert r.exit_code == 0, r.output
    assert json.loads(r.output)["dofs"] > 0
    assert (tmp_path / "iterations.csv").exists()


def test_cli_solve_config_file(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("problem = patch_test\nmax_iter = 1\n")
    r = CliRunner().invoke(main, ["solve", "--config", str(conf), "--p", "2", "--out", str(tmp_path / "o"),
                                  "--quiet"])
    assert r.exit_code == 0, r.output
    assert json.loads(r.output)["p"] == 2


def test_cli_bad_config_reports_error(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("wobble = 3\n")
    r = CliRunner().invoke(main, ["solve", "--config", str(conf)])
    assert r.exit_code == 2
    assert "unknown key" in r.output


def test_cli_fuzz():
    r = CliRunner().invoke(main, ["fuzz", "--trials", "3", "--seed", "4"])
    assert r.exit_code == 0, r.output
    assert "3/3 trials valid" in r.output
