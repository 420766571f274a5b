import dataclasses
import math

import meshio
import numpy as np
import pytest

from fosls.fespace import LagrangeSpace, p1_gradients
from fosls.harness import cli
from fosls.harness import experiments as ex
from fosls.harness.config import ConfigError, ExperimentConfig, load_config, parse_levels
from fosls.harness.io import export_csv, export_vtk, read_csv, write_manifest
from fosls.linalg import SolverError
from fosls.mesh import EdgeTag, Mesh
from fosls.problems import builtin


# ------------------------------------------------------------------ config
@pytest.mark.parametrize(
    "text, expected",
    [("3-6", (3, 4, 5, 6)), ("2,3,5", (2, 3, 5)), ("5, 1-2", (1, 2, 5)), ("4", (4,)), ("3,3", (3,))],
)
def test_parse_levels(text, expected):
    assert parse_levels(text) == expected


@pytest.mark.parametrize("text", ["", "a", "5-3", "-1", "2-x"])
def test_parse_levels_rejects(text):
    with pytest.raises(ConfigError):
        parse_levels(text)


def write_ini(tmp_path, body):
    path = tmp_path / "run.ini"
    path.write_text(body)
    return path


def test_defaults_are_valid():
    cfg = load_config()
    assert cfg == ExperimentConfig().validate()
    assert cfg.formulation == "M" and cfg.levels == (2, 3, 4, 5)


def test_precedence(tmp_path):
    path = write_ini(
        tmp_path,
        "[experiment]\nproblem = helmholtz_indefinite\nformulation = l\nlevels = 2-3\ntheta = 0.3\n\n[problem]\nc = -20\n",
    )
    cfg = load_config(path)
    assert (cfg.problem, cfg.formulation, cfg.levels, cfg.theta) == ("helmholtz_indefinite", "L", (2, 3), 0.3)
    assert cfg.problem_args == {"c": -20}
    assert cfg.make_problem().c(np.zeros((1, 2)))[0] == -20
    cfg = load_config(path, {"levels": "4", "theta": None, "formulation": "J"})
    assert cfg.levels == (4,) and cfg.theta == 0.3 and cfg.formulation == "J"


@pytest.mark.parametrize(
    "body",
    [
        "[experiment]\nlevles = 2\n",
        "[solver]\ntol = 1e-8\n",
        "[experiment]\ntheta = 0\n",
        "[experiment]\ntheta = lots\n",
        "[experiment]\nformulation = K\n",
        "[experiment]\nproblem = nonsense\n",
        "[experiment]\ntol = 2\n",
        "[experiment]\nspectral = maybe\n",
        "[problem]\nwidth = 3\n",
        "not an ini file",
    ],
)
def test_bad_files_rejected(tmp_path, body):
    with pytest.raises(ConfigError):
        load_config(write_ini(tmp_path, body))


def test_missing_file_and_unknown_override(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.ini")
    with pytest.raises(ConfigError):
        load_config(None, {"colour": "red"})


# ---------------------------------------------------------------------- io
@dataclasses.dataclass
class Row:
    level: int
    value: float
    note: float = None


def test_empty_csv_is_header_only(tmp_path):
    path = export_csv([], tmp_path / "t.csv", header=[f.name for f in dataclasses.fields(ex.ConvergenceRow)])
    text = path.read_text()
    assert text.count("\n") == 1 and text.startswith("level,h_max,dofs,triple_norm_error,rate,")
    with pytest.raises(ValueError):
        export_csv([], tmp_path / "u.csv")


def test_csv_round_trip_is_exact(tmp_path, rng):
    values = np.concatenate([rng.standard_normal(20) * 10.0 ** rng.integers(-20, 20, 20), [0.0, -0.0, math.pi]])
    rows = [Row(i, float(v)) for i, v in enumerate(values)] + [Row(99, math.inf), Row(100, math.nan)]
    header, back = read_csv(export_csv(rows, tmp_path / "t.csv"))
    assert header == ["level", "value", "note"]
    for row, rec in zip(rows, back):
        assert rec[0] == row.level
        assert rec[1] == pytest.approx(row.value, rel=1e-12, nan_ok=True)
        assert math.isnan(rec[2])
    # the formatted text itself is reproduced exactly
    again = export_csv([Row(int(a), b) for a, b, _ in back], tmp_path / "again.csv")
    assert again.read_text() == (tmp_path / "t.csv").read_text()


def test_csv_error_carries_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="file"):
        export_csv([Row(1, 1.0)], blocker / "sub" / "t.csv")


def two_triangles():
    return Mesh.from_triangles([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]], default_tag=EdgeTag.DIRICHLET)


def test_vtk_read_by_meshio(tmp_path):
    mesh = two_triangles()
    path = export_vtk(mesh, tmp_path / "m.vtk", point_data={"u_h": np.zeros(4)}, cell_data={"eta": [0.5, 0.25]})
    m = meshio.read(path)
    np.testing.assert_allclose(m.points[:, :2], mesh.vertices)
    np.testing.assert_array_equal(m.cells_dict["triangle"], mesh.triangles)
    np.testing.assert_array_equal(m.point_data["u_h"], 0.0)
    np.testing.assert_array_equal(np.ravel(m.cell_data["eta"][0]), [0.5, 0.25])


def test_vtk_length_mismatch(tmp_path):
    with pytest.raises(ValueError, match="eta"):
        export_vtk(two_triangles(), tmp_path / "m.vtk", cell_data={"eta": [1.0]})


def test_manifest_records_versions(tmp_path):
    text = write_manifest(tmp_path / "m.txt", {"tol": 1e-10, "problem": "x"}, ["[summary]", "ok"]).read_text()
    assert "numpy" in text and "scipy" in text and "tol = 1e-10" in text and text.endswith("ok\n")


# ------------------------------------------------------------- experiments
def small_cfg(**kw):
    base = dict(levels=(1, 2, 3), trials=3)
    base.update(kw)
    return ExperimentConfig(**base).validate()


def test_convergence_rows():
    rows = ex.run_convergence(small_cfg(levels=(2, 3, 4)))
    assert [r.level for r in rows] == [2, 3, 4]
    assert math.isnan(rows[0].rate)
    for a, b in zip(rows, rows[1:]):
        assert b.rate == pytest.approx(math.log2(a.triple_norm_error / b.triple_norm_error))
        assert b.dofs > a.dofs and b.h_max == pytest.approx(a.h_max / 2)
    for r in rows:
        assert r.effectivity == pytest.approx(r.eta_global / r.triple_norm_error)
        assert 0 < r.lambda_min <= r.lambda_max
        assert r.quasi_best_ratio <= math.sqrt(r.lambda_max / r.lambda_min)


def test_convergence_exact_recovery():
    rows = ex.run_convergence(small_cfg(problem="hminus1_recovery", levels=(0,)))
    assert rows[0].triple_norm_error <= 1e-10


def test_probe_self_test_and_positivity():
    res = ex.run_coercivity_probe(small_cfg(self_test=True))
    for r in res.rows:
        assert r.lambda_min == pytest.approx(1.0, rel=1e-10) and r.lambda_max == pytest.approx(1.0, rel=1e-10)
    res = ex.run_coercivity_probe(small_cfg(problem="helmholtz_indefinite", formulation="L"))
    assert all(r.lambda_min > 0 and r.cg_converged for r in res.rows)
    lam = [r.lambda_min for r in res.rows]
    assert res.variation_min == pytest.approx((max(lam) - min(lam)) / min(lam))


def test_decomposition_galerkin_exactness(rng):
    # f = grad phi for a P1 function phi vanishing on the boundary gives w = phi and r = 0
    prob = builtin("poisson_sine")
    mesh = prob.make_mesh(2)
    phi = np.zeros(mesh.n_vertices)
    interior = LagrangeSpace(mesh).free_dofs
    phi[interior] = rng.standard_normal(interior.size)
    grads = np.einsum("tix,ti->tx", p1_gradients(mesh.coords), phi[mesh.triangles])

    def f(p):  # quadrature points arrive element by element
        return np.broadcast_to(grads[:, None, :], p.shape).copy()

    res = ex.decomposition_residual(prob, mesh, f=f)
    np.testing.assert_allclose(res.w, phi, atol=1e-12)
    assert np.abs(res.r).max() <= 1e-12
    assert res.residual_first <= 1e-12
    assert not res.z.any() and not res.s.any()


@pytest.mark.parametrize("name", ["convection_reaction", "helmholtz_indefinite"])
@pytest.mark.parametrize("formulation", ["L", "J"])
def test_decomposition_random_data(name, formulation):
    rows = ex.run_decomposition_check(small_cfg(problem=name, formulation=formulation, levels=(2,)))
    assert len(rows) == 3 and all(r.pairing == formulation for r in rows)
    assert max(max(r.residual_first, r.residual_second) for r in rows) <= 1e-10


def test_decomposition_bad_pairing():
    prob = builtin("poisson_sine")
    with pytest.raises(ValueError):
        ex.decomposition_residual(prob, prob.make_mesh(1), pairing="M")


def test_fit_exponent():
    dofs = np.array([10.0, 100.0, 1000.0])
    assert ex.fit_exponent(dofs, 3.0 * dofs**-0.5) == pytest.approx(-0.5)


def test_adaptive_smooth_matches_uniform():
    rep = ex.run_adaptive(small_cfg(levels=(2, 3, 4, 5, 6), max_dofs=6000, initial_level=2))
    assert rep.eta_strictly_decreasing
    assert abs(rep.adaptive_exponent - rep.uniform_exponent) <= 0.1


def test_identities_pass_on_small_mesh():
    rows = ex.run_identities(
        small_cfg(problem="convection_reaction", levels=(2,)),
        samples={"wv": 5, "ineq": 10, "chain": 10, "coerc": 20, "equiv": 20, "quad": 5},
    )
    failed = [r.check for r in rows if not r.passed]
    assert not failed


# --------------------------------------------------------------------- cli
def test_cli_probe(tmp_path, capsys):
    code = cli.main(["probe", "--levels", "1-2", "--formulation", "L", "--out-dir", str(tmp_path)])
    assert code == 0
    header, rows = read_csv(tmp_path / "probe.csv")
    assert header[:3] == ["level", "dofs", "lambda_min"] and len(rows) == 2
    manifest = (tmp_path / "manifest.txt").read_text()
    assert "command = probe" in manifest and "formulation = L" in manifest
    assert "lambda_min" in capsys.readouterr().out


def test_cli_converge_outputs(tmp_path):
    assert cli.main(["converge", "--levels", "2-3", "--out-dir", str(tmp_path)]) == 0
    mesh = meshio.read(tmp_path / "solution.vtk")
    assert set(mesh.cell_data) == {"eta", "sigma_magnitude"} and "u_h" in mesh.point_data


def test_cli_config_file(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text(f"[experiment]\nlevels = 1\ntrials = 2\nout_dir = {tmp_path / 'out'}\n")
    assert cli.main(["decompose", "--config", str(ini)]) == 0
    assert len(read_csv(tmp_path / "out" / "decomposition.csv")[1]) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["probe", "--problem", "nonsense"],
        ["probe", "--theta", "2"],
        ["frobnicate"],
        ["probe", "--levels", "x"],
        ["probe", "--config", "/nonexistent/file.ini"],
    ],
)
def test_cli_config_errors(argv, tmp_path, capsys):
    assert cli.main(argv + ["--out-dir", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_solver_failure(tmp_path, monkeypatch, capsys):
    def broken(cfg, problem=None):
        raise SolverError("CG did not converge")

    monkeypatch.setattr(ex, "run_coercivity_probe", broken)
    assert cli.main(["probe", "--out-dir", str(tmp_path)]) == 1
    assert "solver failure" in capsys.readouterr().err


def test_identical_runs_give_identical_files(tmp_path):
    for sub in ("a", "b"):
        assert cli.main(["converge", "--levels", "1-2", "--seed", "3", "--out-dir", str(tmp_path / sub)]) == 0
        assert cli.main(["decompose", "--levels", "1", "--seed", "3", "--out-dir", str(tmp_path / sub)]) == 0
    for name in ("convergence.csv", "decomposition.csv", "solution.vtk"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
