import json
import subprocess
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from gregsolid.cli import main, parse_grid
from gregsolid.domain import build_domain, generate_parametric_grid
from gregsolid.errors import IngestionError
from gregsolid.gregory import GregorySolid, map_grid
from gregsolid.modelio import dumps_model, load_model, model_from_dict, save_model, synth_model
from gregsolid.quality import jacobian_vector
from gregsolid.report import dumps_report, load_report, save_report
from gregsolid.vtk import export_vtk, vertex_min_jacobian, vtk_text

DATA = Path(__file__).parent / "data"
UNIT = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], float)


def test_cube_identity_fixture():
    m = load_model(DATA / "cube_identity.json")
    assert m.domain.name == "hexahedron"
    assert len(m.patches) == 6
    assert m.metadata["name"] == "cube_identity"
    rng = np.random.default_rng(0)
    for p in m.patches:
        q = rng.dirichlet(np.ones(4), 50) @ m.domain.corners[list(m.domain.faces[p.face])]
        np.testing.assert_allclose(p(q), q, atol=1e-14)


def test_missing_face_named(tmp_path):
    data = json.loads((DATA / "cube_identity.json").read_text())
    del data["patches"][3]
    with pytest.raises(IngestionError, match="face 3"):
        model_from_dict(data)


def test_bad_files(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(IngestionError, match="invalid JSON"):
        load_model(p)
    with pytest.raises(IngestionError):
        load_model(tmp_path / "missing.json")
    with pytest.raises(IngestionError, match="unknown domain"):
        model_from_dict({"format": "gregsolid-model", "version": 1, "domain": "dodecahedron", "patches": []})


@pytest.mark.parametrize("kind,mag", [("cube", 0.0), ("twisted_prism", 1.2), ("bulged_pentaprism", 0.3)])
def test_model_save_load_byte_stable(tmp_path, kind, mag):
    m = synth_model(kind, mag, resolution=6)
    a = tmp_path / "a.json"
    save_model(m, a)
    again = load_model(a)
    assert dumps_model(again) == a.read_text()
    for p, q in zip(m.patches, again.patches):
        for key, val in p.descriptor().items():
            assert np.array_equal(np.asarray(val), np.asarray(q.descriptor()[key]))


def test_synth_validation():
    with pytest.raises(ValueError):
        synth_model("cube", -1.0)
    with pytest.raises(ValueError):
        synth_model("torus")


def test_twisted_prism_zero_is_regular():
    m = synth_model("twisted_prism", 0.0)
    s = GregorySolid.from_patches(m.domain, m.patches)
    mesh = map_grid(s, generate_parametric_grid(m.domain, 8, 8, 8))
    assert jacobian_vector(mesh).values.min() > 0


def test_vtk_single_cell():
    mesh = SimpleNamespace(points=UNIT, cells=np.arange(8)[None])
    text = vtk_text(mesh)
    lines = text.splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert "DATASET UNSTRUCTURED_GRID" in lines
    assert "POINTS 8 double" in lines
    assert "CELLS 1 9" in lines
    i = lines.index("CELL_TYPES 1")
    assert lines[i + 1] == "12"
    j = lines.index("LOOKUP_TABLE default")
    assert lines[j - 1] == "SCALARS scaled_jacobian double 1"
    assert [float(v) for v in lines[j + 1 :]] == [1.0] * 8


def test_vtk_golden_file(tmp_path):
    grid = generate_parametric_grid(build_domain("hexahedron"), 1, 1, 1)
    out = tmp_path / "g.vtk"
    export_vtk(grid, jacobian_vector(grid), out)
    assert out.read_bytes() == (DATA / "hexahedron_1x1x1.vtk").read_bytes()


def test_vtk_readable_by_meshio(tmp_path):
    meshio = pytest.importorskip("meshio")
    m = load_model(DATA / "cube_identity.json")
    mesh = map_grid(GregorySolid.from_patches(m.domain, m.patches), generate_parametric_grid(m.domain, 2, 2, 2))
    out = tmp_path / "c.vtk"
    export_vtk(mesh, None, out)
    r = meshio.read(out)
    np.testing.assert_array_equal(r.points, mesh.points)
    np.testing.assert_array_equal(r.cells_dict["hexahedron"], mesh.cells)
    np.testing.assert_array_equal(r.point_data["scaled_jacobian"].ravel(), vertex_min_jacobian(mesh, jacobian_vector(mesh)))


def test_vertex_min_jacobian():
    pts = np.concatenate([UNIT, UNIT * [-1, 1, 1] + [3, 0, 0]])
    mesh = SimpleNamespace(points=pts, cells=np.arange(16).reshape(2, 8))
    v = vertex_min_jacobian(mesh, jacobian_vector(mesh))
    np.testing.assert_allclose(v, [1.0] * 8 + [-1.0] * 8)
    with pytest.raises(ValueError):
        vertex_min_jacobian(SimpleNamespace(points=pts, cells=np.arange(8)[None]), jacobian_vector(mesh))


def test_parse_grid():
    assert parse_grid("4x5x6") == (4, 5, 6)
    for bad in ("4x4", "0x1x1", "axbxc"):
        with pytest.raises(Exception):
            parse_grid(bad)


def test_cli_synth_build_report(tmp_path, capsys):
    model = tmp_path / "cube.json"
    assert main(["synth", "cube", "-o", str(model)]) == 0
    vtk, rep = tmp_path / "c.vtk", tmp_path / "r.json"
    assert main(["build", str(model), "--grid", "4x4x4", "-o", str(vtk), "--report", str(rep)]) == 0
    r = load_report(rep)
    q = r["quality"]
    assert q["min_J"] > 0 and q["grid"] == "4x4x4" and q["boundary_patches"] == 6
    assert {"avg_J", "min_J", "max_J", "neg_volume_ratio", "time_s"} <= set(q)
    assert vtk.read_text().startswith("# vtk DataFile Version 3.0\n")
    # report files are byte-stable through load/save
    again = tmp_path / "r2.json"
    save_report(load_report(rep), again)
    assert again.read_bytes() == rep.read_bytes()
    capsys.readouterr()
    assert main(["report", str(model), "--grid", "1x1x1"]) == 0
    assert json.loads(capsys.readouterr().out)["quality"]["n_negative"] == 0


def test_cli_exit_codes(tmp_path, monkeypatch):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "gregsolid-model"}')
    assert main(["build", str(bad), "--grid", "2x2x2"]) == 2
    assert main(["build", str(tmp_path / "nope.json"), "--grid", "2x2x2"]) == 2
    assert main(["build", str(bad), "--grid", "2x2"]) == 1
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert main(["synth", "cube", "--magnitude", "-1", "-o", str(tmp_path / "m.json")]) == 1
    monkeypatch.setenv("GREGSOLID_THREADS", "many")
    assert main(["synth", "cube", "-o", str(tmp_path / "m.json")]) == 1


def test_cli_numeric_failure_exit_code(tmp_path, monkeypatch):
    import gregsolid.cli as cli
    from gregsolid.errors import NumericError

    def boom(*a, **k):
        raise NumericError("objective is not finite")

    model = tmp_path / "cube.json"
    main(["synth", "cube", "-o", str(model)])
    monkeypatch.setattr(cli, "admm_solve", boom)
    assert main(["optimize", str(model), "--grid", "1x1x1"]) == 3


def test_cli_optimize(tmp_path):
    model = tmp_path / "tw.json"
    assert main(["synth", "twisted_prism", "--magnitude", "1.2", "-o", str(model)]) == 0
    rep = tmp_path / "r.json"
    vtk = tmp_path / "o.vtk"
    code = main(["optimize", str(model), "--grid", "2x2x2", "--max-iters", "3", "--report", str(rep), "-o", str(vtk)])
    assert code == 0
    r = load_report(rep)
    o = r["optimization"]
    assert o["weights"] == {"mu": 1e-5, "nu": 0.1, "rho": 1.0, "epsilon": 1e-5}
    assert o["final"]["E_sparse_l0"] <= o["initial"]["E_sparse_l0"]
    assert o["final"]["objective"] <= o["initial"]["objective"] + 1e-9
    assert 1 <= len(o["history"]) <= 3
    assert [h["iteration"] for h in o["history"]] == list(range(1, len(o["history"]) + 1))
    assert "initial_quality" in r
    assert dumps_report(r) == rep.read_text()


def test_cli_stdin_pipeline(tmp_path):
    synth = subprocess.run([sys.executable, "-m", "gregsolid.cli", "synth", "cube"], capture_output=True, text=True, check=True)
    res = subprocess.run(
        [sys.executable, "-m", "gregsolid.cli", "build", "-", "--grid", "4x4x4"],
        input=synth.stdout,
        capture_output=True,
        text=True,
        env={"GREGSOLID_THREADS": "1", "PATH": ""},
    )
    assert res.returncode == 0, res.stderr
    assert json.loads(res.stdout)["quality"]["min_J"] > 0
