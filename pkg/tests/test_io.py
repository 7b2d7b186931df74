import numpy as np
import pytest

from mcfsurgery.geometry import make_sphere_mesh
from mcfsurgery.io import (
    TIMESERIES_HEADER,
    RunConfig,
    RunLog,
    TimeSeriesRecord,
    load_config,
    read_snapshot,
    read_timeseries,
    write_snapshot,
    write_timeseries,
)


def test_snapshot_roundtrip(tmp_path):
    mesh = make_sphere_mesh(1.0, 1)
    nu = mesh.positions / np.linalg.norm(mesh.positions, axis=1, keepdims=True)
    h = np.linspace(1, 2, mesh.n_nodes) / 3
    v = -h[:, None] * nu
    path = tmp_path / "s.vtk"
    write_snapshot(mesh, nu, h, v, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0" and lines[2] == "ASCII"
    assert lines[3] == "DATASET UNSTRUCTURED_GRID"
    data = read_snapshot(path)
    assert np.array_equal(data["points"], mesh.positions)
    assert np.array_equal(data["cells"], mesh.elements)
    assert set(data["cell_types"]) == {22}
    assert np.array_equal(data["H"], h) and np.array_equal(data["nu"], nu) and np.array_equal(data["v"], v)
    assert f"CELLS {mesh.n_elements} {7 * mesh.n_elements}" in lines


def test_timeseries_roundtrip_and_header(tmp_path):
    recs = [TimeSeriesRecord(i, 0.1 * i, 2.0 + i, 1, 10, 4, int(i == 2)) for i in range(4)]
    path = tmp_path / "ts.csv"
    write_timeseries(recs, path)
    assert path.read_text().splitlines()[0] == ",".join(TIMESERIES_HEADER)
    back = read_timeseries(path)
    assert [r.step for r in back] == [0, 1, 2, 3] and back[2].surgery == 1
    assert np.allclose([r.time for r in back], [0.0, 0.1, 0.2, 0.3])


def test_empty_timeseries(tmp_path):
    path = tmp_path / "ts.csv"
    write_timeseries([], path)
    assert path.read_text() == ",".join(TIMESERIES_HEADER) + "\n"
    assert read_timeseries(path) == []


def test_load_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nsurface = dumbbell\ntau = 1e-5  # step\nq = 3\nend_time = none\nH2 = 50\nH3=80\n")
    cfg = load_config(path, {"tau": 2e-5, "out": None})
    assert cfg.surface == "dumbbell" and cfg.tau == 2e-5 and cfg.q == 3 and cfg.end_time is None
    assert cfg.H2 == 50.0 and cfg.H3 == 80.0 and isinstance(cfg.q, int)


def test_config_roundtrip(tmp_path):
    cfg = RunConfig(surface="torus_sphere", tau=5e-5, target_h=0.35, end_time=2.0, max_steps=7)
    path = tmp_path / "c.cfg"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg


@pytest.mark.parametrize("text", ["bogus = 1\n", "tau 1e-4\n", "H2 = 300\nH3 = 200\n", "tau = -1\n", "q = 6\n"])
def test_bad_configs(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises((KeyError, ValueError)):
        load_config(path)


def test_run_log(tmp_path):
    log = RunLog(tmp_path / "run.log")
    log.write("a: 1")
    log.write("b: 2\n")
    assert (tmp_path / "run.log").read_text() == "a: 1\nb: 2\n"
