"""Mean curvature flow with surgery: the driver loop.

Flow with linearly implicit BDF steps until the maximal nodal mean curvature
exceeds ``H3``; then excise everything above ``H2``, cap the wounds, restart
the multistep history from the post-surgery surface and continue until the
end time or until every component has been removed.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MCFError, MeshError
from .fem import Assembler
from .flow import SolverOptions, bdf_coefficients, startup, step
from .geometry import (
    dumbbell_surface,
    initial_fields,
    load_seed,
    make_sphere_mesh,
    mesh_levelset,
    torus_sphere_surface,
)
from .io import RunConfig, RunLog, TimeSeriesRecord, write_snapshot, write_timeseries
from .mesh import SurfaceMesh, check_orientation, connected_components, min_edge_length, read_mesh, write_mesh
from .surgery import SurgeryReport, discrete_fields, perform_surgery

logger = logging.getLogger(__name__)


class StepSizeWarning(UserWarning):
    """The time step violates ``tau <= C0 h_min``."""


@dataclass
class RunSummary:
    status: str
    steps: int
    final_time: float
    extinction_time: float | None
    surgeries: list[SurgeryReport] = field(default_factory=list)
    records: list[TimeSeriesRecord] = field(default_factory=list)
    mesh: SurfaceMesh | None = None
    normals: np.ndarray | None = None
    curvature: np.ndarray | None = None

    @property
    def surgery_times(self) -> list[float]:
        return [r.time for r in self.surgeries]

    def to_text(self) -> str:
        ext = "none" if self.extinction_time is None else f"{self.extinction_time:.10g}"
        times = " ".join(f"{t:.10g}" for t in self.surgery_times)
        return (f"status: {self.status}\nsteps: {self.steps}\nfinal_time: {self.final_time:.10g}\n"
                f"extinction_time: {ext}\nsurgeries: {len(self.surgeries)}\nsurgery_times: {times}\n")


def initial_surface(config: RunConfig):
    """Initial mesh and fields ``(mesh, nu0, H0)`` selected by ``config.surface``.

    ``sphere`` (radius ``config.radius``, icosahedral ``config.level``),
    ``dumbbell`` and ``torus_sphere`` (shipped seed meshes, or remeshed to
    edge length ``config.target_h`` when given) or ``file:<path>`` (fields
    recovered from the discrete surface).
    """
    name = config.surface
    if name == "sphere":
        mesh = make_sphere_mesh(config.radius, config.level)
        nu = mesh.positions / np.linalg.norm(mesh.positions, axis=1, keepdims=True)
        return mesh, nu, np.full(mesh.n_nodes, 2.0 / config.radius)
    if name in ("dumbbell", "torus_sphere"):
        surface = dumbbell_surface() if name == "dumbbell" else torus_sphere_surface()
        mesh = load_seed(name)
        if config.target_h is not None:
            mesh = mesh_levelset(surface, mesh, target_edge=config.target_h)
        nu, h = initial_fields(surface, mesh.positions)
        return mesh, nu, h
    if name.startswith("file:"):
        mesh = read_mesh(name[5:])
        nu, h = discrete_fields(mesh)
        return mesh, nu, h
    raise ValueError(f"unknown surface {name!r}")


def _check_step_size(config: RunConfig, mesh: SurfaceMesh) -> None:
    h_min = min_edge_length(mesh)
    if config.tau > config.C0 * h_min:
        warnings.warn(f"tau = {config.tau:g} exceeds C0 h_min = {config.C0 * h_min:g}", StepSizeWarning, stacklevel=3)


def run(config: RunConfig, initial=None) -> RunSummary:
    """Run the flow with surgery; ``initial`` optionally overrides ``(mesh, nu, H)``."""
    config.validate()
    out = Path(config.out) if config.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "snapshots").mkdir(exist_ok=True)
        (out / "run.log").write_text("")
    log = RunLog(out / "run.log" if out else None)
    log.write("# configuration\n" + config.to_text())

    mesh, nu, H = initial if initial is not None else initial_surface(config)
    if not mesh.is_closed():
        raise MeshError("the initial surface must be closed")
    check_orientation(mesh)
    if np.any(H <= 0):
        logger.warning("initial mean curvature is not positive everywhere (min %.4g)", float(H.min()))
    _check_step_size(config, mesh)
    scheme = bdf_coefficients(config.q)
    options = SolverOptions(config.solver_tol, config.solver_max_iters)
    tau = config.tau
    records: list[TimeSeriesRecord] = []
    surgeries: list[SurgeryReport] = []
    n_components = len(connected_components(mesh))

    def record(step_no, time, curvature, m, surgery=0):
        records.append(TimeSeriesRecord(step_no, time, float(np.max(curvature)), n_components,
                                        m.n_nodes, m.n_elements, surgery))

    def snapshot(tag, m, normals, curvature, velocity):
        if out is not None:
            write_snapshot(m, normals, curvature, velocity, out / "snapshots" / f"{tag}.vtk")

    def finish(status, time, ext=None, m=None, normals=None, curvature=None):
        summary = RunSummary(status, n_step, time, ext, surgeries, records, m, normals, curvature)
        if out is not None:
            write_timeseries(records, out / "timeseries.csv")
            (out / "summary.txt").write_text(summary.to_text())
        log.write("# summary\n" + summary.to_text())
        return summary

    n_step = 0
    time = 0.0
    record(0, time, H, mesh)
    snapshot(f"step_{0:07d}", mesh, nu, H, -H[:, None] * nu)
    assembler = Assembler(mesh)

    def restart(m, normals, curvature, t0):
        nonlocal n_step
        hist = startup(m, normals, curvature, tau, config.q, time=t0, assembler=assembler, options=options)
        for state in list(hist.levels)[1:]:
            n_step += 1
            record(n_step, state.time, state.curvature, m)
        return hist

    try:
        history = restart(mesh, nu, H, time)
        while True:
            state = history.latest
            time = state.time
            if config.end_time is not None and time >= config.end_time - 1e-9 * tau:
                return finish("end_time", time, None, mesh.with_positions(state.positions), state.normals,
                              state.curvature)
            if config.max_steps is not None and n_step >= config.max_steps:
                return finish("max_steps", time, None, mesh.with_positions(state.positions), state.normals,
                              state.curvature)
            max_h = float(state.curvature.max())
            if max_h > config.H3:
                current = mesh.with_positions(state.positions)
                k = len(surgeries)
                records[-1].surgery = 1
                snapshot(f"surgery_{k:02d}_pre", current, state.normals, state.curvature, state.velocity)
                mesh, nu, H, report = perform_surgery(current, state.normals, state.curvature, config.H2, time,
                                                      slack=config.slack, patch_depth=config.patch_depth,
                                                      gap_factor=config.gap_factor)
                surgeries.append(report)
                log.write(f"# surgery {k}\n" + report.to_text())
                logger.info("surgery %d at t = %.6g: %d caps, %d components removed", k, time, report.caps,
                            report.extinct_components)
                if mesh.n_elements == 0:
                    return finish("extinct", time, time)
                n_components = report.components_after
                snapshot(f"surgery_{k:02d}_post", mesh, nu, H, -H[:, None] * nu)
                if out is not None:
                    write_mesh(mesh, out / "snapshots" / f"surgery_{k:02d}_post.mesh")
                _check_step_size(config, mesh)
                assembler = Assembler(mesh)
                history = restart(mesh, nu, H, time)
                continue
            if max_h > config.max_H_guard:
                return finish("guard", time, time, mesh.with_positions(state.positions), state.normals,
                              state.curvature)
            state = step(history, scheme, assembler, tau, options)
            n_step += 1
            record(n_step, state.time, state.curvature, mesh)
            if config.snapshot_every and n_step % config.snapshot_every == 0:
                snapshot(f"step_{n_step:07d}", mesh.with_positions(state.positions), state.normals,
                         state.curvature, state.velocity)
            if not np.all(np.isfinite(state.positions)):
                raise MCFError(f"non-finite positions at step {n_step}")
            pts = state.positions
            if np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)) < 10 * np.finfo(float).eps * max(1.0, np.abs(pts).max()):
                return finish("extinct", state.time, state.time, mesh.with_positions(pts), state.normals,
                              state.curvature)
    except MCFError as exc:
        log.write(f"# error at step {n_step}, t = {time:.10g}: {type(exc).__name__}: {exc}")
        if out is not None:
            write_timeseries(records, out / "timeseries.csv")
        raise
