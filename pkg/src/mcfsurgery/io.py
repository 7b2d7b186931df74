"""Run configuration, snapshots (legacy VTK), time series (CSV) and run logs."""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import SurfaceMesh

VTK_QUADRATIC_TRIANGLE = 22
TIMESERIES_HEADER = ["step", "time", "max_H", "components", "nodes", "elements", "surgery"]


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """All knobs of a run; see :func:`load_config` for the file format.

    ``end_time = None`` runs until the flow goes extinct (or ``max_steps``).
    ``snapshot_every = 0`` disables periodic snapshots (surgery pairs are
    always written when ``out`` is set).
    """

    surface: str = "sphere"
    radius: float = 1.0
    level: int = 4
    target_h: float | None = None
    q: int = 2
    tau: float = 1e-4
    H2: float = 100.0
    H3: float = 200.0
    end_time: float | None = None
    max_steps: int | None = None
    out: str | None = None
    snapshot_every: int = 100
    solver_tol: float = 1e-10
    solver_max_iters: int = 2000
    slack: float = 0.05
    C0: float = 1.0
    max_H_guard: float = 1e6
    patch_depth: int = 2
    gap_factor: float = 0.5

    def validate(self) -> "RunConfig":
        if not 0 < self.H2 < self.H3:
            raise ValueError(f"thresholds must satisfy 0 < H2 < H3, got H2={self.H2}, H3={self.H3}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 1 <= self.q <= 5:
            raise ValueError(f"BDF order must be in 1..5, got {self.q}")
        if self.end_time is not None and self.end_time < 0:
            raise ValueError("end_time must be non-negative")
        return self

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


def _convert(name: str, text: str):
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    if name not in fields:
        raise KeyError(f"unknown configuration key {name!r}")
    text = text.strip()
    default = getattr(RunConfig(), name)
    kind = str(fields[name].type)
    if text.lower() in ("none", "") and "None" in kind:
        return None
    if "int" in kind and "float" not in kind:
        return int(text)
    if "float" in kind:
        return float(text)
    if isinstance(default, str) or "str" in kind:
        return text
    return text


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Flat ``key = value`` text file (``#`` starts a comment) plus overrides."""
    values: dict = {}
    if path is not None:
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"malformed configuration line: {raw!r}")
            values[key.strip()] = _convert(key.strip(), value)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = _convert(key, str(value)) if isinstance(value, str) else value
    return RunConfig(**values).validate()


# ---------------------------------------------------------------------------
# snapshots


def write_snapshot(mesh: SurfaceMesh, normals, curvature, velocity, path, title: str = "mean curvature flow") -> None:
    """Legacy-VTK ASCII unstructured grid of 6-node quadratic triangles."""
    n, f = mesh.n_nodes, mesh.n_elements
    fmt = "%.17g"
    parts = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
        *(" ".join(fmt % c for c in p) for p in mesh.positions),
        f"CELLS {f} {7 * f}",
        *("6 " + " ".join(str(int(i)) for i in e) for e in mesh.elements),
        f"CELL_TYPES {f}",
        *([str(VTK_QUADRATIC_TRIANGLE)] * f),
        f"POINT_DATA {n}",
        "SCALARS H double 1",
        "LOOKUP_TABLE default",
        *(fmt % h for h in np.asarray(curvature)),
        "VECTORS nu double",
        *(" ".join(fmt % c for c in p) for p in np.asarray(normals)),
        "VECTORS v double",
        *(" ".join(fmt % c for c in p) for p in np.asarray(velocity)),
    ]
    Path(path).write_text("\n".join(parts) + "\n")


def read_snapshot(path) -> dict:
    """Parse a file written by :func:`write_snapshot` (points, cells, types, H, nu, v)."""
    tokens = Path(path).read_text().split("\n")
    out: dict = {}
    i = 0
    while i < len(tokens):
        line = tokens[i].split()
        if not line:
            i += 1
            continue
        key = line[0]
        if key == "POINTS":
            n = int(line[1])
            out["points"] = np.array([[float(c) for c in tokens[i + 1 + k].split()] for k in range(n)]).reshape(n, 3)
            i += n + 1
        elif key == "CELLS":
            f = int(line[1])
            out["cells"] = np.array([[int(c) for c in tokens[i + 1 + k].split()[1:]] for k in range(f)], dtype=np.int64)
            i += f + 1
        elif key == "CELL_TYPES":
            f = int(line[1])
            out["cell_types"] = np.array([int(tokens[i + 1 + k]) for k in range(f)])
            i += f + 1
        elif key == "SCALARS":
            n = len(out["points"])
            out[line[1]] = np.array([float(tokens[i + 2 + k]) for k in range(n)])
            i += n + 2
        elif key == "VECTORS":
            n = len(out["points"])
            out[line[1]] = np.array([[float(c) for c in tokens[i + 1 + k].split()] for k in range(n)]).reshape(n, 3)
            i += n + 1
        else:
            i += 1
    return out


# ---------------------------------------------------------------------------
# time series


@dataclass
class TimeSeriesRecord:
    step: int
    time: float
    max_H: float
    components: int
    nodes: int
    elements: int
    surgery: int = 0

    def row(self) -> list[str]:
        return [str(self.step), f"{self.time:.12g}", f"{self.max_H:.12g}", str(self.components),
                str(self.nodes), str(self.elements), str(self.surgery)]


def write_timeseries(records, path) -> None:
    """CSV with header ``step,time,max_H,components,nodes,elements,surgery``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TIMESERIES_HEADER)
        for rec in records:
            writer.writerow(rec.row())


def read_timeseries(path) -> list[TimeSeriesRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            TimeSeriesRecord(int(r["step"]), float(r["time"]), float(r["max_H"]), int(r["components"]),
                             int(r["nodes"]), int(r["elements"]), int(r["surgery"]))
            for r in reader
        ]


@dataclass
class RunLog:
    """Line-oriented text log; surgery reports are appended as key: value blocks."""

    path: Path | None = None
    lines: list[str] = field(default_factory=list)

    def write(self, text: str) -> None:
        text = text if text.endswith("\n") else text + "\n"
        self.lines.append(text)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(text)
