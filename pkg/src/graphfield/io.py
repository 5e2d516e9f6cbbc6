"""File formats: graph JSON, path JSON, observation CSV and run configuration.

Graph file::

    {"vertices": [[x, y], ...],
     "edges": [{"v": [i, j], "geometry": [[x, y], ...]}, ...],
     "covariate": {"kind": "mesh", "h": 0.06, "values": [...]},   # optional
     "crs": "EPSG:25832"}                                          # optional tag

``covariate.kind`` is ``"mesh"`` (one value per mesh vertex of the mesh
built with ``h``) or ``"edge"`` (one constant per edge).

Path file::

    {"paths": [{"id": "a", "intervals": [[edge, t_start, t_end], ...]},
               {"id": "b", "waypoints": {"start": [e, t], "via": [...], "end": [e, t]}},
               {"id": "c", "polyline": [[x, y], ...], "snap_tol": 0.01}]}

Observation CSV columns: ``type,edge,t,path_id,replicate,value`` with
``type`` either ``P`` (uses edge, t) or ``L`` (uses path_id).
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph import GraphLocation, MetricGraph, graph_from_parts
from .inference import Dataset, ModelSpec, Priors
from .mesh import Mesh
from .observe import LineObs, PointObs
from .paths import GraphPath, make_path, path_from_polyline, path_from_waypoints

OBS_COLUMNS = ("type", "edge", "t", "path_id", "replicate", "value")


class FormatError(ValueError):
    """Malformed or inconsistent input file."""


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# graphs


@dataclass
class GraphFile:
    graph: MetricGraph
    covariate: dict | None = None
    crs: str | None = None

    def covariate_on(self, mesh: Mesh) -> np.ndarray | None:
        """Covariate values at the vertices of ``mesh``."""
        c = self.covariate
        if c is None:
            return None
        vals = np.asarray(c["values"], dtype=float)
        if c["kind"] == "mesh":
            if vals.shape != (mesh.K,):
                raise FormatError(f"covariate has {vals.size} values but the mesh has K={mesh.K}")
            return vals
        if vals.shape != (self.graph.n_edges,):
            raise FormatError("edge covariate needs one value per edge")
        out = np.empty(mesh.K)
        for v, adj in enumerate(self.graph.adjacency):
            out[v] = np.mean([vals[e] for e, _ in adj])
        for e, nodes in enumerate(mesh.edge_nodes):
            out[nodes[1:-1]] = vals[e]
        return out


def graph_to_dict(graph: MetricGraph, covariate: dict | None = None, crs: str | None = None) -> dict:
    d = {
        "vertices": graph.vertices.tolist(),
        "edges": [{"v": [e.v_start, e.v_end], "geometry": e.geometry.tolist()} for e in graph.edges],
    }
    if covariate is not None:
        d["covariate"] = covariate
    if crs is not None:
        d["crs"] = crs
    return d


def graph_from_dict(d: dict) -> GraphFile:
    try:
        verts = d["vertices"]
        ends = [e["v"] for e in d["edges"]]
        geoms = [e["geometry"] for e in d["edges"]]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"graph file is missing a required field: {exc}") from exc
    graph = graph_from_parts(verts, ends, geoms)
    cov = d.get("covariate")
    if cov is not None:
        if cov.get("kind") not in ("mesh", "edge") or "values" not in cov:
            raise FormatError("covariate needs kind 'mesh' or 'edge' and values")
        if cov["kind"] == "mesh" and "h" not in cov:
            raise FormatError("mesh covariate needs the mesh spacing h")
    return GraphFile(graph, cov, d.get("crs"))


def read_graph(path) -> GraphFile:
    return graph_from_dict(_load_json(path))


def write_graph(path, graph: MetricGraph, covariate: dict | None = None, crs: str | None = None) -> None:
    Path(path).write_text(dumps_json(graph_to_dict(graph, covariate, crs)))


# ---------------------------------------------------------------------------
# paths


def paths_from_dict(graph: MetricGraph, d: dict) -> dict[str, GraphPath]:
    out = {}
    for k, p in enumerate(d.get("paths", [])):
        pid = str(p.get("id", k))
        if pid in out:
            raise FormatError(f"duplicate path id {pid!r}")
        if "intervals" in p:
            out[pid] = make_path(graph, p["intervals"])
        elif "waypoints" in p:
            w = p["waypoints"]
            out[pid] = path_from_waypoints(graph, GraphLocation(*w["start"]), w.get("via", []),
                                           GraphLocation(*w["end"]))
        elif "polyline" in p:
            out[pid] = path_from_polyline(graph, p["polyline"], p.get("snap_tol"))[0]
        else:
            raise FormatError(f"path {pid!r} needs intervals, waypoints or polyline")
    return out


def paths_to_dict(paths: dict[str, GraphPath]) -> dict:
    return {"paths": [{"id": k, "intervals": [list(iv) for iv in p.intervals]} for k, p in paths.items()]}


def read_paths(path, graph: MetricGraph) -> dict[str, GraphPath]:
    return paths_from_dict(graph, _load_json(path))


def write_paths(path, paths: dict[str, GraphPath]) -> None:
    Path(path).write_text(dumps_json(paths_to_dict(paths)))


# ---------------------------------------------------------------------------
# observations


def _fmt(v: float) -> str:
    return repr(float(v))


def obs_to_csv(points, lines, path_ids: dict) -> str:
    """``path_ids`` maps each ``GraphPath`` to its id in the path file."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OBS_COLUMNS)
    for o in points:
        w.writerow(["P", int(o.location[0]), _fmt(o.location[1]), "", int(o.replicate), _fmt(o.value)])
    for o in lines:
        w.writerow(["L", "", "", path_ids[o.path], int(o.replicate), _fmt(o.value)])
    return buf.getvalue()


def obs_from_csv(text: str, graph: MetricGraph, paths: dict[str, GraphPath]) -> Dataset:
    reader = csv.DictReader(_io.StringIO(text))
    if reader.fieldnames is None or tuple(reader.fieldnames) != OBS_COLUMNS:
        raise FormatError(f"observation header must be {','.join(OBS_COLUMNS)}")
    points, lines = [], []
    for n, row in enumerate(reader, start=2):
        try:
            rep = int(row["replicate"])
            val = float(row["value"])
            if rep < 0 or not math.isfinite(val):
                raise ValueError("bad replicate or value")
            if row["type"] == "P":
                loc = GraphLocation(int(row["edge"]), float(row["t"]))
                graph.check_location(loc)
                points.append(PointObs(loc, val, rep))
            elif row["type"] == "L":
                if row["path_id"] not in paths:
                    raise ValueError(f"unknown path id {row['path_id']!r}")
                lines.append(LineObs(paths[row["path_id"]], val, rep))
            else:
                raise ValueError(f"unknown row type {row['type']!r}")
        except (ValueError, TypeError, KeyError) as exc:
            raise FormatError(f"observation row {n}: {exc}") from exc
    if not points and not lines:
        raise FormatError("no observations")
    return Dataset(points, lines)


def read_obs(path, graph: MetricGraph, paths: dict[str, GraphPath]) -> Dataset:
    return obs_from_csv(Path(path).read_text(), graph, paths)


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Model and fitting options; JSON keys mirror the field names."""

    h: float = 0.06
    model: str = "IM"
    link: str = "identity"
    line_scale: str = "inverse_sq"
    line_average: bool | None = None
    priors: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    seed: int = 0

    _OPT_KEYS = ("fd_step", "gtol", "xtol", "max_iter", "multistart", "lin_tol", "lin_max_iter")
    _PRIOR_KEYS = ("V", "a_sigma", "b_sigma", "mu_theta", "Sigma_theta")

    def __post_init__(self):
        if not (isinstance(self.h, (int, float)) and self.h > 0):
            raise FormatError("h must be positive")
        if self.model not in ("IM", "SM"):
            raise FormatError("model must be IM or SM")
        if self.link not in ("identity", "log"):
            raise FormatError("link must be identity or log")
        bad = (set(self.priors) - set(self._PRIOR_KEYS)) | (set(self.optimizer) - set(self._OPT_KEYS))
        if bad:
            raise FormatError(f"unknown config keys: {sorted(bad)}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        allowed = {"h", "model", "link", "line_scale", "line_average", "priors", "optimizer", "seed"}
        bad = set(d) - allowed
        if bad:
            raise FormatError(f"unknown config keys: {sorted(bad)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def priors_obj(self) -> Priors:
        p = dict(self.priors)
        if "mu_theta" in p:
            p["mu_theta"] = tuple(p["mu_theta"])
        try:
            return Priors(**p)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise FormatError(f"invalid priors: {exc}") from exc

    def model_spec(self, mesh: Mesh, x) -> ModelSpec:
        return ModelSpec(mesh, x, link=self.link, support=self.model, line_scale=self.line_scale,
                         line_average=self.line_average, priors=self.priors_obj(), **self.optimizer)


def read_config(path) -> RunConfig:
    return RunConfig.from_dict(_load_json(path))
