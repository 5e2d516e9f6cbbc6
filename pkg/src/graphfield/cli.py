"""Command-line interface.

Exit codes: 0 success, 1 numerical failure or flagged result (outputs are
still written), 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .demo import desk_design
from .errors import GraphFieldError, NonConvergence, NotPositiveDefinite
from .fem import HyperParams, factorize, precision, sample_field
from .inference import FitResult, average_speed_estimand, fit, posterior_sample, predict, refit_at
from .io import (
    FormatError,
    RunConfig,
    _load_json,
    dumps_json,
    obs_to_csv,
    read_config,
    read_graph,
    read_obs,
    read_paths,
    write_graph,
    write_paths,
)
from .graph import GraphLocation
from .mesh import build_mesh
from .observe import NoiseModel, simulate_observations
from .scoring import score_all
from .simstudy import StudyConfig, derive_seed, generate_covariate, run_study, summarize, to_csv
from .simstudy import PARAM_METRICS, SCORE_METRICS


class UsageError(Exception):
    pass


def _f(v) -> str:
    return repr(float(v))


def _write_rows(path: Path, header, rows) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _positive(name, v):
    if v is None or not (v > 0):
        raise UsageError(f"{name} must be positive")
    return v


# ---------------------------------------------------------------------------
# commands


def cmd_mesh(args) -> int:
    _positive("h", args.h)
    gf = read_graph(args.graph)
    mesh = build_mesh(gf.graph, args.h)
    print(json.dumps(mesh.summary(), sort_keys=True))
    return 0


def cmd_sample(args) -> int:
    _positive("h", args.h)
    if args.n < 1:
        raise UsageError("n must be >= 1")
    gf = read_graph(args.graph)
    mesh = build_mesh(gf.graph, args.h)
    Q = precision(mesh, HyperParams(_positive("rho", args.rho), _positive("sigma2", args.sigma2)))
    S = sample_field(factorize(Q), args.n, args.seed)
    _write_rows(Path(args.out), ["vertex"] + [f"s{j}" for j in range(args.n)],
                ([k] + [_f(v) for v in S[k]] for k in range(mesh.K)))
    return 0


@dataclass
class SimConfig:
    graph: str = "desk"
    design_seed: int = 2024
    h: float = 0.06
    rho: float = 0.35
    sigma2: float = 1.0
    sigma2_L: float = 0.25
    sigma2_P: float = 0.01
    beta0: float = 1.0
    beta1: float = 1.0
    R: int = 5
    link: str = "identity"
    line_scale: str = "inverse_sq"
    averaged: bool | None = None
    cov_rho: float = 2.1
    cov_sigma2: float = 3.0
    seed: int = 1


def cmd_simulate(args) -> int:
    raw = _load_json(args.config) if args.config else {}
    bad = set(raw) - set(SimConfig.__dataclass_fields__)
    if bad:
        raise FormatError(f"unknown simulate config keys: {sorted(bad)}")
    cfg = SimConfig(**raw)
    for k in ("h", "rho", "sigma2", "sigma2_L", "sigma2_P", "cov_rho", "cov_sigma2"):
        _positive(k, getattr(cfg, k))
    if cfg.graph != "desk":
        raise UsageError("only the built-in 'desk' design can be simulated; supply your own data to fit")
    design = desk_design(cfg.design_seed)
    graph = design.graph
    mesh = build_mesh(graph, cfg.h)
    x = generate_covariate(graph, mesh, derive_seed(cfg.seed, 0xC0), cfg.cov_rho, cfg.cov_sigma2)
    w = sample_field(factorize(precision(mesh, HyperParams(cfg.rho, cfg.sigma2))), cfg.R,
                     derive_seed(cfg.seed, 1))
    averaged = (cfg.link == "log") if cfg.averaged is None else cfg.averaged
    noise = NoiseModel(cfg.sigma2_P, cfg.sigma2_L, cfg.line_scale)
    pts, lns = simulate_observations(mesh, w, cfg.beta0, cfg.beta1, x, cfg.link, noise,
                                     design.points, design.paths, derive_seed(cfg.seed, 2), averaged)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_graph(out / "graph.json", graph, {"kind": "mesh", "h": cfg.h, "values": x.tolist()})
    ids = {p: f"L{i}" for i, p in enumerate(design.paths)}
    write_paths(out / "paths.json", {v: k for k, v in ids.items()})
    (out / "obs.csv").write_text(obs_to_csv(pts, lns, ids))
    eta = cfg.beta0 + cfg.beta1 * x[:, None] + w
    _write_rows(out / "truth.csv", ["vertex", "replicate", "eta"],
                ([k, r, _f(eta[k, r])] for r in range(cfg.R) for k in range(mesh.K)))
    run = RunConfig(h=cfg.h, link=cfg.link, line_scale=cfg.line_scale, line_average=averaged, seed=cfg.seed)
    (out / "config.json").write_text(dumps_json(run.to_dict()))
    (out / "simulation.json").write_text(dumps_json(asdict(cfg)))
    return 0


def _load_problem(graph_path, obs_path, paths_path, cfg: RunConfig):
    gf = read_graph(graph_path)
    mesh = build_mesh(gf.graph, cfg.h)
    cov = gf.covariate
    if cov is not None and cov["kind"] == "mesh" and not math.isclose(cov["h"], cfg.h):
        raise FormatError(f"covariate was stored for h={cov['h']} but the config uses h={cfg.h}")
    x = gf.covariate_on(mesh)
    paths = read_paths(paths_path, gf.graph) if paths_path else {}
    data = read_obs(obs_path, gf.graph, paths)
    return gf, mesh, cfg.model_spec(mesh, x), data


def _fit_dump(res: FitResult, sources: dict, cfg: RunConfig) -> dict:
    d = {
        "sources": sources,
        "config": cfg.to_dict(),
        "hyper": res.hyper.tolist(),
        "hyper_cov": None if res.hyper_cov is None else res.hyper_cov.tolist(),
        "estimates": res.estimates(),
        "beta_mean": res.beta_mean.tolist(),
        "beta_cov": res.beta_cov.tolist(),
        "log_posterior": res.log_posterior,
        "converged": res.converged,
        "flags": list(res.flags),
        "n_iter": res.n_iter,
        "lin_iterations": res.lin_iterations,
        "R": res.R,
        "expansion": None,
    }
    if res.expansion is not None:
        d["expansion"] = {"w": res.expansion[0].tolist(), "beta": res.expansion[1].tolist()}
    return d


def _prediction_rows(mesh, mean, sd):
    xy = mesh.vertex_xy()
    for r in range(mean.shape[1]):
        for k in range(mesh.K):
            yield [k, r, _f(xy[k, 0]), _f(xy[k, 1]), _f(mean[k, r]), _f(sd[k, r])]


PRED_HEADER = ["vertex", "replicate", "x", "y", "mean", "sd"]


def cmd_fit(args) -> int:
    cfg = read_config(args.config) if args.config else RunConfig()
    _, mesh, spec, data = _load_problem(args.graph, args.obs, args.paths, cfg)
    res = fit(spec, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sources = {"graph": str(Path(args.graph).resolve()), "obs": str(Path(args.obs).resolve()),
               "paths": str(Path(args.paths).resolve()) if args.paths else None}
    (out / "fit.json").write_text(dumps_json(_fit_dump(res, sources, cfg)))
    _write_rows(out / "predictions.csv", PRED_HEADER, _prediction_rows(mesh, res.eta_mean, res.eta_sd))
    if res.flags:
        print(f"warning: fit flagged {res.flags}", file=sys.stderr)
        return 1
    return 0


def _restore(dump_path):
    d = _load_json(dump_path)
    try:
        cfg = RunConfig.from_dict(d["config"])
        src = d["sources"]
        hyper = np.asarray(d["hyper"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{dump_path}: not a fit dump ({exc})") from exc
    gf, mesh, spec, data = _load_problem(src["graph"], src["obs"], src["paths"], cfg)
    exp = d.get("expansion")
    expansion = None if exp is None else (np.asarray(exp["w"]), np.asarray(exp["beta"]))
    res = refit_at(spec, data, hyper, expansion)
    return mesh, res


def cmd_predict(args) -> int:
    mesh, res = _restore(args.fit)
    if args.locations:
        locs = []
        with open(args.locations) as fh:
            for row in csv.DictReader(fh):
                try:
                    locs.append(GraphLocation(int(row["edge"]), float(row["t"])))
                except (KeyError, ValueError) as exc:
                    raise FormatError(f"locations file: {exc}") from exc
        for loc in locs:
            mesh.graph.check_location(loc)
        mean, sd = predict(res, locs)
        rows = ([i, r, e, _f(t), _f(mean[i, r]), _f(sd[i, r])]
                for r in range(mean.shape[1]) for i, (e, t) in enumerate(locs))
        _write_rows(Path(args.out), ["location", "replicate", "edge", "t", "mean", "sd"], rows)
    else:
        mean, sd = predict(res)
        _write_rows(Path(args.out), PRED_HEADER, _prediction_rows(mesh, mean, sd))
    return 0


def cmd_study(args) -> int:
    raw = {}
    for k in ("seed", "n_realizations", "n_jobs"):
        v = getattr(args, k)
        if v is not None:
            raw[k] = v
    if args.config:
        raw.update(_load_json(args.config))
    cfg = StudyConfig.from_dict(raw)
    if cfg.n_jobs < 1:
        raise UsageError("n_jobs must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_study(cfg)
    all_rows = []
    for name, rows in results.items():
        d = out / name
        d.mkdir(exist_ok=True)
        (d / "scores.csv").write_text(to_csv(summarize(rows, SCORE_METRICS)))
        (d / "params.csv").write_text(to_csv(summarize(rows, PARAM_METRICS)))
        all_rows += rows
    (out / "scores.csv").write_text(to_csv(summarize(all_rows, SCORE_METRICS)))
    (out / "params.csv").write_text(to_csv(summarize(all_rows, PARAM_METRICS)))
    (out / "config.json").write_text(dumps_json(cfg.to_dict()))
    flagged = any(r["flag"] for r in all_rows)
    return 1 if flagged else 0


def cmd_estimand(args) -> int:
    if args.B < 2:
        raise UsageError("B must be >= 2")
    if len(args.fits) not in (1, 2):
        raise UsageError("give one or two fit dumps")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["vertex", "x", "y", "median", "lo95", "hi95"]
    summaries, draws = [], []
    for k, path in enumerate(args.fits):
        mesh, res = _restore(path)
        S = posterior_sample(res, args.B, args.seed)
        med, lo, hi = average_speed_estimand(S)
        xy = mesh.vertex_xy()
        _write_rows(out / f"estimand_{k}.csv", header,
                    ([v, _f(xy[v, 0]), _f(xy[v, 1]), _f(med[v]), _f(lo[v]), _f(hi[v])] for v in range(mesh.K)))
        summaries.append((med, lo, hi))
        draws.append(np.mean(np.exp(-S), axis=1))
    if len(args.fits) == 2:
        if draws[0].shape != draws[1].shape:
            raise UsageError("the two fits must share one mesh")
        diff = draws[0] - draws[1]
        dq = np.quantile(diff, [0.5, 0.025, 0.975], axis=0)
        ratio = (summaries[0][2] - summaries[0][1]) / (summaries[1][2] - summaries[1][1])
        xy = mesh.vertex_xy()
        _write_rows(out / "compare.csv", ["vertex", "x", "y", "diff_median", "diff_lo95", "diff_hi95", "width_ratio"],
                    ([v, _f(xy[v, 0]), _f(xy[v, 1]), _f(dq[0, v]), _f(dq[1, v]), _f(dq[2, v]), _f(ratio[v])]
                     for v in range(mesh.K)))
    return 0


def _read_table(path, keys):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows or any(k not in rows[0] for k in keys):
        raise FormatError(f"{path}: needs columns {keys}")
    return rows


def cmd_score(args) -> int:
    pred = _read_table(args.pred, ["vertex", "replicate", "mean", "sd"])
    truth = _read_table(args.truth, ["vertex", "replicate", "eta"])
    t = {(int(r["vertex"]), int(r["replicate"])): float(r["eta"]) for r in truth}
    try:
        trip = [(float(r["mean"]), float(r["sd"]), t[(int(r["vertex"]), int(r["replicate"]))]) for r in pred]
    except KeyError as exc:
        raise FormatError(f"no truth for prediction {exc}") from exc
    m, s, y = map(np.array, zip(*trip))
    print(json.dumps(score_all(m, s, y, args.level), sort_keys=True))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphfield", description="Gaussian fields on metric graphs")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mesh", help="mesh summary for a graph file")
    s.add_argument("--graph", required=True)
    s.add_argument("--h", type=float, required=True)
    s.set_defaults(func=cmd_mesh)

    s = sub.add_parser("sample", help="prior samples of the field at mesh vertices")
    s.add_argument("--graph", required=True)
    s.add_argument("--h", type=float, required=True)
    s.add_argument("--rho", type=float, required=True)
    s.add_argument("--sigma2", type=float, required=True)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("simulate", help="simulate a dataset on the built-in study design")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="fit the model to observations")
    s.add_argument("--graph", required=True)
    s.add_argument("--obs", required=True)
    s.add_argument("--paths")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", help="posterior predictions from a fit dump")
    s.add_argument("--fit", required=True)
    s.add_argument("--locations", help="CSV with columns edge,t; default mesh vertices")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("study", help="run the IM/SM simulation study")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-realizations", dest="n_realizations", type=int)
    s.add_argument("--n-jobs", dest="n_jobs", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_study)

    s = sub.add_parser("estimand", help="averaged-speed summaries from one or two fit dumps")
    s.add_argument("--fits", nargs="+", required=True)
    s.add_argument("--B", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_estimand)

    s = sub.add_parser("score", help="RMSE, CRPS and coverage of predictions against truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--level", type=float, default=0.95)
    s.set_defaults(func=cmd_score)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        return args.func(args)
    except (UsageError, FormatError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NotPositiveDefinite, NonConvergence) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except GraphFieldError as exc:
        print(f"invalid input: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
