"""Command-line interface: ``compound-dp <subcommand> --config run.json``.

Every subcommand writes plot-ready tables. CSV output starts with ``#``
metadata lines (package version, config hash, seed); ``--format json``
writes one JSON document with a ``meta`` block. Files are written to a
temporary name and renamed only after the whole run succeeds.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 unsupported
model combination, 5 resource cap exceeded.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile

import jsonschema
import numpy as np

from . import __version__
from .dpm_gibbs import (DpmSpec, ExponentialGamma, GaussianNIG, cluster_summary, default_grid,
                        predictive_density, run_chains)
from .errors import CapabilityError, CdpError, ConfigError
from .ingest import interarrivals, read_events, read_pairs
from .process import (CdpModel, TruncationPolicy, model_from_dict, posterior_model, simulate_paths,
                      simulate_paths_batched, st_cdf, st_density, st_moments)
from .sums import moments_sn, mgf_sn_recursive

log = logging.getLogger("compound_dp")

THREADS_ENV = "COMPOUND_DP_THREADS"

_POS = {"type": "number", "exclusiveMinimum": 0}
_NUM_LIST = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_BASE = {
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["gaussian", "exponential", "gamma", "phase_type", "empirical",
                          "normal_inverse_gamma", "mixture"]},
        "mu": {"type": "number"}, "sigma2": _POS, "rate": _POS, "shape": _POS,
        "pi": _NUM_LIST, "T": {"type": "array", "items": _NUM_LIST},
        "atoms": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                             "minItems": 2, "maxItems": 2}},
        "m0": {"type": "number"}, "kappa0": _POS, "a0": _POS, "b0": _POS,
        "components": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                                  "prefixItems": [_POS, {"$ref": "#/$defs/base"}]}},
    },
}
_PRIOR = {
    "type": "object",
    "required": ["alpha", "base"],
    "additionalProperties": False,
    "properties": {"alpha": _POS, "base": {"$ref": "#/$defs/base"},
                   "kernel": {"enum": ["exponential", "gaussian"]}},
}
_PER_DIM = {"oneOf": [{"type": "number"}, _NUM_LIST]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$defs": {"base": _BASE, "prior": _PRIOR},
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "meta": {"type": "object"},
        "seed": {"type": "integer", "minimum": 0},
        "model": {
            "type": "object",
            "required": ["time", "mark"],
            "additionalProperties": False,
            "properties": {"type": {"enum": ["cdp", "cdpm"]},
                           "time": {"$ref": "#/$defs/prior"}, "mark": {"$ref": "#/$defs/prior"}},
        },
        "horizon": _POS,
        "truncation": {
            "type": "object", "additionalProperties": False,
            "properties": {"max_n": {"type": "integer", "minimum": 1},
                           "epsilon0": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                           "mc_paths": {"type": "integer", "minimum": 2}},
        },
        "grid": {
            "type": "object", "additionalProperties": False,
            "properties": {"points": _NUM_LIST, "start": {"type": "number"}, "stop": {"type": "number"},
                           "num": {"type": "integer", "minimum": 1}},
        },
        "simulate": {
            "type": "object", "additionalProperties": False,
            "properties": {"replicates": {"type": "integer", "minimum": 1},
                           "batch_size": {"type": "integer", "minimum": 1},
                           "record_paths": {"type": "boolean"}},
        },
        "n": {"type": "integer", "minimum": 1},
        "data": {
            "type": "object", "additionalProperties": False,
            "properties": {"path": {"type": "string"}, "date_col": {"type": "string"},
                           "x_col": {"type": "string"}, "y_col": {"type": "string"},
                           "id_col": {"type": "string"}, "time_col": {"type": "string"},
                           "mark_col": {"type": "string"}, "strict": {"type": "boolean"}},
        },
        "dpm": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "iters": {"type": "integer", "minimum": 1},
                "burn_in": {"type": "integer", "minimum": 0},
                "thin": {"type": "integer", "minimum": 1},
                "chains": {"type": "integer", "minimum": 1},
                "grid_size": {"type": "integer", "minimum": 2},
                "time": {"type": "object", "additionalProperties": False,
                         "properties": {"alpha": _POS, "shape": _POS, "rate": _POS}},
                "space": {"type": "object", "additionalProperties": False,
                          "properties": {"alpha": _POS, "m0": _PER_DIM, "kappa0": _PER_DIM,
                                         "a0": _PER_DIM, "b0": _PER_DIM, "standardize": {"type": "boolean"}}},
            },
        },
    },
}

DPM_DEFAULTS = {"iters": 2000, "burn_in": 1000, "thin": 2, "chains": 1, "grid_size": 200,
                "time": {"alpha": 1.0, "shape": 1.0, "rate": 8.0},
                "space": {"alpha": 1.0, "m0": 0.0, "kappa0": 0.01, "a0": 2.0, "b0": 0.1, "standardize": True}}

EPILOG = """\
output columns
  simulate   summary: replicate, n_t, s_t
             paths:   replicate, event, time, interarrival, mark
  density    s, value, bound            (value: density of the continuous part)
  cdf        s, value, bound            (P(S_t <= s); bound: omitted probability mass)
  moments    order, value, count_moment, tail_mass
  mgf        t, value
  posterior  JSON config with the updated model, usable as --config
  fit-dpm    predictive: grid, mean, lower, upper
             ktrace: chain, iteration, time_k[, space_k]
             partition: event, label
             coclustering: i, j, prob
             diagnostics: key, value
"""


# --- configuration ---------------------------------------------------------------


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def validate_config(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        lines = []
        for err in errors:
            where = ".".join(str(p) for p in err.absolute_path) or "<root>"
            lines.append(f"{where}: {err.message}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))


def config_hash(cfg: dict) -> str:
    body = {k: v for k, v in cfg.items() if k != "meta"}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = copy.deepcopy(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "horizon", None) is not None:
        cfg["horizon"] = args.horizon
    if getattr(args, "n", None) is not None:
        cfg["n"] = args.n
    if getattr(args, "points", None):
        try:
            cfg["grid"] = {"points": [float(p) for p in args.points.split(",")]}
        except ValueError:
            raise ConfigError(f"--points must be comma-separated numbers, got {args.points!r}") from None
    if getattr(args, "replicates", None) is not None:
        cfg.setdefault("simulate", {})["replicates"] = args.replicates
    if getattr(args, "data", None):
        cfg.setdefault("data", {})["path"] = args.data
    for flag in ("date_col", "x_col", "y_col"):
        if getattr(args, flag, None):
            cfg.setdefault("data", {})[flag] = getattr(args, flag)
    if getattr(args, "chains", None) is not None:
        cfg.setdefault("dpm", {})["chains"] = args.chains
    validate_config(cfg)
    return cfg


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


def _need(cfg, key, cmd):
    if key not in cfg:
        raise ConfigError(f"{cmd} needs '{key}' in the config")
    return cfg[key]


def _model(cfg, cmd):
    return model_from_dict(_need(cfg, "model", cmd))


def _grid(cfg, cmd):
    g = _need(cfg, "grid", cmd)
    if "points" in g:
        return np.asarray(g["points"], float)
    try:
        return np.linspace(g["start"], g["stop"], g.get("num", 101))
    except KeyError as exc:
        raise ConfigError(f"grid needs 'points' or 'start'/'stop', missing {exc}") from None


def _trunc(cfg):
    return TruncationPolicy(**cfg.get("truncation", {}))


def _rng(cfg):
    return np.random.default_rng(cfg.get("seed", 0))


# --- subcommands ---------------------------------------------------------------
# Each returns (tables, extra metadata); a table is (columns, rows).


def cmd_simulate(cfg, threads):
    model = _model(cfg, "simulate")
    horizon = _need(cfg, "horizon", "simulate")
    sim = cfg.get("simulate", {})
    reps = sim.get("replicates", 1000)
    seed = cfg.get("seed", 0)
    tables = {}
    if sim.get("record_paths", True):
        paths = simulate_paths(model, horizon, reps, np.random.default_rng(seed), record=True)
        n_t = np.array([p.n_t for p in paths])
        s_t = np.array([p.s_t for p in paths])
        rows = []
        for r, p in enumerate(paths):
            times = p.arrival_times
            rows.extend((r, k, times[k], p.interarrivals[k], p.marks[k]) for k in range(p.n_t))
        tables["paths"] = (["replicate", "event", "time", "interarrival", "mark"], rows)
    else:
        n_t, s_t = simulate_paths_batched(model, horizon, reps, seed,
                                          batch_size=sim.get("batch_size", 50_000), workers=threads)
    tables["summary"] = (["replicate", "n_t", "s_t"], list(zip(range(reps), n_t.tolist(), s_t.tolist())))
    meta = {"horizon": horizon, "replicates": reps, "mean_n_t": float(n_t.mean()),
            "mean_s_t": float(s_t.mean()), "se_s_t": float(s_t.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0}
    return tables, meta


def _law(cfg, fn, cmd):
    model = _model(cfg, cmd)
    if cmd == "density" and not isinstance(model, CdpModel):
        raise CapabilityError("density has no evaluator for a CDPM model; use cdf or simulate")
    t = _need(cfg, "horizon", cmd)
    s = _grid(cfg, cmd)
    res = fn(model, t, s, _trunc(cfg), rng=_rng(cfg))
    rows = [(float(si), float(vi), res.bound) for si, vi in zip(s, np.atleast_1d(res.value))]
    meta = {"horizon": t, "bound": res.bound, "atom_at_zero": res.atom_at_zero,
            "count_method": res.counting.method, "terms": int(res.terms.size)}
    if res.se is not None:
        meta["count_se"] = res.se
    return {cmd: (["s", "value", "bound"], rows)}, meta


def cmd_density(cfg, threads):
    return _law(cfg, st_density, "density")


def cmd_cdf(cfg, threads):
    return _law(cfg, st_cdf, "cdf")


def cmd_moments(cfg, threads):
    model = _model(cfg, "moments")
    if not isinstance(model, CdpModel):
        raise CapabilityError("moments has no analytic evaluator for a CDPM model; use simulate")
    mark = model.mark_prior
    if "n" in cfg:
        n = cfg["n"]
        mu = [mark.base.moment(k) for k in (1, 2, 3)]
        vals = moments_sn(n, mark.alpha, *mu)
        rows = [(k, vals[k - 1], float(n) ** k, 0.0) for k in (1, 2, 3)]
        meta = {"n": n}
    else:
        t = _need(cfg, "horizon", "moments")
        res = st_moments(model, t, _trunc(cfg), rng=_rng(cfg))
        rows = [(k, res.moments[k - 1], res.count_moments[k - 1], res.tail_mass) for k in (1, 2, 3)]
        meta = {"horizon": t}
    return {"moments": (["order", "value", "count_moment", "tail_mass"], rows)}, meta


def cmd_mgf(cfg, threads):
    model = _model(cfg, "mgf")
    if "n" not in cfg:
        raise ConfigError("mgf needs --n (or 'n' in the config)")
    n = cfg["n"]
    if not isinstance(model, CdpModel):
        raise CapabilityError("mgf needs a CDP model with a closed-form mark MGF")
    mark = model.mark_prior
    try:
        mark.base.mgf(0.0)
    except NotImplementedError:
        raise CapabilityError(f"no closed-form MGF for a {mark.base.kind} mark base") from None
    ts = _grid(cfg, "mgf")
    rows = [(float(t), mgf_sn_recursive(n, mark.alpha, mark.base.mgf, float(t))) for t in ts]
    return {"mgf": (["t", "value"], rows)}, {"n": n}


def cmd_posterior(cfg, threads):
    model = _model(cfg, "posterior")
    if not isinstance(model, CdpModel):
        raise CapabilityError("posterior updating is available for CDP models only")
    data = cfg.get("data", {})
    path = _need(data, "path", "posterior (data)")
    pairs = read_pairs(path, data.get("time_col", "time"), data.get("mark_col", "mark"))
    post = posterior_model(model, pairs)
    out = {k: v for k, v in cfg.items() if k not in ("data", "meta")}
    out["model"] = post.to_dict()
    return out, {"observations": int(pairs.shape[0])}


def _nig(space, d):
    return GaussianNIG(*(tuple(np.broadcast_to(np.asarray(space[k], float), (d,)).tolist())
                         for k in ("m0", "kappa0", "a0", "b0")))


def cmd_fit_dpm(cfg, threads):
    data = cfg.get("data", {})
    path = _need(data, "path", "fit-dpm (data)")
    ds = read_events(path, data.get("date_col", "date"), data.get("x_col", "x"), data.get("y_col", "y"),
                     data.get("id_col", "id"), strict=data.get("strict", True))
    user = cfg.get("dpm", {})
    dpm = {**DPM_DEFAULTS, **user,
           "time": {**DPM_DEFAULTS["time"], **user.get("time", {})},
           "space": {**DPM_DEFAULTS["space"], **user.get("space", {})}}
    seed = cfg.get("seed", 0)
    run = dict(iters=dpm["iters"], burn_in=dpm["burn_in"], thin=dpm["thin"], chains=dpm["chains"],
               workers=threads)
    tables, meta = {}, {"events": len(ds), "chains": dpm["chains"], "iters": dpm["iters"],
                        "burn_in": dpm["burn_in"], "thin": dpm["thin"]}

    gaps, n_adj = interarrivals(ds)
    tspec = DpmSpec(dpm["time"]["alpha"], ExponentialGamma(dpm["time"]["shape"], dpm["time"]["rate"]))
    grid = default_grid(gaps, tspec, dpm["grid_size"])
    time_seed, space_seed = np.random.SeedSequence(seed).spawn(2)
    tchains = run_chains(gaps, tspec, seed=time_seed, grid=grid, **run)
    tstates = [s for c in tchains for s in c.states]
    curve = predictive_density(tstates, tspec, grid)
    tables["predictive"] = (["grid", "mean", "lower", "upper"],
                            list(zip(curve.grid, curve.mean, curve.lower, curve.upper)))
    tk = np.concatenate([c.k_trace[dpm["burn_in"]:] for c in tchains])
    meta.update({"time_observations": int(gaps.size), "zero_gaps_adjusted": n_adj,
                 "time_modal_k": int(np.bincount(tk).argmax()), "time_mean_k": float(tk.mean()),
                 "predictive_integral": float(np.trapezoid(curve.mean, curve.grid))})

    xy, idx = ds.coordinates()
    meta["space_observations"] = int(idx.size)
    trace_rows = []
    if idx.size:
        if dpm["space"]["standardize"]:
            scale = xy.std(axis=0)
            xy = (xy - xy.mean(axis=0)) / np.where(scale > 0, scale, 1.0)
        sspec = DpmSpec(dpm["space"]["alpha"], _nig(dpm["space"], 2))
        schains = run_chains(xy, sspec, seed=space_seed, **run)
        summary = cluster_summary([s for c in schains for s in c.states])
        tables["partition"] = (["event", "label"], list(zip(idx.tolist(), summary.labels.tolist())))
        iu = np.triu_indices(idx.size)
        tables["coclustering"] = (["i", "j", "prob"],
                                  list(zip(idx[iu[0]].tolist(), idx[iu[1]].tolist(),
                                           summary.coclustering[iu].tolist())))
        sk = np.concatenate([c.k_trace[dpm["burn_in"]:] for c in schains])
        meta.update({"space_modal_k": int(np.bincount(sk).argmax()), "space_mean_k": float(sk.mean()),
                     "point_partition_k": int(summary.labels.max() + 1)})
        for ci, (tc, sc) in enumerate(zip(tchains, schains)):
            trace_rows.extend((ci, it, int(a), int(b)) for it, (a, b) in enumerate(zip(tc.k_trace, sc.k_trace)))
        tables["ktrace"] = (["chain", "iteration", "time_k", "space_k"], trace_rows)
    else:
        for ci, tc in enumerate(tchains):
            trace_rows.extend((ci, it, int(a)) for it, a in enumerate(tc.k_trace))
        tables["ktrace"] = (["chain", "iteration", "time_k"], trace_rows)
    per_chain = [float(c.k_trace[dpm["burn_in"]:].mean()) for c in tchains]
    tables["diagnostics"] = (["key", "value"], [(k, v) for k, v in meta.items()]
                             + [(f"time_mean_k_chain{i}", v) for i, v in enumerate(per_chain)])
    return tables, meta


COMMANDS = {"simulate": cmd_simulate, "density": cmd_density, "cdf": cmd_cdf, "moments": cmd_moments,
            "mgf": cmd_mgf, "posterior": cmd_posterior, "fit-dpm": cmd_fit_dpm}


# --- output ----------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def render_csv(columns, rows, meta_lines) -> str:
    buf = io.StringIO()
    for line in meta_lines:
        buf.write(f"# {line}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def render(cmd, tables, meta, fmt) -> dict[str, str]:
    """Map of table name to file text."""
    if cmd == "posterior":
        doc = {**tables, "meta": meta}
        return {"": json.dumps(doc, indent=2, sort_keys=True) + "\n"}
    if fmt == "json":
        doc = {"meta": meta,
               "tables": {name: {"columns": cols, "data": [[_jsonable(v) for v in r] for r in rows]}
                          for name, (cols, rows) in tables.items()}}
        return {"": json.dumps(doc, indent=2, default=_jsonable) + "\n"}
    lines = [f"{k}: {v}" for k, v in meta.items()]
    if len(tables) == 1:
        (cols, rows), = tables.values()
        return {"": render_csv(cols, rows, lines)}
    return {name: render_csv(cols, rows, lines + [f"table: {name}"]) for name, (cols, rows) in tables.items()}


def _target(out, name, fmt):
    if not name:
        return out
    root, ext = os.path.splitext(out)
    return f"{root}.{name}{ext or '.' + fmt}"


def write_atomic(files: dict[str, str]) -> None:
    """Write every file to a temporary sibling, then rename them all."""
    staged = []
    try:
        for path, text in files.items():
            d = os.path.dirname(os.path.abspath(path))
            fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
            staged.append((tmp, path))
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        for tmp, path in staged:
            os.replace(tmp, path)
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise


# --- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compound-dp", description=__doc__.split("\n")[0],
                                     epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output file (prefix when a command writes several tables); default stdout")
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help=f"worker processes (default ${THREADS_ENV} or 1)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("simulate", "density", "cdf", "moments"):
            p.add_argument("--horizon", type=float)
        if name in ("density", "cdf", "mgf"):
            p.add_argument("--points", help="comma-separated evaluation points; write --points=-1,2 when the first is negative")
        if name in ("moments", "mgf"):
            p.add_argument("--n", type=int, help="fixed number of summands")
        if name == "simulate":
            p.add_argument("--replicates", type=int)
        if name in ("posterior", "fit-dpm"):
            p.add_argument("--data", help="input data file")
        if name == "fit-dpm":
            p.add_argument("--chains", type=int)
            p.add_argument("--date-col")
            p.add_argument("--x-col")
            p.add_argument("--y-col")
    return parser


def run(argv=None, stdout=None) -> int:
    args = build_parser().parse_args(argv)
    stdout = stdout if stdout is not None else sys.stdout
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        tables, meta = COMMANDS[args.command](cfg, _threads(args))
        head = {"version": __version__, "command": args.command, "config_sha256": config_hash(cfg),
                "seed": cfg.get("seed", 0)}
        texts = render(args.command, tables, {**head, **meta}, args.format)
        if args.out:
            write_atomic({_target(args.out, name, args.format): text for name, text in texts.items()})
        else:
            for text in texts.values():
                stdout.write(text)
    except CdpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
