"""Command-line harness: validated TOML configs in, JSON report and CSV tables out.

    parharnack <kind> [--config FILE] [--out DIR] [--seed N]

Exit status is 0 on success, 2 on a configuration error and 3 on a numerical
failure.  Nothing is written unless the whole run succeeds; each file is
written to a temporary name and renamed into place.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import random
import sys
import tempfile
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy
import tomli
import tomli_w

from . import __version__

KINDS = ("verify-approx", "caloric-basis", "solve", "harnack-exponent", "iterate",
         "counterexample", "scaling-check", "obstacle-demo")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# -- parameter schemas: name -> (kind, default, check, message)

def _int_in(lo, hi):
    return lambda v: isinstance(v, int) and not isinstance(v, bool) and lo <= v <= hi, f"an integer in {lo}..{hi}"


def _float_in(lo, hi, open_lo=False, open_hi=False):
    def ok(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return False
        return (v > lo if open_lo else v >= lo) and (v < hi if open_hi else v <= hi)
    lb = "(" if open_lo else "["
    rb = ")" if open_hi else "]"
    return ok, f"a number in {lb}{lo}, {hi}{rb}"


def _pow2_step():
    def ok(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0:
            return False
        e = np.log2(1 / v)
        return abs(e - round(e)) < 1e-12 and 2 <= round(e) <= 12
    return ok, "a power of two 2^-p with 2 <= p <= 12"


def _choice(*opts):
    return lambda v: v in opts, "one of " + ", ".join(map(str, opts))


def _list_of(check):
    ok1, msg = check

    def ok(v):
        return isinstance(v, list) and len(v) > 0 and all(ok1(x) for x in v)
    return ok, f"a non-empty list of {msg}"


_GRAPH = {"amplitude": (0.05, _float_in(0.0, 0.2)), "frequency": (1.0, _float_in(0.0, 4.0)),
          "speed": (1.0, _float_in(-4.0, 4.0))}

SCHEMAS = {
    "verify-approx": {"n": (2, _int_in(1, 3)), "k": (3, _int_in(1, 6)), "count": (100, _int_in(1, 10000)),
                      "coef_bound": ("1/4", (lambda v: isinstance(v, str) and _frac_ok(v), "a fraction string like '1/4'"))},
    "caloric-basis": {"n": (2, _int_in(1, 4)), "k": (3, _int_in(0, 12))},
    "solve": {"n": (1, _int_in(1, 2)), "h": (2.0 ** -6, _pow2_step()), "scheme": ("cn", _choice("cn", "be")),
              "tau_ratio": (1.0, _float_in(0.0, 4.0, open_lo=True)), **_GRAPH},
    "harnack-exponent": {"h": (2.0 ** -6, _pow2_step()), "k": ([1, 2], _list_of(_int_in(1, 3))),
                         "alpha": (0.5, _float_in(0.0, 1.0, True, True)), **_GRAPH},
    "iterate": {"pair": ("exact", _choice("exact", "sine")), "h": (2.0 ** -10, _pow2_step()),
                "k": (2, _int_in(1, 4)), "alpha": (0.5, _float_in(0.0, 1.0, True, True)),
                "rho": (0.5, _float_in(0.0, 1.0, True, True)), "r0": (0.5, _float_in(0.0, 1.0, True)),
                "steps": (8, _int_in(1, 40))},
    "counterexample": {"alpha": (1.0, _float_in(0.0, 1.0, open_lo=True)),
                       "beta": (0.5, _float_in(0.0, 1.0, open_lo=True)),
                       "variant": ("base", _choice("base", "corner")), "J": (10, _int_in(4, 14)),
                       "h": (2.0 ** -10, _pow2_step()), "drop_unresolved": (False, _choice(True, False))},
    "scaling-check": {"h": (2.0 ** -6, _pow2_step()), "r0": ([0.5, 0.25], _list_of(_choice(0.5, 0.25, 0.125))),
                      "alpha": (0.5, _float_in(0.0, 1.0, True, True)), **_GRAPH},
    "obstacle-demo": {"h": ([2.0 ** -5, 2.0 ** -6, 2.0 ** -7], _list_of(_pow2_step())),
                      "amplitude": (0.05, _float_in(0.0, 0.2)), "tilt": (0.1, _float_in(-0.5, 0.5)),
                      "window": (0.5, _float_in(0.0, 0.75, open_lo=True))},
}


def _frac_ok(s):
    try:
        f = Fraction(s)
    except (ValueError, ZeroDivisionError):
        return False
    return 0 < f <= 1


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    outputs: dict = field(default_factory=dict)

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and (self.kind, self.params, self.seed, self.outputs) == \
            (other.kind, other.params, other.seed, other.outputs)

    def digest(self) -> str:
        return hashlib.sha256(emit(self).encode()).hexdigest()


def validate(raw: dict, kind: str | None = None) -> ExperimentConfig:
    errors = []
    allowed = {"kind", "seed", "params", "outputs"}
    for key in raw:
        if key not in allowed:
            errors.append(f"{key}: unknown top-level key")
    k = raw.get("kind", kind)
    if kind is not None and raw.get("kind") not in (None, kind):
        errors.append(f"kind: config says {raw.get('kind')!r} but the command is {kind!r}")
    if k not in KINDS:
        errors.append(f"kind: must be one of {', '.join(KINDS)}")
        raise ConfigError(errors)
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        errors.append("seed: must be an integer in 0..2^64-1")
    params_in = raw.get("params", {})
    if not isinstance(params_in, dict):
        errors.append("params: must be a table")
        params_in = {}
    schema = SCHEMAS[k]
    params = {}
    for name in params_in:
        if name not in schema:
            errors.append(f"params.{name}: unknown parameter for {k}")
    for name, (default, (check, msg)) in schema.items():
        v = params_in.get(name, default)
        if isinstance(v, int) and not isinstance(v, bool) and isinstance(default, float):
            v = float(v)
        if not check(v):
            errors.append(f"params.{name}: must be {msg}, got {v!r}")
        params[name] = v
    if k == "counterexample" and not errors and params["beta"] > params["alpha"]:
        errors.append("params.beta: must not exceed params.alpha")
    outputs = raw.get("outputs", {})
    if not isinstance(outputs, dict) or not all(isinstance(v, str) and v and "/" not in v and v not in (".", "..")
                                                for v in outputs.values()):
        errors.append("outputs: must map names to plain file names")
        outputs = {}
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(k, params, int(seed), dict(outputs))


def parse(text: str, kind: str | None = None) -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError([f"syntax: {e}"]) from None
    return validate(raw, kind)


def emit(config: ExperimentConfig) -> str:
    doc = {"kind": config.kind, "seed": config.seed, "params": dict(sorted(config.params.items()))}
    if config.outputs:
        doc["outputs"] = dict(sorted(config.outputs.items()))
    return tomli_w.dumps(doc)


# -- experiment runners: each returns (results dict, {csv name: rows})

def _graph(p):
    from .heatlab import sine_graph
    return sine_graph(p["amplitude"], p["frequency"], p["speed"])


def _run_verify(cfg):
    from .approx import verify_random_instance
    p = cfg.params
    rng = random.Random(cfg.seed)
    bound = Fraction(p["coef_bound"])
    rows = [["instance", "n", "k", "p1_terms", "exact"]]
    ok = 0
    for i in range(p["count"]):
        good, info = verify_random_instance(rng, p["n"], p["k"], bound)
        ok += good
        rows.append([i, p["n"], p["k"], info["p1_terms"], int(good)])
    return {"exact": ok, "count": p["count"], "summary": f"{ok}/{p['count']} exact annihilations"}, \
        {"instances.csv": rows}


def _run_basis(cfg):
    from .approx import caloric_basis, x_n
    from .parpoly import heat_apply, multiply, to_records, to_string
    n, k = cfg.params["n"], cfg.params["k"]
    basis = caloric_basis(n, k)
    checks = [heat_apply(multiply(x_n(n), Q)).is_zero() for Q in basis]
    rows = [["index", "polynomial"]] + [[i, to_string(Q)] for i, Q in enumerate(basis)]
    return {"size": len(basis), "all_caloric": all(checks),
            "basis": [to_records(Q) for Q in basis]}, {"basis.csv": rows}


def _run_solve(cfg):
    from .heatlab import GraphDomain, Grid, solve_heat
    p = cfg.params
    grid = Grid(p["h"], scheme=p["scheme"], tau_ratio=p["tau_ratio"])
    if p["n"] == 1:
        def zero(xp, t):
            return np.zeros(np.broadcast_shapes(np.shape(xp)[:-1], np.shape(t)))
        d = GraphDomain(1, zero, center=(0.5,), radius=0.5, t0=0.25)
        F = solve_heat(d, lambda X: np.sin(np.pi * X[:, 0]), grid=grid)
        X, T, V = F.samples()
        exact = np.exp(-np.pi ** 2 * (T - T.min())) * np.sin(np.pi * X[:, 0])
        res = {"problem": "sin(pi x) on (0,1)", "max_error": float(np.max(np.abs(V - exact)))}
    else:
        f, g = _graph(p)
        d = GraphDomain(2, f, radius=1.0, f_grad=g)
        F = solve_heat(d, lambda X: (X[:, 1] - f(X[:, :1], -1.0)) * (1 - np.sum(X ** 2, axis=1)), grid=grid)
        X, T, V = F.samples()
        res = {"problem": "bump data on {x2 > f}", "max_value": float(np.max(V)), "min_value": float(np.min(V))}
    res["levels"] = int(len(F.times))
    res["max_principle"] = F.meta.get("max_principle")
    rows = [["t"] + [f"x{i + 1}" for i in range(X.shape[1])] + ["value"]]
    last = T == F.times[-1]
    rows += [[float(t)] + [float(c) for c in x] + [float(v)] for t, x, v in zip(T[last], X[last], V[last])]
    return res, {"final_level.csv": rows}


def _pair_fields(p):
    from .heatlab import GraphDomain, Grid, solve_heat
    f, g = _graph(p)
    d = GraphDomain(2, f, radius=1.0, f_grad=g)
    grid = Grid(p["h"])

    def bu(X, t):
        return (X[..., 1] - f(X[..., :1], t)) * (1.5 + 0.3 * X[..., 0])

    def bv(X, t):
        return (X[..., 1] - f(X[..., :1], t)) * (1 + 0.5 * np.sin(2 * X[..., 0] + t) + X[..., 1])
    u = solve_heat(d, lambda X: bu(X, -1.0), boundary=bu, grid=grid)
    v = solve_heat(d, lambda X: bv(X, -1.0), boundary=bv, grid=grid)
    return u, v


def _run_harnack(cfg):
    from .heatlab import normal_derivative
    from .regularity import holder_exponent, quotient_field
    p = cfg.params
    u, v = _pair_fields(p)
    q = quotient_field(u, v)
    center = ((0.0, 0.0), 0.0)
    res = {"hopf_normal_derivative": normal_derivative(u, (0.0,), 0.0), "reports": {}}
    rows = [["k", "r", "defect"]]
    for k in p["k"]:
        rep = holder_exponent(q, center, k)
        target = k + p["alpha"]
        res["reports"][str(k)] = {"exponent": rep.exponent, "stderr": rep.exponent_stderr,
                                  "target": target, "radii": rep.radii, "defects": rep.residuals}
        rows += [[k, r, d] for r, d in zip(rep.radii, rep.residuals)]
    return res, {"defects.csv": rows}


def _run_iterate(cfg):
    from .heatlab import GraphDomain, Grid, sample_function
    from .regularity import ds_iteration
    p = cfg.params

    def zero(xp, t):
        return np.zeros(np.broadcast_shapes(np.shape(xp)[:-1], np.shape(t)))
    d = GraphDomain(1, zero, radius=1.0)
    grid = Grid(p["h"])
    u = sample_function(d, grid, lambda X, t: X[..., 0])
    if p["pair"] == "exact":
        v = sample_function(d, grid, lambda X, t: X[..., 0] ** 3 + 6 * X[..., 0] * t)
    else:
        v = sample_function(d, grid, lambda X, t: np.exp(-t) * np.sin(X[..., 0]))
    k, a, r0 = p["k"], p["alpha"], p["r0"]
    tr = ds_iteration(u, v, k, a, p["rho"], r0, steps=p["steps"], v_scale="auto")
    rows = [["i", "r", "residual"]] + [[i, s.r, s.residual] for i, s in enumerate(tr.steps)]
    res = tr.to_dict()
    res["ratios"] = tr.ratios()
    res["bound"] = p["rho"] ** (k + 1 + a) * 1.2
    res["limit"] = str(tr.limit())
    return res, {"trace.csv": rows}


def _run_counter(cfg):
    from .counterex import BlowupExperiment, run_blowup
    from .heatlab import Grid
    p = cfg.params
    exp = BlowupExperiment(p["alpha"], p["beta"], p["variant"], J=p["J"])
    r = run_blowup(exp, Grid(p["h"]), drop_unresolved=p["drop_unresolved"])
    rows = [["t_j", "ratio_j", "oracle_lo", "oracle_hi"]]
    for i, (t, q) in enumerate(zip(r.times, r.ratios)):
        rows.append([t, q, r.oracle_lo[i] if r.oracle_lo else "", r.oracle_hi[i] if r.oracle_hi else ""])
    return r.summary(), {"blowup.csv": rows}


def _run_scaling(cfg):
    from .regularity import scaling_pair
    p = cfg.params
    out, rows = {}, [["r0", "seminorm_original", "seminorm_rescaled", "ratio", "expected"]]
    for r0 in p["r0"]:
        rep = scaling_pair(p["h"], r0, p["alpha"], _graph(p))
        out[str(r0)] = rep.to_dict()
        rows.append([r0, rep.seminorm_original, rep.seminorm_rescaled, rep.ratio, rep.expected])
    return out, {"scaling.csv": rows}


def _run_obstacle(cfg):
    from .obstacle import obstacle_demo
    p = cfg.params
    rows_, orders, consts = obstacle_demo(tuple(p["h"]), p["amplitude"], p["tilt"], p["window"])
    rows = [["h", "err_grad", "err_dt", "err_f", "min_dnu"]]
    rows += [[r.h, r.err_grad, r.err_dt, r.err_f, r.min_dnu] for r in rows_]
    return {"orders": orders, "constants": consts,
            "errors": [{"h": r.h, "err_grad": r.err_grad, "err_dt": r.err_dt, "err_f": r.err_f}
                       for r in rows_]}, {"errors.csv": rows}


RUNNERS = {"verify-approx": _run_verify, "caloric-basis": _run_basis, "solve": _run_solve,
           "harnack-exponent": _run_harnack, "iterate": _run_iterate, "counterexample": _run_counter,
           "scaling-check": _run_scaling, "obstacle-demo": _run_obstacle}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def _csv_bytes(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([repr(float(c)) if isinstance(c, (float, np.floating)) else c for c in row])
    return buf.getvalue().encode()


def _out_name(names, table):
    """Configured file name for a table, looked up by file name or by stem."""
    return names.get(table, names.get(table.rsplit(".", 1)[0], table))


def run(config: ExperimentConfig):
    """Run an experiment; returns {file name: bytes} with the report and tables."""
    np.random.seed(config.seed % 2 ** 32)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        results, tables = RUNNERS[config.kind](config)
    names = {"report": "report.json", **config.outputs}
    report = {
        "kind": config.kind, "config": {"params": config.params, "seed": config.seed},
        "config_sha256": config.digest(),
        "versions": {"parharnack": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "results": results, "tables": sorted(_out_name(names, t) for t in tables),
    }
    files = {names["report"]: (json.dumps(_jsonable(report), sort_keys=True, indent=1) + "\n").encode()}
    for t, rows in tables.items():
        files[_out_name(names, t)] = _csv_bytes(rows)
    return files


def write_atomic(files: dict, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    tmp = []
    try:
        for name, data in files.items():
            fd, path = tempfile.mkstemp(prefix=".tmp-", dir=out_dir)
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            tmp.append((path, os.path.join(out_dir, name)))
        for path, final in tmp:
            os.replace(path, final)
    finally:
        for path, _ in tmp:
            if os.path.exists(path):
                os.unlink(path)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="parharnack", description=__doc__.splitlines()[0])
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", help="TOML configuration file")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--seed", type=int, help="override the configured seed")
    args = ap.parse_args(argv)
    try:
        text = ""
        if args.config:
            try:
                with open(args.config, "rb") as fh:
                    text = fh.read().decode()
            except (OSError, UnicodeDecodeError) as e:
                raise ConfigError([f"config: cannot read {args.config}: {e}"]) from None
        cfg = parse(text, args.kind)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError(["--seed: must be in 0..2^64-1"])
            cfg = ExperimentConfig(cfg.kind, cfg.params, args.seed, cfg.outputs)
    except ConfigError as e:
        for msg in e.errors:
            print(f"error: {msg}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        files = run(cfg)
    except Exception as e:  # numerical and module failures
        print(f"error: {cfg.kind} failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    write_atomic(files, args.out)
    print(json.loads(files["report.json" if "report" not in cfg.outputs else cfg.outputs["report"]])
          .get("results", {}).get("summary", f"{cfg.kind}: ok"))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
