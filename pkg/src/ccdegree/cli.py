"""Command-line interface.

Every command prints (or writes with ``--out``) one JSON document carrying
``"schema": "cc-degree/1"``; ``trace`` writes CSV. Exit codes: 0 success,
2 invalid input, 3 numerical failure. Errors are reported as one line of
JSON on stderr and no output file is written.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import tempfile
from typing import Optional

import numpy as np

from .analysis import eom_spectrum, index_nondegenerate
from .cccore import (NewtonOptions, Sampler, build_problem, make_solution, multistart_solve,
                     newton_solve)
from .cluster import amplitudes_from_json, amplitudes_to_json, cluster_log, intermediate_normalize
from .fockspace import fci_solve
from .homotopy import (DegenerateZeroError, KPHomotopy, LinearHomotopy, OverlapError, SplitSpec,
                       TraceOptions, energy_error_estimate, kp_block_spectra, kp_existence_report, kp_verify,
                       trace_path, write_path_csv)
from .models import ModelSpec, build_model, load_integrals, save_integrals

SCHEMA = "cc-degree/1"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

DEFAULTS = {
    "model": "hubbard", "integrals": None, "N": None, "L": 2, "t_hop": 1.0, "U": 4.0,
    "periodic": False, "levels": 4, "gap": 1.0, "coupling": 0.5, "K": 6, "model_seed": 0,
    "scale": 1.0, "scheme": "full", "field": "real", "rho": 1, "seed": 0,
    "tol": 1e-10, "max_iter": 100, "scf_max_iter": 200, "scf_mixing": 0.5, "scf_tol": 1e-10,
}
PROBLEM_KEYS = ("model", "integrals", "N", "L", "t_hop", "U", "periodic", "levels", "gap",
                "coupling", "K", "model_seed", "scale", "scheme", "field",
                "scf_max_iter", "scf_mixing", "scf_tol")


class NumericalFailure(RuntimeError):
    """Raised for non-convergence and refusals on degenerate data."""


# ------------------------------------------------------------------ JSON

def _encode(x, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(x, dict):
        if not x:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in x.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(x, (list, tuple)):
        if not x:
            return "[]"
        if all(v is None or (isinstance(v, (int, float, np.integer, np.floating, bool))
                             and not isinstance(v, complex)) for v in x):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in x) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in x]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(x, np.ndarray):
        return _encode(x.tolist(), indent, level)
    if x is None or isinstance(x, (bool, np.bool_)):
        return json.dumps(None if x is None else bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (complex, np.complexfloating)):
        return _encode({"re": float(x.real), "im": float(x.imag)}, indent, level)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isnan(v):
            return '"NaN"'
        if math.isinf(v):
            return '"Infinity"' if v > 0 else '"-Infinity"'
        return format(v, ".17g")
    return json.dumps(str(x))


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float printed to 17 significant digits."""
    return _encode(obj, indent, 0) + "\n"


def _document(command: str, body: dict) -> dict:
    return {"schema": SCHEMA, "command": command, **body}


def _emit(text: str, out: Optional[str]):
    if out is None:
        sys.stdout.write(text)
        return
    folder = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".cc-degree-")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, out)


# ---------------------------------------------------------------- config

def resolve_config(args) -> dict:
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def model_spec(cfg: dict) -> ModelSpec:
    N = cfg["N"]
    if N is None:
        raise ValueError("particle number N is required")
    return ModelSpec(kind=cfg["model"], N=int(N), L=int(cfg["L"]), t_hop=float(cfg["t_hop"]),
                     U=float(cfg["U"]), periodic=bool(cfg["periodic"]), levels=int(cfg["levels"]),
                     gap=float(cfg["gap"]), coupling=float(cfg["coupling"]),
                     seed=int(cfg["model_seed"]), scale=float(cfg["scale"]), K=int(cfg["K"]))


def integrals_from_config(cfg: dict):
    if cfg.get("integrals"):
        if not os.path.isfile(cfg["integrals"]):
            raise FileNotFoundError(f"integral file not found: {cfg['integrals']}")
        if cfg["N"] is None:
            raise ValueError("particle number N is required")
        return load_integrals(cfg["integrals"])
    return build_model(model_spec(cfg))


def problem_from_config(cfg: dict, scheme: Optional[str] = None):
    ints = integrals_from_config(cfg)
    scf = {"max_iter": int(cfg["scf_max_iter"]), "mixing": float(cfg["scf_mixing"]),
           "tol": float(cfg["scf_tol"])}
    return build_problem(ints, int(cfg["N"]), scheme or cfg["scheme"], cfg["field"], scf)


def _problem_config(cfg: dict) -> dict:
    return {k: cfg[k] for k in PROBLEM_KEYS}


def _newton(cfg) -> NewtonOptions:
    return NewtonOptions(tol=float(cfg["tol"]), max_iter=int(cfg["max_iter"]))


def _solution_body(p, sol, cfg) -> dict:
    return {"config": _problem_config(cfg), "energy": sol.energy,
            "residual_inf": sol.residual_inf, "converged": sol.converged,
            "iterations": sol.iterations, "amplitudes": amplitudes_to_json(p.space, sol.t)}


def load_solution(path: str):
    """Rebuild the problem stored in a solution file and return ``(p, t, cfg)``."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"solution file not found: {path}")
    with open(path) as fh:
        data = json.load(fh)
    if data.get("schema") != SCHEMA or "config" not in data:
        raise ValueError(f"{path} is not a {SCHEMA} solution file")
    cfg = dict(DEFAULTS)
    cfg.update(data["config"])
    p, _ = problem_from_config(cfg)
    t = amplitudes_from_json(p.space, data["amplitudes"])
    if p.field == "complex":
        t = t.astype(complex)
    return p, t, cfg


# -------------------------------------------------------------- commands

def cmd_model(args, cfg):
    spec = model_spec(cfg)
    ints = build_model(spec)
    if args.integrals_out:
        save_integrals(ints, args.integrals_out, header=f"{spec.kind} model")
    return dumps(_document("model", {"config": _problem_config(cfg), "K": ints.K,
                                     "constant": ints.constant, "h": ints.h.real,
                                     "integrals_file": args.integrals_out}))


def cmd_scf(args, cfg):
    ints = integrals_from_config(cfg)
    from .models import scf_solve
    mf = scf_solve(ints, int(cfg["N"]), max_iter=int(cfg["scf_max_iter"]),
                   mixing=float(cfg["scf_mixing"]), tol=float(cfg["scf_tol"]))
    if not mf.converged:
        raise NumericalFailure("SCF did not converge")
    body = mf.to_json()
    body["degenerate_aufbau"] = bool(mf.degenerate_aufbau)
    return dumps(_document("scf", {"config": _problem_config(cfg), **body}))


def cmd_fci(args, cfg):
    p, mf = problem_from_config(cfg)
    w, V = fci_solve(p.H)
    n = len(w) if args.states is None else min(args.states, len(w))
    states = [{"energy": float(w[k]), "reference_weight": float(abs(V[0, k]) ** 2)}
              for k in range(n)]
    return dumps(_document("fci", {"config": _problem_config(cfg), "dimension": len(w),
                                   "states": states}))


def _start_amplitudes(p, args):
    if args.start == "fci":
        if not p.space.is_full:
            raise ValueError("--start fci requires the full scheme")
        w, V = fci_solve(p.H)
        if not 0 <= args.state < len(w):
            raise ValueError(f"state {args.state} out of range")
        t = cluster_log(p.space, intermediate_normalize(p.space, V[:, args.state]))
        return t.astype(p.dtype)
    return p.zeros()


def cmd_solve(args, cfg):
    p, _ = problem_from_config(cfg)
    sol = newton_solve(p, _start_amplitudes(p, args), _newton(cfg))
    if not sol.converged:
        raise NumericalFailure(f"Newton did not converge: {sol.message} "
                               f"(residual {sol.residual_inf:.3e})")
    return dumps(_document("solve", _solution_body(p, sol, cfg)))


def cmd_multistart(args, cfg):
    p, _ = problem_from_config(cfg)
    sampler = Sampler(seed=int(cfg["seed"]), radius=args.radius, count=args.count)
    sols = multistart_solve(p, sampler, _newton(cfg), workers=args.workers)
    items = [{"energy": s.energy, "residual_inf": s.residual_inf,
              "amplitudes": amplitudes_to_json(p.space, s.t)} for s in sols]
    return dumps(_document("multistart", {"config": _problem_config(cfg), "count": args.count,
                                          "radius": args.radius, "distinct": len(sols),
                                          "solutions": items}))


def cmd_index(args, cfg):
    p, t, _ = load_solution(args.solution)
    rep = index_nondegenerate(p, make_solution(p, t))
    return dumps(_document("index", rep.to_json()))


def cmd_eom(args, cfg):
    p, t, _ = load_solution(args.solution)
    rep = eom_spectrum(p, t)
    return dumps(_document("eom", {"nu": rep.nu, "index": rep.index,
                                   "excitation_energies": list(rep.excitation_energies)}))


def _homotopy(p, cfg, args, t):
    split = SplitSpec(int(cfg["rho"]))
    if getattr(args, "homotopy", "kp") == "linear":
        _, ma = split.masks(p)
        return LinearHomotopy(p, split, args.alpha, np.where(ma, t, 0)), split
    return KPHomotopy(p, split), split


def _trace(p, cfg, args, t):
    h, split = _homotopy(p, cfg, args, t)
    opts = TraceOptions(step=args.step, min_step=args.min_step, tol=args.corrector_tol)
    path = trace_path(h, t, opts=opts)
    if not path.completed:
        raise NumericalFailure(f"path broke down: {json.dumps(path.breakdown)}")
    return path, split


def _require_zero(p, t, cfg):
    sol = make_solution(p, t, tol=float(cfg["tol"]))
    if not sol.converged:
        raise NumericalFailure(f"solution residual {sol.residual_inf:.3e} exceeds tolerance")
    return sol


def cmd_trace(args, cfg):
    p, t, scfg = load_solution(args.solution)
    scfg["rho"] = cfg["rho"]
    _require_zero(p, t, cfg)
    path, _ = _trace(p, scfg, args, t)
    buf = io.StringIO()
    write_path_csv(path, buf)
    return buf.getvalue()


def cmd_kp_verify(args, cfg):
    p, t, scfg = load_solution(args.solution)
    scfg["rho"] = cfg["rho"]
    _require_zero(p, t, cfg)
    path, split = _trace(p, scfg, args, t)
    w, V = fci_solve(p.H)
    psi, E = V[:, args.state], float(w[args.state])
    points = []
    for pt in path.points:
        r = kp_verify(p, split, psi, E, pt.t, pt.lam)
        points.append(r.to_json())
    worst = max(pt["residual"] for pt in points)
    blocks = kp_block_spectra(p, split, path.end.t).to_json()
    return dumps(_document("kp-verify", {"rho": split.rho, "state": args.state, "energy": E,
                                         "max_residual": worst, "endpoint_index": blocks,
                                         "points": points}))


def cmd_kp_exist(args, cfg):
    p, t, _ = load_solution(args.solution)
    _require_zero(p, t, cfg)
    rep = kp_existence_report(p, SplitSpec(int(cfg["rho"])), t, alpha=args.alpha_exist,
                              epsilon=args.epsilon, delta=args.delta, norm=args.norm,
                              samples=args.samples, seed=int(cfg["seed"]))
    return dumps(_document("kp-exist", rep.to_json()))


def cmd_error_est(args, cfg):
    p, t, scfg = load_solution(args.solution)
    scfg["rho"] = cfg["rho"]
    _require_zero(p, t, cfg)
    args.homotopy = "kp"
    path, split = _trace(p, scfg, args, t)
    rep = energy_error_estimate(p, split, path.end.t, t, samples=args.samples)
    return dumps(_document("error-est", {"rho": split.rho, **rep.to_json()}))


# ---------------------------------------------------------------- parser

def _problem_flags(ap):
    g = ap.add_argument_group("problem")
    g.add_argument("--config", help="JSON file with problem settings; flags override it")
    g.add_argument("--model", choices=("hubbard", "pairing", "random"))
    g.add_argument("--integrals", help="integral file (overrides --model)")
    g.add_argument("--N", type=int)
    g.add_argument("--L", type=int)
    g.add_argument("--t-hop", dest="t_hop", type=float)
    g.add_argument("--U", type=float)
    g.add_argument("--periodic", action="store_true", default=None)
    g.add_argument("--levels", type=int)
    g.add_argument("--gap", type=float)
    g.add_argument("--coupling", type=float)
    g.add_argument("--K", type=int)
    g.add_argument("--model-seed", dest="model_seed", type=int)
    g.add_argument("--scale", type=float)
    g.add_argument("--scheme")
    g.add_argument("--field", choices=("real", "complex"))
    g.add_argument("--scf-max-iter", dest="scf_max_iter", type=int)
    g.add_argument("--scf-mixing", dest="scf_mixing", type=float)
    g.add_argument("--scf-tol", dest="scf_tol", type=float)
    g.add_argument("--tol", type=float)
    g.add_argument("--max-iter", dest="max_iter", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output file (default: stdout)")


def _path_flags(ap):
    ap.add_argument("--solution", required=True)
    ap.add_argument("--rho", type=int)
    ap.add_argument("--step", type=float, default=0.05)
    ap.add_argument("--min-step", dest="min_step", type=float, default=1e-4)
    ap.add_argument("--corrector-tol", dest="corrector_tol", type=float, default=1e-11)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cc-degree",
                                 description="Coupled-cluster zeros, indices and homotopies.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        _problem_flags(sp)
        sp.set_defaults(func=func)
        return sp

    sp = add("model", cmd_model, "build model integrals")
    sp.add_argument("--integrals-out", dest="integrals_out")
    add("scf", cmd_scf, "mean-field orbitals and energies")
    sp = add("fci", cmd_fci, "exact sector spectrum")
    sp.add_argument("--states", type=int)
    for name in ("solve", "cc"):
        sp = add(name, cmd_solve, "Newton solve of the CC equations")
        sp.add_argument("--start", choices=("zero", "fci"), default="zero")
        sp.add_argument("--state", type=int, default=0)
    sp = add("multistart", cmd_multistart, "Newton from random starts")
    sp.add_argument("--count", type=int, default=50)
    sp.add_argument("--radius", type=float, default=1.0)
    sp.add_argument("--workers", type=int)
    sp = add("index", cmd_index, "local index of a stored zero")
    sp.add_argument("--solution", required=True)
    sp = add("eom", cmd_eom, "Jacobian spectrum at a stored zero")
    sp.add_argument("--solution", required=True)
    sp = add("trace", cmd_trace, "trace a homotopy path to lambda = 0 (CSV)")
    _path_flags(sp)
    sp.add_argument("--homotopy", choices=("kp", "linear"), default="kp")
    sp.add_argument("--alpha", type=float, default=1.0)
    sp = add("kp-verify", cmd_kp_verify, "energy-defect identity along a traced path")
    _path_flags(sp)
    sp.add_argument("--state", type=int, default=0)
    sp = add("kp-exist", cmd_kp_exist, "existence constants at a full zero")
    sp.add_argument("--solution", required=True)
    sp.add_argument("--rho", type=int)
    sp.add_argument("--alpha", dest="alpha_exist", type=float)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--norm", choices=("ell2", "fock"), default="ell2")
    sp.add_argument("--samples", type=int, default=128)
    sp = add("error-est", cmd_error_est, "a posteriori energy error bound")
    _path_flags(sp)
    sp.add_argument("--samples", type=int, default=64)
    return ap


def _fail(kind: str, exc: BaseException, code: int) -> int:
    msg = {"schema": SCHEMA, "error": kind, "type": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(msg) + "\n")
    return code


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INVALID if e.code else EXIT_OK
    try:
        cfg = resolve_config(args)
        text = args.func(args, cfg)
        _emit(text, args.out)
    except (RuntimeError, OverlapError, DegenerateZeroError, np.linalg.LinAlgError,
            FloatingPointError) as e:
        return _fail("numerical", e, EXIT_NUMERICAL)
    except (ValueError, TypeError, KeyError, OSError, json.JSONDecodeError) as e:
        return _fail("validation", e, EXIT_INVALID)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
