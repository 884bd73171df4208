"""Command-line front end.

Subcommands: ``synth``, ``fit-reference``, ``bounds``, ``sensitivity``,
``eot-solve`` and ``bridge-solve``.  Exit codes are 0 on success, 1 on a
solver failure and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bridge import PairwiseCost, PathLaw, auxiliary_endpoint, path_expectation, reconstruct_path_law, static_bridge
from .errors import DomainError, RobustDynError
from .eot import CostTensor, solve_against_scaled, worst_case_kernel
from .measures import Coupling, DiscreteMeasure, Grid, MarkovChain, discretize_ar1
from .sensitivity import (BoundCurve, GlobalBoundParams, ResultStore, SensitivityConfig, anneal_optimize,
                          curve_from_store, global_summary, local_sensitivity, robustness_metric)

log = logging.getLogger("robustdyn")

EXIT_OK, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or missing inputs (exit code 2)."""


# ---------------------------------------------------------------- helpers

def _read_json(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p} is not valid JSON: {exc}") from exc


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable))


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _git_describe(path):
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=str(Path(path).resolve().parent),
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None if out.returncode == 0 else None


def _manifest(args, inputs, config=None, extra=None):
    files = {}
    for p in inputs:
        p = Path(p)
        if p.is_dir():
            files.update({str(q): _sha256(q) for q in sorted(p.iterdir()) if q.is_file()})
        elif p.is_file():
            files[str(p)] = _sha256(p)
    man = {
        "version": __version__,
        "command": args.command,
        "argv": sys.argv[1:],
        "inputs": files,
        "git_describe": _git_describe(next(iter(files), ".")),
    }
    if config is not None:
        man["config"] = config.to_dict()
        man["config_hash"] = config.config_hash()
        man["seed"] = config.seed
        man["seed_source"] = "env" if os.environ.get("ROBUSTDYN_SEED") else "config"
    if extra:
        man.update(extra)
    return man


def _float_list(text):
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from exc


CONFIG_FLAGS = [f for f in fields(SensitivityConfig) if f.name != "radii"]
_INT_FIELDS = {"mcmc_steps", "opt_steps", "seed"}
_STR_FIELDS = {"temperature_stage"}


def _add_config_flags(p):
    g = p.add_argument_group("sensitivity configuration")
    g.add_argument("--config", help="JSON file with SensitivityConfig fields")
    g.add_argument("--radii", type=_float_list, help="KL radii, comma or space separated")
    for f in CONFIG_FLAGS:
        kind = int if f.name in _INT_FIELDS else str if f.name in _STR_FIELDS else float
        g.add_argument("--" + f.name.replace("_", "-"), type=kind, dest="cfg_" + f.name)


def _config(args):
    try:
        base = SensitivityConfig.from_dict(_read_json(args.config)) if getattr(args, "config", None) \
            else SensitivityConfig()
    except (RobustDynError, TypeError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc
    over = {f.name: getattr(args, "cfg_" + f.name, None) for f in CONFIG_FLAGS}
    if getattr(args, "radii", None) is not None:
        over["radii"] = args.radii
    env = os.environ.get("ROBUSTDYN_SEED")
    if env is not None:
        try:
            over["seed"] = int(env)
        except ValueError as exc:
            raise UsageError(f"ROBUSTDYN_SEED must be an integer, got {env!r}") from exc
    try:
        return base.with_overrides(**over)
    except RobustDynError as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


# ---------------------------------------------------------------- problem builders

def _car_inputs(args):
    from .synth import read_car_panel

    d = Path(args.input)
    panel = d / "panel.csv" if d.is_dir() else d
    if not panel.is_file():
        raise UsageError(f"no car panel at {panel}")
    s0, offsets = read_car_panel(panel)
    info = {}
    truth = panel.parent / "truth.json"
    if truth.is_file():
        info = json.loads(truth.read_text()).get("spec", {})
    return panel, s0, offsets, info


def _taxi_data_model(args):
    from .ddc import FiniteHorizonModel
    from .synth import read_taxi_panel

    d = Path(args.input)
    panel = d / "panel.csv" if d.is_dir() else d
    meta = Path(args.model) if getattr(args, "model", None) else panel.parent / "truth.json"
    if not panel.is_file():
        raise UsageError(f"no taxi panel at {panel}")
    if not meta.is_file():
        raise UsageError(f"taxi runs need beta, w_values and w_kernel; no file at {meta}")
    m = json.loads(meta.read_text())
    beta = m.get("beta", m.get("spec", {}).get("beta"))
    if beta is None or "w_values" not in m or "w_kernel" not in m:
        raise UsageError(f"{meta} lacks beta, w_values or w_kernel")
    hours, k_sets, N, ph, wi = read_taxi_panel(panel)
    g = Grid.uniform(-1.0, 1.0, 3)
    placeholder = MarkovChain(g, np.full((3, 3), 1 / 3))
    model = FiniteHorizonModel(float(beta), np.zeros(4), hours, k_sets, m["w_values"], m["w_kernel"], placeholder,
                               N, ph, wi)
    return panel, meta, model


def _fit_car(args, s0, info):
    from .ddc import fit_car_reference

    beta = args.beta if args.beta is not None else info.get("beta", 0.975)
    ref = fit_car_reference(s0, beta, n_points=args.n_points, width=args.width)
    return {"kind": "car", "gamma0": ref.gamma0, "gamma1": ref.gamma1, "sigma": ref.sigma, "beta": beta,
            "n_points": args.n_points, "width": args.width, "iterations": ref.iterations}


def _fit_taxi(args, model):
    from .ddc import eccp_first_stage, fit_taxi_reference

    est = eccp_first_stage(model, instrument=args.instrument)
    fitted = fit_taxi_reference(replace(model, theta=est.theta), n_xi=args.n_xi)
    return {"kind": "taxi", "theta": est.theta.tolist(), "theta_se": est.se.tolist(), "beta": model.beta,
            "mu_xi": fitted.mu_xi, "sd_xi": fitted.sd_xi, "rho": fitted.rho, "n_xi": args.n_xi,
            "iterations": fitted.iterations}


def _reference(args, kind, fit):
    """Reference dictionary and the file it came from (``None`` when fitted)."""
    if getattr(args, "fit_reference", False):
        return fit(), None
    path = Path(args.reference) if args.reference else Path(args.input) / "reference.json"
    if not path.is_file():
        raise UsageError(f"no reference at {path}; run fit-reference or pass --fit-reference")
    ref = _read_json(path)
    if ref.get("kind") != kind:
        raise UsageError(f"{path} holds a {ref.get('kind')!r} reference, expected {kind!r}")
    return ref, path


def build_problem(args):
    """Problem object, input paths and a JSON-friendly description."""
    from .ddc import InfiniteHorizonModel
    from .sensitivity import CarProblem, LinearProblem, PathLinearProblem, TaxiProblem

    mode = args.mode
    if mode == "car":
        panel, s0, offsets, info = _car_inputs(args)
        ref, ref_path = _reference(args, "car", lambda: _fit_car(args, s0, info))
        chain = discretize_ar1(ref["gamma0"], ref["gamma1"], ref["sigma"], int(ref["n_points"]), ref["width"])
        ev = info.get("ev_share")
        model = InfiniteHorizonModel(ref["beta"], chain, s0, offsets, info.get("alpha", -1.0),
                                     info.get("market_size", 1.0), ev, info.get("subsidy", 3000.0))
        t1 = len(s0) // 2 if args.t1 is None else args.t1
        prob = CarProblem(model, t1, functional=args.functional or "elasticity")
        inputs = [q for q in (panel, panel.parent / "truth.json", ref_path) if q is not None and Path(q).is_file()]
        return prob, inputs, {"mode": mode, "reference": ref, "t1": t1}
    if mode == "taxi":
        panel, meta, data = _taxi_data_model(args)
        ref, ref_path = _reference(args, "taxi", lambda: _fit_taxi(args, data))
        rho = ref["rho"]
        chain = discretize_ar1(ref["mu_xi"] * (1 - rho), rho, ref["sd_xi"] * np.sqrt(1 - rho * rho), int(ref["n_xi"]))
        model = replace(data, theta=np.asarray(ref["theta"]), xi_chain=chain)
        fn = args.functional or "stop"
        prob = TaxiProblem(model, functional=fn, hour=args.hour, start_hour=args.start_hour)
        return prob, [q for q in (panel, meta, ref_path) if q is not None], {"mode": mode, "reference": ref}
    spec = _read_json(args.input)
    if mode == "raw-eot":
        f0 = Coupling.from_dict(spec["reference"])
        s = np.asarray(spec["scalar"], dtype=float).reshape(f0.shape)
        moments = None
        if spec.get("moments"):
            from .ddc import MomentSystem
            mm = spec["moments"]
            moments = MomentSystem(np.asarray(mm["residuals"], dtype=float).reshape((-1,) + f0.shape),
                                   mm.get("target"), mm.get("eps", 0.0))
        return LinearProblem(f0, s, moments, spec.get("delta1", 0.0)), [args.input], {"mode": mode}
    if mode == "bridge":
        law, cost = _path_inputs(spec)
        return PathLinearProblem(law, cost, delta1=spec.get("delta1", 0.0)), [args.input], {"mode": mode}
    raise UsageError(f"unknown mode {mode!r}")


def _path_inputs(spec):
    grid = Grid(spec["grid"])
    kernels = tuple(np.asarray(k, dtype=float) for k in spec["kernels"])
    law = PathLaw(grid, DiscreteMeasure(grid, spec["initial"]), kernels)
    cost = PairwiseCost(tuple(np.asarray(c, dtype=float) for c in spec["costs"]))
    return law, cost


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    from .synth import SynthCarSpec, SynthTaxiSpec, gen_car_panel, gen_taxi_panel, write_car_panel, write_taxi_panel

    raw = _read_json(args.spec) if args.spec else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        if args.kind == "car":
            write_car_panel(gen_car_panel(SynthCarSpec.from_dict(raw)), args.out)
        else:
            write_taxi_panel(gen_taxi_panel(SynthTaxiSpec.from_dict(raw)), args.out)
    except (TypeError, DomainError) as exc:
        raise UsageError(f"bad spec: {exc}") from exc
    inputs = [args.spec] if args.spec else []
    _write_json(Path(args.out) / "manifest.json", _manifest(args, inputs, extra={"spec": raw, "kind": args.kind}))
    print(str(Path(args.out) / "panel.csv"))
    return EXIT_OK


def cmd_fit_reference(args):
    if args.mode == "car":
        panel, s0, _, info = _car_inputs(args)
        truth = panel.parent / "truth.json"
        ref, inputs = _fit_car(args, s0, info), [q for q in (panel, truth) if q.is_file()]
    else:
        panel, meta, data = _taxi_data_model(args)
        ref, inputs = _fit_taxi(args, data), [panel, meta]
    out = Path(args.out) if args.out else (Path(args.input) if Path(args.input).is_dir() else Path(args.input).parent)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "reference.json", ref)
    _write_json(out / "manifest.json", _manifest(args, inputs, extra={"reference": ref}))
    print(json.dumps(ref, default=_jsonable))
    return EXIT_OK


def _direction_worker(payload):
    args_dict, direction, cfg_dict = payload
    args = argparse.Namespace(**args_dict)
    prob, _, _ = build_problem(args)
    cfg = SensitivityConfig.from_dict(cfg_dict)
    store = ResultStore(cfg.violation_threshold, cfg.kl_rtol)
    anneal_optimize(prob, cfg, direction, store=store)
    curve = curve_from_store(store, cfg, (direction,))
    kernels = _kernels(store, cfg, (direction,))
    return curve.to_csv(), kernels


def _plan_json(ev):
    plan = ev.plan
    if isinstance(plan, Coupling):
        out = {"plan": plan.to_dict()}
        if plan.k == 2 and plan.shape[0] == plan.shape[1]:
            try:
                out["kernel"] = worst_case_kernel(plan).to_dict()
            except RobustDynError:
                pass
        return out
    if isinstance(plan, PathLaw):
        return {"grid": plan.grid.to_list(), "initial": plan.initial.weights.tolist(),
                "kernels": [k.tolist() for k in plan.kernels]}
    return {}


def _kernels(store, cfg, directions):
    out = {}
    for i, delta in enumerate(cfg.radii):
        for side in directions:
            ev = store.best(delta, side)
            if ev is not None:
                out[f"{i:02d}_{side}"] = {"delta": delta, "direction": side, "scalar": ev.scalar, "kl": ev.kl,
                                          "violation": ev.violation, **_plan_json(ev)}
    return out


def _write_kernels(out, kernels):
    kd = out / "kernels"
    kd.mkdir(exist_ok=True)
    for name, obj in kernels.items():
        _write_json(kd / f"delta_{name}.json", obj)


def cmd_bounds(args):
    cfg = _config(args)
    directions = ("lower", "upper") if args.direction == "both" else (args.direction,)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prob, inputs, desc = build_problem(args)
    partial = out / "bounds.csv.partial"
    man = _manifest(args, inputs, cfg, extra={"problem": desc, "directions": list(directions)})
    _write_json(out / "manifest.json.partial", man)
    if args.jobs > 1 and len(directions) > 1:
        payload = {k: v for k, v in vars(args).items() if k != "func"}
        if desc.get("reference") is not None:
            ref_path = out / "reference.json"
            _write_json(ref_path, desc["reference"])
            payload.update(reference=str(ref_path), fit_reference=False)
        with ProcessPoolExecutor(max_workers=min(args.jobs, len(directions))) as ex:
            res = list(ex.map(_direction_worker, [(payload, d, cfg.to_dict()) for d in directions]))
        curve = BoundCurve.from_csv(res[0][0])
        for text, _ in res[1:]:
            curve = curve.merge(BoundCurve.from_csv(text))
        kernels = {k: v for _, kk in res for k, v in kk.items()}
    else:
        store = ResultStore(cfg.violation_threshold, cfg.kl_rtol)

        def flush(j, delta, rate, st):
            curve_from_store(st, cfg, directions).to_csv(partial)
            log.info("outer %d delta %.3g acceptance %.3f archive %d", j, delta, rate, len(st))

        try:
            for d in directions:
                anneal_optimize(prob, cfg, d, store=store, callback=flush)
        except Exception:
            if len(store):
                curve_from_store(store, cfg, directions).to_csv(partial)
            raise
        curve = curve_from_store(store, cfg, directions)
        kernels = _kernels(store, cfg, directions)
    curve.to_csv(out / "bounds.csv")
    _write_kernels(out, kernels)
    man["reference_scalar"] = prob.reference().scalar
    _write_json(out / "manifest.json", man)
    for p in (partial, out / "manifest.json.partial"):
        if p.exists():
            p.unlink()
    print(str(out / "bounds.csv"))
    return EXIT_OK


def _config_hash_near(path):
    man = Path(path).parent / "manifest.json"
    if man.is_file():
        try:
            return json.loads(man.read_text()).get("config_hash")
        except json.JSONDecodeError:
            return None
    return None


def cmd_sensitivity(args):
    if args.measure in ("local", "global"):
        if not args.bounds or not Path(args.bounds).is_file():
            raise UsageError(f"no bounds file at {args.bounds}")
        curve = BoundCurve.from_csv(args.bounds)
        rep = {"measure": args.measure, "config_hash": _config_hash_near(args.bounds)}
        if args.measure == "local":
            lo, up = local_sensitivity(curve, args.delta0)
            rep.update(delta0=args.delta0, lower_slope=lo, upper_slope=up)
        else:
            params = None
            if args.L is not None and args.C is not None:
                params = GlobalBoundParams(args.L, args.C, args.p, tuple(args.dims or (1,)))
            rep.update(global_summary(curve, args.rtol, params, args.lambda_kl))
    else:
        if not args.thresholds:
            raise UsageError("robustness needs --thresholds")
        if not args.mode or not args.input:
            raise UsageError("robustness needs --mode and --input")
        cfg = _config(args)
        prob, inputs, desc = build_problem(args)
        store = ResultStore(cfg.violation_threshold, cfg.kl_rtol)
        ref = prob.reference().scalar
        rows = []
        for s_bar in args.thresholds:
            res = robustness_metric(prob, s_bar, cfg, args.direction, store=store)
            rows.append({"threshold": s_bar, "delta": res.delta if res.feasible else None,
                         "feasible": res.feasible, "scalar": res.scalar})
        rep = {"measure": "robustness", "direction": args.direction, "reference": ref, "results": rows,
               "config_hash": cfg.config_hash(), "problem": desc}
    text = json.dumps(rep, indent=1, default=_jsonable)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"sensitivity_{args.measure}.json").write_text(text)
    print(text)
    return EXIT_OK


def cmd_eot_solve(args):
    spec = _read_json(args.input)
    f0 = Coupling.from_dict(spec["reference"])
    cost = CostTensor(f0.grids, np.asarray(spec["cost"], dtype=float).reshape(f0.shape))
    lam = float(spec.get("lambda_kl", 1.0) if args.lambda_kl is None else args.lambda_kl)
    margs = None
    if spec.get("marginals"):
        margs = [DiscreteMeasure(g, w) for g, w in zip(f0.grids, spec["marginals"])]
    sol = solve_against_scaled(cost, f0, lam, margs, tol=args.tol)
    res = {"value": sol.value, "lambda_kl": lam, "iterations": sol.iterations, "residual": sol.residual,
           "potentials": [np.asarray(p).tolist() for p in sol.potentials], "plan": sol.plan.to_dict()}
    return _emit(args, "eot_solution.json", res)


def cmd_bridge_solve(args):
    spec = _read_json(args.input)
    law, cost = _path_inputs(spec)
    lam = float(spec.get("lambda_kl", 1.0) if args.lambda_kl is None else args.lambda_kl)
    nuT = DiscreteMeasure(law.grid, spec["terminal"]) if spec.get("terminal") else law.terminal
    R = auxiliary_endpoint(law, cost, lam)
    sol = static_bridge(R, law.initial, nuT, lam, tol=args.tol)
    new = reconstruct_path_law(law, cost, sol.potentials, lam)
    res = {"value": sol.value, "lambda_kl": lam, "expected_cost": path_expectation(new, cost),
           "initial": new.initial.weights.tolist(), "kernels": [k.tolist() for k in new.kernels]}
    return _emit(args, "bridge_solution.json", res)


def _emit(args, name, res):
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / name, res)
        _write_json(out / "manifest.json", _manifest(args, [args.input]))
    print(json.dumps({k: v for k, v in res.items() if k in ("value", "lambda_kl", "iterations", "expected_cost")}))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_problem_flags(p, required=True):
    p.add_argument("--mode", choices=("car", "taxi", "raw-eot", "bridge"), required=required)
    p.add_argument("--input", required=required, help="panel directory (car, taxi) or problem JSON")
    p.add_argument("--reference", help="reference.json from fit-reference")
    p.add_argument("--fit-reference", action="store_true", help="fit the reference law before the run")
    p.add_argument("--model", help="taxi model JSON with beta, w_values, w_kernel (default: truth.json)")
    p.add_argument("--functional", choices=("elasticity", "surplus", "cost", "stop", "frisch"))
    p.add_argument("--t1", type=int, help="car counterfactual period (default: middle)")
    p.add_argument("--hour", type=int, help="taxi hour for the stop-work elasticity (default: second to last)")
    p.add_argument("--start-hour", type=int, default=11)
    _add_fit_flags(p)


def _add_fit_flags(p):
    p.add_argument("--beta", type=float)
    p.add_argument("--n-points", type=int, default=51)
    p.add_argument("--width", type=float, default=3.0)
    p.add_argument("--n-xi", type=int, default=99)
    p.add_argument("--instrument", choices=("lag", "self"), default="lag")


def make_parser():
    ap = argparse.ArgumentParser(prog="robustdyn", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic panel")
    p.add_argument("kind", choices=("car", "taxi"))
    p.add_argument("--spec", help="JSON spec (defaults when omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit-reference", help="fit the reference AR(1) law of the latent state")
    p.add_argument("mode", choices=("car", "taxi"))
    p.add_argument("--input", required=True)
    p.add_argument("--model")
    p.add_argument("--out")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit_reference)

    p = sub.add_parser("bounds", help="bound curve over KL radii")
    _add_problem_flags(p)
    p.add_argument("--direction", choices=("lower", "upper", "both"), default="both")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (directions only)")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("sensitivity", help="local, global or robustness summaries")
    p.add_argument("measure", choices=("local", "global", "robustness"))
    p.add_argument("--bounds", help="bounds.csv (local, global)")
    p.add_argument("--delta0", type=float, default=0.0)
    p.add_argument("--rtol", type=float, default=1e-3)
    p.add_argument("--L", type=float)
    p.add_argument("--C", type=float)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--dims", type=lambda s: [int(x) for x in _float_list(s)])
    p.add_argument("--lambda-kl", type=float)
    p.add_argument("--thresholds", type=_float_list)
    p.add_argument("--direction", choices=("lower", "upper"), default="lower")
    p.add_argument("--out")
    _add_problem_flags(p, required=False)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sensitivity)

    for name, fn, helptext in (("eot-solve", cmd_eot_solve, "entropic OT against a reference coupling"),
                               ("bridge-solve", cmd_bridge_solve, "Schrodinger bridge over a Markov path law")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--input", required=True)
        p.add_argument("--lambda-kl", type=float)
        p.add_argument("--tol", type=float, default=1e-10)
        p.add_argument("--out")
        p.set_defaults(func=fn)
    return ap


def main(argv=None):
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if args.verbose == 0:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"robustdyn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RobustDynError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"robustdyn: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
