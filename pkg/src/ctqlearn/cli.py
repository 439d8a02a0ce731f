"""Command-line entry point: collect, train, evaluate, oracle.

Exit codes: 0 success/converged, 2 validation error, 3 numerical error,
4 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .basis import BasisSet, GainMatrix, QApprox, gain_from_theta
from .config import RunConfig, load_config
from .dynamics import MODELS, LinearModel, QuadraticCost, simulate_closed_loop
from .errors import ConfigError, DatasetFormatError, NumericalError
from .learner import (LearnerConfig, default_initial_theta, evaluate_policy, run_piql,
                      run_viql, trace_csv)
from .lqr_oracle import optimal_q_matrix, solve_care
from .sampling import collect_samples, load_dataset, save_dataset, split_holdout

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_NOT_CONVERGED = 0, 2, 3, 4
MODEL_FORMAT = "ctqlearn-model v1"

log = logging.getLogger("ctqlearn")


def _fmt(v):
    return format(float(v), ".17g")


def _mat_str(a):
    return np.array2string(np.atleast_2d(a), precision=6, suppress_small=False, floatmode="fixed")


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> RunConfig:
    overrides = {"seed": args.seed}
    if getattr(args, "algorithm", None):
        overrides["algorithm"] = args.algorithm
    return load_config(args.config, **overrides)


def cmd_collect(args):
    cfg = _config(args)
    model, cost = cfg.build_model(), cfg.build_cost()
    samples = collect_samples(model, cost, *cfg.bounds, cfg.M, cfg.delta_t, cfg.substeps, cfg.seed)
    samples.meta["config_hash"] = cfg.config_hash()
    path = Path(args.dataset) if args.dataset else _out_dir(args) / "dataset.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(samples, path)
    print(f"wrote {samples.M} samples to {path}")
    print(f"  model={samples.model} n={samples.n} m={samples.m} delta_t={samples.delta_t:g} "
          f"substeps={samples.substeps} seed={samples.seed} config_hash={cfg.config_hash()}")
    return EXIT_OK


def _initial_policy(cfg, basis):
    spec = cfg.initial_policy.strip()
    if spec == "zero":
        return GainMatrix.zero(basis.n, basis.m)
    vals = [float(v) for v in spec.split(",")]
    p = len(basis.gain_features)
    if len(vals) != basis.m * p:
        raise ConfigError(f"learner.initial_policy needs {basis.m * p} gain entries over features "
                          f"{basis.feature_labels()}")
    return GainMatrix(np.reshape(vals, (basis.m, p)), tuple(basis.gain_features), basis.n)


def _learner_config(cfg, basis, train):
    policy = _initial_policy(cfg, basis)
    spec = cfg.initial_theta.strip()
    if spec == "default":
        theta0 = default_initial_theta(basis)
    elif spec == "policy":
        theta0 = evaluate_policy(train, basis, policy, cfg.svd_tolerance)
    else:
        theta0 = np.array([float(v) for v in spec.split(",")])
        if theta0.shape != (basis.L,):
            raise ConfigError(f"learner.initial_theta needs {basis.L} entries")
    return LearnerConfig(cfg.xi, cfg.max_iterations, cfg.svd_tolerance, policy, theta0)


def cmd_train(args):
    cfg = _config(args)
    out = _out_dir(args)
    dataset = Path(args.dataset) if args.dataset else out / "dataset.csv"
    samples = load_dataset(dataset)
    basis = cfg.build_basis()
    if (samples.n, samples.m) != (basis.n, basis.m):
        raise ConfigError(f"dataset has n={samples.n}, m={samples.m} but the basis expects "
                          f"n={basis.n}, m={basis.m}")
    train, heldout = split_holdout(samples, cfg.holdout_fraction, cfg.holdout_seed)
    lcfg = _learner_config(cfg, basis, train)
    runner = run_piql if cfg.algorithm == "piql" else run_viql
    trace = runner(train, basis, lcfg, heldout=heldout)
    chash = cfg.config_hash()
    trace_path = out / f"trace_{cfg.algorithm}.csv"
    trace_path.write_text(trace_csv(trace, {"config_hash": chash}), encoding="utf-8")
    model_path = out / f"model_{cfg.algorithm}.json"
    if trace.records:
        _write_model(model_path, cfg, basis, trace, samples.delta_t, chash)
    print(f"{cfg.algorithm}: status={trace.status} iterations={trace.iterations}")
    if trace.message and trace.status != "converged":
        print(f"  {trace.message}")
    if trace.records and trace.gain is not None:
        print(f"  gain over {basis.feature_labels()}: {_mat_str(trace.gain.K)}")
    print(f"  trace -> {trace_path}")
    if trace.records:
        print(f"  model -> {model_path}")
    if trace.status == "converged":
        return EXIT_OK
    return EXIT_NUMERICAL if trace.status == "error" else EXIT_NOT_CONVERGED


def _write_model(path, cfg, basis, trace, delta_t, chash):
    cost = cfg.build_cost()
    doc = {
        "format": MODEL_FORMAT,
        "config_hash": chash,
        "algorithm": trace.algorithm,
        "status": trace.status,
        "iterations": trace.iterations,
        "model": cfg.model,
        "n": basis.n,
        "m": basis.m,
        "delta_t": delta_t,
        "S": cost.S.tolist(),
        "W": cost.W.tolist(),
        "basis": basis.labels(),
        "theta": [float(v) for v in trace.theta],
        "gain": None if trace.gain is None else {
            "features": trace.gain.feature_labels(), "K": trace.gain.K.tolist()},
    }
    if cfg.model == "linear":
        doc["A"], doc["B"] = cfg.A, cfg.B
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_model_file(path):
    """Return ``(model, cost, QApprox, doc)`` from a file written by ``train``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model file {path}: {exc}") from None
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigError(f"{path} is not a {MODEL_FORMAT} file")
    if doc["model"] == "linear":
        model = LinearModel(doc["A"], doc["B"])
    elif doc["model"] in MODELS:
        model = MODELS[doc["model"]]()
    else:
        raise ConfigError(f"unknown model {doc['model']!r} in {path}")
    basis = BasisSet.from_strings(doc["n"], doc["m"], doc["basis"])
    return model, QuadraticCost(doc["S"], doc["W"]), QApprox(basis, doc["theta"]), doc


def cmd_evaluate(args):
    if not args.model:
        raise ConfigError("evaluate needs --model PATH (a model file written by train)")
    model, cost, q, doc = load_model_file(args.model)
    x0 = args.x0
    horizon, step = args.horizon, args.step
    if args.config:
        cfg = load_config(args.config)
        x0 = x0 or cfg.x0
        horizon = horizon or cfg.horizon
        step = step or cfg.step
    if not x0:
        raise ConfigError("evaluate needs --x0 or a config with evaluate.x0")
    horizon = horizon or 30.0
    step = step or 0.01
    if len(x0) != model.n:
        raise ConfigError(f"x0 needs {model.n} entries")
    policy = gain_from_theta(q)
    t, X, U, J = simulate_closed_loop(model, cost, policy, x0, horizon, step)
    out = _out_dir(args)
    path = out / "trajectory.csv"
    lines = [f"# config_hash={doc.get('config_hash', '')}", f"# total_cost={_fmt(J[-1])}",
             ",".join(["t"] + [f"x{i + 1}" for i in range(model.n)]
                      + [f"u{i + 1}" for i in range(model.m)] + ["cost"])]
    for k in range(len(t)):
        lines.append(",".join(_fmt(v) for v in np.concatenate([[t[k]], X[k], U[k], [J[k]]])))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"closed-loop cost from x0={list(x0)} over T={horizon:g}: {J[-1]:.6f}")
    print(f"  trajectory -> {path}")
    return EXIT_OK


def cmd_oracle(args):
    cfg = _config(args)
    model = cfg.build_model()
    if not isinstance(model, LinearModel):
        raise ConfigError(f"oracle needs a linear model; {cfg.model!r} is nonlinear")
    cost = cfg.build_cost()
    sol = solve_care(model.A, model.B, cost.S, cost.W)
    dt = args.delta_t or cfg.delta_t
    oq = optimal_q_matrix(model.A, model.B, cost.S, cost.W, sol.P, dt)
    k_dt = oq.greedy_gain()
    print(f"P =\n{_mat_str(sol.P)}")
    print(f"K (u = -K x) = {_mat_str(sol.K)}  [{sol.iterations} Newton steps]")
    print(f"G (delta_t = {dt:g}) =\n{_mat_str(oq.G)}")
    print(f"G symmetric: {np.allclose(oq.G, oq.G.T, atol=1e-12)}; "
          f"G22 eigenvalues: {np.linalg.eigvalsh(oq.G22)}")
    print(f"finite-interval greedy gain (mu = K x) = {_mat_str(k_dt)}")
    if args.csv:
        out = _out_dir(args)
        path = out / "oracle.csv"
        rows = [f"# config_hash={cfg.config_hash()}", f"# delta_t={_fmt(dt)}", "quantity,row,col,value"]
        for name, mat in (("P", sol.P), ("K", sol.K), ("G", oq.G), ("K_dt", k_dt)):
            for (i, j), v in np.ndenumerate(np.atleast_2d(mat)):
                rows.append(f"{name},{i},{j},{_fmt(v)}")
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        print(f"  csv -> {path}")
    return EXIT_OK


def _floats(text):
    return [float(v) for v in text.split(",")]


def build_parser():
    parser = argparse.ArgumentParser(prog="ctqlearn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="config file path or preset name (example1, example2, scalar)")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="override sampling.seed")
        p.add_argument("--dataset", default=None, help="dataset path (default: OUT/dataset.csv)")

    p = sub.add_parser("collect", help="sample transitions and write a dataset")
    common(p)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="run PIQL or VIQL on a dataset")
    common(p)
    p.add_argument("--algorithm", choices=("piql", "viql"), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="simulate the learned greedy policy in closed loop")
    common(p, config_required=False)
    p.add_argument("--model", help="model file written by train")
    p.add_argument("--x0", type=_floats, default=None, help="initial state, comma separated")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--step", type=float, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="Riccati solution and finite-interval Q-matrix")
    common(p)
    p.add_argument("--delta-t", type=float, default=None)
    p.add_argument("--csv", action="store_true", help="also write OUT/oracle.csv")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
