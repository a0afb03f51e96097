"""Command-line entry point: ``privrep <subcommand> [--config PATH] ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .._backend import backend_name
from ..dp import InfeasibleBudget, PrivacySpec
from ..fedrep import heads_matrix
from ..jl import CoverTooLarge
from ..metrics import Diverged, excess_population_risk
from ..privinit import TooFewSamples, private_init
from ..subspace import RankDeficient, principal_dist
from ..synth import BatchBudgetExceeded, MarginInfeasible, dump_client_csv
from .config import ConfigError, ExperimentConfig, describe, from_mapping, load_config
from .output import emit_csv, emit_plot
from .runner import (
    CellFailure,
    build_class_problem,
    build_problem,
    override_seed,
    resolve_psi_init,
    run_classify,
    run_experiment,
    run_nonprivate_fedrep,
    run_private_fedrep,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
_NUMERIC = (np.linalg.LinAlgError, RankDeficient, Diverged, MarginInfeasible, TooFewSamples,
            FloatingPointError, CoverTooLarge)
_CONFIG = (ConfigError, InfeasibleBudget, BatchBudgetExceeded)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment file (defaults apply to missing keys)")
    common.add_argument("--seed", type=int, help="override the seed list with this single seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweep")
    common.add_argument("--out", type=Path, help="output directory (overrides output_dir)")

    ap = argparse.ArgumentParser(prog="privrep", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="dump one seed's planted model and user datasets as CSV")
    p.add_argument("--max-clients", type=int, default=20, help="number of user files to write (-1 = all)")
    p = sub.add_parser("train", parents=[common], help="one FedRep run; prints the per-round trace")
    p.add_argument("--epsilon", type=float, help="privacy budget (default: first in the config)")
    p.add_argument("--nonprivate", action="store_true", help="run without noise")
    p = sub.add_parser("init-only", parents=[common], help="the private spectral initialiser alone")
    p.add_argument("--epsilon", type=float, help="privacy budget for the initialiser")
    p.add_argument("--noise-off", action="store_true", help="skip noise and clipping")
    p = sub.add_parser("classify", parents=[common], help="the sketched margin-classifier pipeline")
    p.add_argument("--epsilon", type=float, help="privacy budget (default: first in the config)")
    sub.add_parser("sweep", parents=[common], help="full experiment: CSV and SVG into the output directory")
    sub.add_parser("describe-config", help="print every config key with its default")
    return ap


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else from_mapping({})
    return override_seed(cfg, args.seed)


def _epsilon(args, cfg: ExperimentConfig) -> float:
    if args.epsilon is not None:
        if not args.epsilon > 0:
            raise ConfigError("--epsilon", "must be positive")
        return args.epsilon
    if not cfg.privacy.epsilons:
        raise ConfigError("privacy.epsilons", "empty; pass --epsilon")
    return cfg.privacy.epsilons[0]


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return args.out if args.out else Path(cfg.output_dir)


def cmd_synth(args) -> None:
    cfg = _load(args)
    seed = cfg.seeds[0]
    model, _, fed = build_problem(cfg, seed)
    out = _out_dir(args, cfg)
    (out / "clients").mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "u_star.csv", model.u_star, delimiter=",", fmt="%.17g")
    np.savetxt(out / "v_star.csv", model.v_star, delimiter=",", fmt="%.17g")
    count = fed.n if args.max_clients < 0 else min(args.max_clients, fed.n)
    for i in range(count):
        dump_client_csv(fed.client(i), out / "clients" / f"client_{i:06d}.csv")
    print(f"seed {seed}: wrote U*, V* and {count} of {fed.n} user files to {out}")


def cmd_train(args) -> None:
    cfg = _load(args)
    seed = cfg.seeds[0]
    model, dist, fed = build_problem(cfg, seed)
    if args.nonprivate:
        label = "nonprivate"
        state, heads, trace = run_nonprivate_fedrep(cfg, model, fed, seed)
    else:
        eps = _epsilon(args, cfg)
        label = f"epsilon={eps:g}"
        psi_init = resolve_psi_init(cfg, model, dist, seed)
        state, heads, trace = run_private_fedrep(cfg, model, fed, eps, psi_init, seed)
    print(f"# FedRep {label}, seed {seed}, backend {backend_name()}")
    print(trace.format())
    risk = excess_population_risk(state.basis, heads_matrix(heads), model)
    print(f"final dist_to_ustar = {principal_dist(model.u_star, state.basis):.6g}")
    print(f"excess_mse = {risk:.6g}")


def cmd_init_only(args) -> None:
    cfg = _load(args)
    seed = cfg.seeds[0]
    model, dist, fed = build_problem(cfg, seed)
    if args.noise_off:
        U, rep = private_init(fed, None, model.k, seed)
    else:
        eps = _epsilon(args, cfg)
        psi_init = resolve_psi_init(cfg, model, dist, seed)
        init_spec = PrivacySpec(eps, cfg.privacy.delta, cfg.fedrep.psi, psi_init, max(cfg.fedrep.T, 1), fed.n)
        U, rep = private_init(fed, init_spec, model.k, seed)
    print(f"psi_init = {rep.psi_init:.6g}  sigma_init = {rep.sigma_init:.6g}  "
          f"clip_fraction = {rep.clip_fraction:.4g}  max_norm = {rep.max_stat_norm:.6g}")
    print(f"dist_to_ustar = {principal_dist(model.u_star, U):.6g}")


def cmd_classify(args) -> None:
    cfg = _load(args)
    seed = cfg.seeds[0]
    eps = _epsilon(args, cfg)
    cmodel, data = build_class_problem(cfg, seed)
    _, _, report, loss = run_classify(cfg, cmodel, data, eps, seed)
    print(f"k' = {report.k_prime}, cover size = {report.cover_size}"
          f"{' (heuristic)' if report.cover_heuristic else ''}")
    print(f"scores in [{report.score_min:.4g}, {report.score_max:.4g}]; selected {report.selected_index} "
          f"(score {report.selected_score:.4g}, rank {report.selected_rank})")
    print(f"population 0-1 loss = {loss:.6g}")


def cmd_sweep(args) -> None:
    cfg = _load(args)
    result = run_experiment(cfg, threads=args.threads)
    out = _out_dir(args, cfg)
    emit_csv(result, out / "results.csv")
    emit_plot(result, out / "results.svg")
    for method in dict.fromkeys(r.method for r in result.rows):
        for metric in ("excess_mse", "zero_one_loss"):
            means = result.mean_by_epsilon(method, metric)
            if means:
                cells = "  ".join(f"eps={'inf' if math.isinf(e) else f'{e:g}'}: {v:.4g}" for e, v in means.items())
                print(f"{method:18s} {metric}  {cells}")
    print(f"wrote {out / 'results.csv'} and {out / 'results.svg'}")


_COMMANDS = {"synth": cmd_synth, "train": cmd_train, "init-only": cmd_init_only, "classify": cmd_classify,
             "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "describe-config":
        print(describe())
        return EXIT_OK
    try:
        _COMMANDS[args.command](args)
    except _CONFIG as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CellFailure as exc:
        code = EXIT_NUMERIC if isinstance(exc.__cause__, _NUMERIC) else EXIT_CONFIG if isinstance(
            exc.__cause__, _CONFIG) else None
        if code is None:
            raise
        print(f"{'numerical failure' if code == EXIT_NUMERIC else 'config error'}: {exc}", file=sys.stderr)
        return code
    except _NUMERIC as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
