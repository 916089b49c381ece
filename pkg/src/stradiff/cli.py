"""Command-line entry point: ``stradiff generate|train|estimate|selfcheck``.

Exit status: 0 success, 1 usage or config error, 2 data error,
3 numerical fault (including a failing self-check).
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import FIELD_TYPES, ConfigError, load_config, shipped_config
from .datagen import generate
from .errors import CheckpointError, GenerationFailure, NumericalFault, StradiffError
from .estimate import match_sources, mc_estimate, plug_in_reconstruction
from .objective import fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--preset", help="name of a shipped config (linear, linear_ci, nonlinear)")
    group = p.add_argument_group("config overrides")
    for key in FIELD_TYPES:
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        group.add_argument(*flags, dest=f"cfg_{key}", metavar="VALUE", default=None)


def build_parser():
    p = _Parser(prog="stradiff", description="Source separation with per-source diffusion generators")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="write synthetic sources, mixtures and mixing matrices")
    _add_config_flags(g)

    t = sub.add_parser("train", help="fit the model to a mixture file")
    _add_config_flags(t)
    t.add_argument("--data", help="mixture CSV (default: <out_dir>/mixture.csv)")
    t.add_argument("--truth", help="true sources CSV for correlation tracking "
                                   "(default: <out_dir>/sources.csv when present)")
    t.add_argument("--no-truth", action="store_true", help="do not track correlations")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--checkpoint", help="output checkpoint (default: <out_dir>/checkpoint.ckpt)")

    e = sub.add_parser("estimate", help="Monte Carlo source estimates from a checkpoint")
    _add_config_flags(e)
    e.add_argument("--checkpoint", help="checkpoint file (default: <out_dir>/checkpoint.ckpt)")
    e.add_argument("--truth", help="true sources CSV (default: <out_dir>/sources.csv when present)")
    e.add_argument("--no-truth", action="store_true")

    s = sub.add_parser("selfcheck", help="run the fast numerical self-checks")
    s.add_argument("--quick", action="store_true", help="reduced instance counts")
    return p


def _overrides(args):
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}


def _config(args):
    if args.config and args.preset:
        raise UsageError("give at most one of --config and --preset")
    path = args.config or (shipped_config(args.preset) if args.preset else None)
    return load_config(path, _overrides(args))


def _out_dir(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _truth_path(args, out):
    if args.no_truth:
        return None
    if args.truth:
        return Path(args.truth)
    default = out / "sources.csv"
    return default if default.is_file() else None


def cmd_generate(args):
    cfg = _config(args)
    out = _out_dir(cfg)
    S, Y, truth = generate(cfg.experiment_spec())
    t = np.linspace(0.0, 1.0, cfg.T)
    io.write_series(out / "sources.csv", t, S, "s")
    io.write_series(out / "mixture.csv", t, Y, "y")
    io.write_mixing(out / "mixing.csv", truth)
    print(f"wrote sources.csv, mixture.csv, mixing.csv to {out}")
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    out = _out_dir(cfg)
    _, Y = io.read_series(args.data or out / "mixture.csv")
    truth = None
    tp = _truth_path(args, out)
    if tp is not None:
        _, truth = io.read_series(tp)
        if truth.shape != (Y.shape[0], cfg.n):
            raise ValueError(f"truth has shape {truth.shape}, expected {(Y.shape[0], cfg.n)}")
    state = None
    if args.resume:
        state, _ = io.load_state(args.resume)
        if state.T != Y.shape[0] or state.m != Y.shape[1]:
            raise CheckpointError("checkpoint does not match the data dimensions")
    train_cfg = cfg.train_config()
    if state is not None:
        state.config = train_cfg
    every = max(1, cfg.epochs // 20)

    def progress(st, b):
        if b.epoch % every == 0:
            line = (f"epoch {b.epoch:6d} total {b.total:.5g} rec {b.rec:.4g} prior {b.prior:.4g} "
                    f"diff {b.diff:.4g} kl {b.kl:.4g} ell "
                    + " ".join(f"{v:.4g}" for v in st.lengthscales()))
            if truth is not None:
                corr = match_sources(st.last_sources, truth).correlations
                line += " corr " + " ".join(f"{c:.3f}" for c in corr)
            print(line, flush=True)

    state, report = fit(Y, train_cfg, truth=truth, state=state, callback=progress)
    io.write_report(out / "report.csv", report, state.T)
    for epoch, paths in sorted(report.snapshots.items()):
        io.write_paths(out, epoch, paths)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.ckpt"
    io.save_state(ckpt, state, cfg)
    if truth is not None and report.correlations:
        print("final matched correlations:", " ".join(f"{c:.4f}" for c in report.correlations[-1]))
    print(f"wrote report.csv and {ckpt.name} to {out}")
    return EXIT_OK


def cmd_estimate(args):
    cfg = _config(args)
    out = _out_dir(cfg)
    state, _ = io.load_state(args.checkpoint or out / "checkpoint.ckpt")
    rng = np.random.default_rng([cfg.seed, 0xE57])
    est = mc_estimate(state, cfg.R, rng, cfg.batch_size)
    n = state.n
    header = ["t"]
    cols = [state.t]
    for name, M in (("mean", est.mean), ("std", est.std), ("band_lo", est.band_lo), ("band_hi", est.band_hi)):
        header += [f"{name}_{k + 1}" for k in range(n)]
        cols.append(M)
    tp = _truth_path(args, out)
    match = None
    if tp is not None:
        _, truth = io.read_series(tp)
        if truth.shape != est.mean.shape:
            raise ValueError(f"truth has shape {truth.shape}, estimate has {est.mean.shape}")
        match = match_sources(est.mean, truth)
        aligned = np.empty_like(truth)
        for j, k in enumerate(match.permutation):
            aligned[:, k] = match.signs[j] * truth[:, j]
        header += [f"truth_{k + 1}" for k in range(n)]
        cols.append(aligned)
    io.write_csv(out / "estimate.csv", header, np.column_stack(cols))
    if match is not None:
        rows = [[j + 1, k + 1, match.signs[j], match.correlations[j], match.mean_corr]
                for j, k in enumerate(match.permutation)]
        io.write_csv(out / "match_summary.csv",
                     ["true_source", "estimated_source", "sign", "abs_corr", "mean_corr"], rows)
        print(f"mean matched correlation {match.mean_corr:.4f}")
    Yhat = plug_in_reconstruction(state, est)
    io.write_series(out / "reconstruction.csv", state.t, Yhat, "y")
    print(f"wrote estimate.csv{', match_summary.csv' if match else ''}, reconstruction.csv to {out}")
    return EXIT_OK


def cmd_selfcheck(args):
    from .selfcheck import run_all
    ok = run_all(quick=args.quick)
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {"generate": cmd_generate, "train": cmd_train,
            "estimate": cmd_estimate, "selfcheck": cmd_selfcheck}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFault as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except np.linalg.LinAlgError as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, GenerationFailure, StradiffError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
