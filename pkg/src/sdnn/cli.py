"""Command-line entry point: ``sdnn <subcommand> ...``.

Output paths that are relative are placed under ``$SDNN_OUTPUT_ROOT`` when
it is set.  Failures print one JSON line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import reference as ref
from .config import load_config
from .errors import ConfigError, SdnnError
from .model import load_checkpoint
from .optim import DEFAULT_EPSILON, sparsity_report
from .runner import OUTPUT_ROOT_ENV, compare, evaluate, grid_search, resolve_output, run

EXIT_ERROR = 2


def _out_path(p: str) -> Path:
    path = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_train(args):
    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg = cfg.but(epochs=args.epochs)
    if args.output_dir:
        cfg = cfg.but(output_dir=args.output_dir)
    report = run(cfg)
    print(report.summary())
    print(f"artifacts in {resolve_output(cfg)}")


def cmd_evaluate(args):
    cfg = load_config(args.test_spec)
    err, sp = evaluate(args.checkpoint, cfg)
    print(json.dumps({"relative_l2": err, "zero_percent": sp.zero_percent, "nonzero": sp.total_nonzero}))


def cmd_reference(args):
    import numpy as np

    if args.problem == "burgers":
        t = np.linspace(0.0, 1.0, args.nt)
        x = np.linspace(-1.0, 1.0, args.nx)
        field = ref.burgers_field(t, x, args.n_quad)
    else:
        t = np.linspace(0.0, ref.NLS_T_END, args.nt)
        field = ref.nls_spectral_solve(args.modes, args.dt, ref.NLS_T_END, t).with_periodic_endpoint()
    stem = _out_path(args.out)
    field.to_csv(stem.with_suffix(".csv"))
    field.save(stem.with_suffix(".grid"))
    print(f"wrote {stem.with_suffix('.csv')} and {stem.with_suffix('.grid')}")


def _load_candidates(path):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read candidates {path}: {exc}") from exc
    if isinstance(data, dict):
        return data.get("candidates"), data
    return data, {}


def cmd_gridsearch(args):
    base = load_config(args.config)
    cands, opts = _load_candidates(args.candidates)
    result = grid_search(
        base,
        cands,
        max_runs=args.max_runs or opts.get("max_runs", 1000),
        penalty=args.penalty if args.penalty is not None else opts.get("penalty", 0.0),
        sparsity_floor=args.sparsity_floor if args.sparsity_floor is not None else opts.get("sparsity_floor"),
        workers=args.workers,
    )
    out = resolve_output(base)
    out.mkdir(parents=True, exist_ok=True)
    (out / "gridsearch_trace.csv").write_text(result.trace_csv())
    (out / "best.cfg").write_text(result.best.echo())
    print(json.dumps({"alpha": list(result.best.alpha_vector), "runs": len(result.trace)}))


def cmd_compare(args):
    a, b = load_config(args.config_a), load_config(args.config_b)
    table = compare(a, b, labels=(args.label_a, args.label_b))
    print(table.to_text(), end="")
    if args.csv:
        _out_path(args.csv).write_text(table.to_csv())


def cmd_sparsity(args):
    net = load_checkpoint(args.checkpoint).net
    print(sparsity_report(net, args.epsilon).format())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdnn", description="Layer-wise L1 sparse DNNs for regression and PINNs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a network from a config file")
    s.add_argument("config")
    s.add_argument("--epochs", type=int)
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="test error and sparsity of a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("test_spec", help="config file describing the problem and test grid")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("reference", help="write a reference solution grid (CSV + binary)")
    s.add_argument("problem", choices=["burgers", "nls"])
    s.add_argument("--out", default="reference")
    s.add_argument("--nt", type=int, default=101)
    s.add_argument("--nx", type=int, default=256, help="burgers only; nls uses the spectral nodes")
    s.add_argument("--n-quad", type=int, default=100)
    s.add_argument("--modes", type=int, default=256)
    s.add_argument("--dt", type=float, default=ref.NLS_T_END * 1e-4)
    s.set_defaults(func=cmd_reference)

    s = sub.add_parser("gridsearch", help="layer-by-layer search over alpha")
    s.add_argument("config")
    s.add_argument("candidates", help="JSON list of per-layer candidate lists, or an object with 'candidates'")
    s.add_argument("--max-runs", type=int)
    s.add_argument("--penalty", type=float)
    s.add_argument("--sparsity-floor", type=float)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_gridsearch)

    s = sub.add_parser("compare", help="train two configs differing only in alpha")
    s.add_argument("config_a")
    s.add_argument("config_b")
    s.add_argument("--label-a", default="dense")
    s.add_argument("--label-b", default="sdnn")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("sparsity", help="per-layer sparsity of a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    s.set_defaults(func=cmd_sparsity)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except SdnnError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
