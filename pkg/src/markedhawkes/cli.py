"""Command-line interface: simulate, fit, density-fit, evaluate, predict, grid."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import evaluate as ev
from . import io
from .errors import ConfigError, HawkesError, PreconditionError
from .marks import fit_gmm, fit_gmm_auto
from .model import EventSequence
from .simulate import GeneratorSpec, simulate
from .train import FitConfig, fit

SEED_ENV = "MARKEDHAWKES_SEED"
log = logging.getLogger("markedhawkes")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"ERROR usage: {message}\n")
        raise SystemExit(1)


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return a, b


def _split(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        parts = ()
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected train,valid,test fractions, got {text!r}")
    return parts


def _load_source(args):
    if getattr(args, "model", None):
        return io.load_model(args.model).model
    if getattr(args, "preset", None):
        return io.PRESETS[args.preset]()
    if getattr(args, "spec", None):
        return io.load_spec(args.spec)
    raise ConfigError("give --model, --spec or --preset")


def _events(args) -> EventSequence:
    return io.ingest_events(args.events, args.format)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args):
    spec = _load_source(args)
    seq = simulate(spec, args.horizon, seed=args.seed)
    io.write_events(args.out, seq)
    print(f"{len(seq)} events written to {args.out} (counts {seq.counts().tolist()})")


def cmd_fit(args):
    seq = _events(args)
    cfg = FitConfig(neurons=args.neurons, batch_size=args.batch_size, lr_output=args.lr_output,
                    lr_hidden=args.lr_hidden, lr_mu=args.lr_mu, split=args.split,
                    patience=args.patience, max_epochs=args.max_epochs, seed=args.seed,
                    window=args.window)
    progress = (lambda r: log.info("epoch %d train %.6f valid %.6f", r.epoch, r.train_ll,
                                   r.valid_ll))
    model, trace = fit(seq, args.kind, cfg, progress=progress)
    meta = {"config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
            "trace": trace.summary()}
    io.save_model(args.out, model, meta)
    if args.trace:
        io.write_csv(args.trace, ["epoch", "train_ll", "valid_ll", "wall_time"],
                     [(r.epoch, r.train_ll, r.valid_ll, r.wall_time) for r in trace.records])
    print(f"model written to {args.out}; best epoch {trace.best_epoch}, "
          f"validation LL {trace.best_valid_ll:.6f}, stop: {trace.stop_reason}")


def cmd_density_fit(args):
    doc = io.load_model(args.model)
    seq = _events(args)
    if seq.dims != doc.model.dims:
        raise PreconditionError("event file and model have different dimensions")
    dens, chosen = [], []
    for d in range(seq.dims):
        marks = seq.dim_marks(d)
        if args.auto_k:
            g, _ = fit_gmm_auto(marks, seed=args.seed, log_space=args.log_space)
        else:
            g = fit_gmm(marks, args.k, seed=args.seed, log_space=args.log_space)
        dens.append(g)
        chosen.append(g.k)
    meta = dict(doc.metadata)
    meta["mark_density"] = {"k": chosen, "log_space": bool(args.log_space)}
    out = args.out or args.model
    io.save_model(out, doc.model.replace(mark_densities=tuple(dens)), meta)
    print(f"mark densities (k={chosen}) written to {out}")


def _test_indices(seq: EventSequence, doc_meta: dict, fraction: float | None) -> np.ndarray:
    if fraction is None:
        split = doc_meta.get("config", {}).get("split") or (0.70, 0.15, 0.15)
        n = len(seq)
        start = int(round(split[0] * n)) + int(round(split[1] * n))
    else:
        start = len(seq) - int(round(fraction * len(seq)))
    if start >= len(seq):
        raise PreconditionError("test split is empty")
    return np.arange(start, len(seq))


def _grid_ranges(source, seq: EventSequence, d, j, truth, t_range, m_range):
    if t_range is None:
        if truth is not None:
            t_range = ev.default_ranges(seq.dim_marks(j), ev.decay_scale(
                truth.kernels[d][j], float(np.median(seq.dim_marks(j)))))[0]
        else:
            t_range = (0.0, 4.0 * seq.horizon / max(len(seq), 1))
    if m_range is None:
        m_range = ev.default_ranges(seq.dim_marks(j), 1.0)[1]
    return t_range, m_range


def cmd_evaluate(args):
    doc = io.load_model(args.model)
    model = doc.model
    seq = _events(args)
    truth = io.load_spec(args.truth) if args.truth else None
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    idx = _test_indices(seq, doc.metadata, args.test_fraction)
    u = ev.pit_values(model, seq, idx)
    curve = ev.qq_curve(u, args.levels)
    io.write_csv(outdir / "qq.csv", ["q", "coverage"], curve.rows())
    io.write_csv(outdir / "pit.csv", ["index", "dim", "time", "u"],
                 [(int(n), int(seq.event_dims[n]), seq.times[n], v) for n, v in zip(idx, u)])
    tu, eu = ev.qq_pairs(u, "uniform")
    te, ee = ev.qq_pairs(u, "exponential")
    io.write_csv(outdir / "qq_pairs.csv",
                 ["theoretical_uniform", "empirical_uniform", "theoretical_exponential",
                  "empirical_exponential"], zip(tu, eu, te, ee))
    for d in range(model.dims):
        for j in range(model.dims):
            tr, mr = _grid_ranges(model, seq, d, j, truth, None, None)
            g = ev.kernel_grid(model, tr, mr, args.resolution, d, j)
            io.write_csv(outdir / f"kernel_{d}_{j}.csv", ["t", "m", "value"], g.rows())
            if truth is not None:
                err = g.abs_error(ev.kernel_grid(truth, tr, mr, args.resolution, d, j))
                io.write_csv(outdir / f"error_{d}_{j}.csv", ["t", "m", "value"], err.rows())
    print(f"{len(u)} test events; max |coverage - q| = {curve.max_deviation():.4f}; "
          f"KS p-value {ev.ks_uniform(u).pvalue:.4g}; outputs in {outdir}")


def cmd_predict(args):
    model = io.load_model(args.model).model
    if model.mark_densities is None:
        raise PreconditionError("model has no mark densities; run density-fit first")
    seq = _events(args)
    pred = ev.predict(model, seq, args.delta, args.sims, args.seed, threads=args.threads)
    io.write_csv(args.out, ["dimension", "quantity", "statistic", "value"], pred.rows())
    print(f"P(any event within {args.delta:g}) = {pred.p_any:.4f} "
          f"(analytic {pred.p_any_analytic:.4f}); summary in {args.out}")


def cmd_grid(args):
    source = _load_source(args)
    if args.t_range is None or args.m_range is None:
        raise ConfigError("grid needs --t-range and --m-range")
    dims = source.dims
    if not (0 <= args.d < dims and 0 <= args.j < dims):
        raise ConfigError(f"kernel index ({args.d}, {args.j}) outside a {dims}-dimensional model")
    g = ev.kernel_grid(source, args.t_range, args.m_range, args.resolution, args.d, args.j)
    io.write_csv(args.out, ["t", "m", "value"], g.rows())
    print(f"{g.values.size} grid values written to {args.out}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="markedhawkes", description=__doc__)
    p.add_argument("--threads", type=int, default=1, help="worker threads for simulations")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    seed = _default_seed()

    def source_args(sp, model=True):
        g = sp.add_mutually_exclusive_group()
        if model:
            g.add_argument("--model", help="model document (JSON)")
        g.add_argument("--spec", help="generator spec (JSON)")
        g.add_argument("--preset", choices=sorted(io.PRESETS), help="built-in generator spec")

    def events_args(sp):
        sp.add_argument("events", help="event file")
        sp.add_argument("--format", default="generic-csv", choices=["generic-csv", "trade-csv"])

    sp = sub.add_parser("simulate", help="simulate a process by thinning")
    source_args(sp, model=False)
    sp.add_argument("--horizon", type=float, required=True)
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="fit network kernels by maximum likelihood")
    events_args(sp)
    sp.add_argument("--kind", choices=["snh", "nnnh"], required=True)
    sp.add_argument("--out", required=True, help="model document to write")
    sp.add_argument("--trace", help="per-epoch trace CSV")
    d = FitConfig()
    sp.add_argument("--neurons", type=int, default=d.neurons)
    sp.add_argument("--batch-size", type=int, default=d.batch_size)
    sp.add_argument("--lr-output", type=float)
    sp.add_argument("--lr-hidden", type=float)
    sp.add_argument("--lr-mu", type=float, default=d.lr_mu)
    sp.add_argument("--split", type=_split, default=d.split)
    sp.add_argument("--patience", type=int, default=d.patience)
    sp.add_argument("--max-epochs", type=int, default=d.max_epochs)
    sp.add_argument("--window", type=float, help="kernel support cut-off in scaled time units")
    sp.add_argument("--seed", type=int, default=seed)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("density-fit", help="fit per-dimension GMM mark densities")
    sp.add_argument("model")
    events_args(sp)
    k = sp.add_mutually_exclusive_group()
    k.add_argument("--k", type=int, default=3)
    k.add_argument("--auto-k", action="store_true", help="choose k in 1..6 by BIC")
    sp.add_argument("--log-space", action="store_true", help="fit the mixture to log marks")
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--out", help="output document (default: update in place)")
    sp.set_defaults(func=cmd_density_fit)

    sp = sub.add_parser("evaluate", help="QQ/PIT diagnostics and kernel grids")
    sp.add_argument("model")
    events_args(sp)
    sp.add_argument("--outdir", required=True)
    sp.add_argument("--truth", help="generator spec for error grids")
    sp.add_argument("--test-fraction", type=float,
                    help="score the last fraction of events (default: the fit's test split)")
    sp.add_argument("--levels", type=int, default=99)
    sp.add_argument("--resolution", type=int, default=100)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("predict", help="simulation-based forecast after the history")
    sp.add_argument("model")
    events_args(sp)
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--sims", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("grid", help="kernel surface on a regular grid")
    source_args(sp)
    sp.add_argument("--d", type=int, default=0)
    sp.add_argument("--j", type=int, default=0)
    sp.add_argument("--t-range", type=_pair)
    sp.add_argument("--m-range", type=_pair)
    sp.add_argument("--resolution", type=int, default=100)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_grid)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except HawkesError as exc:
        sys.stderr.write(f"ERROR {exc.code}: {exc}\n")
        return exc.exit_status
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        sys.stderr.write("ERROR config: --threads must be >= 1\n")
        return 1
    try:
        args.func(args)
    except HawkesError as exc:
        sys.stderr.write(f"ERROR {exc.code}: {exc}\n")
        return exc.exit_status
    except OSError as exc:
        sys.stderr.write(f"ERROR io: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
