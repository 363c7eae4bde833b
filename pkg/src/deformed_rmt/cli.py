"""Command-line front end.

Each subcommand reads a model JSON file ``{"c": ..., "nu": [[t, w], ...],
"spikes": [[omega_sq, multiplicity], ...]}`` and writes machine-readable
results: JSON to ``<out>.json`` (stdout when ``--out`` is omitted) and, where
relevant, curve or sample data to ``<out>.csv``.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import (
    ConsistencyError,
    ConvergenceError,
    DeformedRMTError,
    DomainError,
    InvalidInputError,
    SingularityError,
)
from .fluctuations import compute_bias, fluctuation_report, sample_limit_law
from .linalg import make_rng
from .measure import ModelSpec
from .outliers import design_spikes, find_outliers
from .simulate import (
    DEFAULT_SEED,
    SAMPLER_STREAM,
    THREADS_ENV,
    RealizationConfig,
    build_realization,
    experiment_density,
    experiment_fluctuations,
    run_trials,
)
from .stieltjes import DEFAULT_GRID_POINTS, density
from .support import compute_support, emit_xm_curve

EXIT_CODES = [
    (0, "success"),
    (1, "unexpected internal error"),
    (2, "command-line usage error"),
    (3, "invalid input (unreadable file, bad JSON, invalid model)"),
    (4, "domain error (point inside the support, unreachable target)"),
    (5, "singularity (resolvent or denominator vanishes)"),
    (6, "numerical non-convergence"),
    (7, "internal consistency check failed"),
]


def _epilog():
    codes = "\n".join(f"  {code}  {text}" for code, text in EXIT_CODES)
    return (
        f"exit codes:\n{codes}\n\n"
        f"environment:\n  {THREADS_ENV}  number of worker processes for Monte Carlo trials\n\n"
        f"default seed: {DEFAULT_SEED}"
    )


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _write(args, payload, csv_text=None, csv_suffix=".csv"):
    text = json.dumps(_plain(payload), indent=2) + "\n"
    if args.out is None:
        sys.stdout.write(text)
        return
    base = Path(args.out)
    base.parent.mkdir(parents=True, exist_ok=True)
    with open(base.with_name(base.name + ".json"), "w", newline="\n") as fh:
        fh.write(text)
    if csv_text is not None:
        with open(base.with_name(base.name + csv_suffix), "w", newline="\n") as fh:
            fh.write(csv_text)


def _load_model(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read model file {path}: {exc}") from exc
    return ModelSpec.from_json(text)


def _select_gap(support, index):
    gaps = support.gaps
    if index is None:
        return gaps[-1]
    if not -len(gaps) <= index < len(gaps):
        raise InvalidInputError(f"gap index {index} out of range for {len(gaps)} gaps")
    return gaps[index]


def _cmd_density(args, spec):
    grid = None
    if args.grid is not None:
        support = compute_support(spec.without_spikes())
        top = max(support.upper_edge * 1.2, 1.0)
        grid = np.linspace(0.0, top, args.grid)
    curve = density(spec.without_spikes(), grid)
    header = {"atom_at_zero": curve.atom_at_zero, "points": int(curve.grid.size),
              "total_mass": curve.mass()}
    _write(args, header, curve.to_csv())


def _xm_grid(spec, points):
    t = spec.nu.locations[spec.nu.locations > 0]
    reach = 3.0 / (spec.c * t.min()) if t.size else 3.0
    return np.linspace(-reach, reach, points)


def _cmd_support(args, spec):
    base = spec.without_spikes()
    report = compute_support(base)
    curve = emit_xm_curve(base, _xm_grid(base, args.grid or DEFAULT_GRID_POINTS))
    payload = {"model": base.to_dict(), **report.to_dict(), "xm_points_skipped": curve.skipped}
    _write(args, payload, curve.to_csv())


def _cmd_outliers(args, spec):
    support = compute_support(spec.without_spikes())
    preds = find_outliers(spec, support)
    _write(args, {"model": spec.to_dict(), "outliers": [p.to_dict() for p in preds]})


def _bias_for(cfg, spec, omega_sq, rho):
    real = build_realization(cfg, 0)
    amps = np.diag(spec.omega)
    idx = np.flatnonzero(amps == omega_sq)
    return compute_bias(cfg.c_n, real.d, real.lambda_n(), rho, (idx[0], idx[-1] + 1))


def _cmd_fluct(args, spec):
    support = compute_support(spec.without_spikes())
    gap = _select_gap(support, args.gap_index)
    preds = [p for p in find_outliers(spec, support) if p.gap == (gap.lo, gap.hi)]
    reports, columns = [], []
    draws = args.trials or 10_000
    cfg = RealizationConfig(spec, args.n or 1000, args.seed, 1, args.det_s) if args.bias else None
    for k, p in enumerate(preds):
        bias = _bias_for(cfg, spec, p.spike_omega_sq, p.rho) if args.bias else None
        rep = fluctuation_report(spec, p.rho, p.spike_omega_sq, p.multiplicity, bias, support)
        reports.append(rep.to_dict())
        vals = sample_limit_law(rep, make_rng(args.seed, SAMPLER_STREAM, k), size=draws)
        for i in range(vals.shape[1]):
            columns.append((f"rho{k + 1}_m{i + 1}", vals[:, i]))
    csv_text = None
    if columns:
        lines = [",".join(name for name, _ in columns)]
        stacked = np.column_stack([v for _, v in columns])
        lines += [",".join(f"{v:.12g}" for v in row) for row in stacked]
        csv_text = "\n".join(lines) + "\n"
    _write(args, {"model": spec.to_dict(), "gap": gap.to_dict(), "draws": draws, "reports": reports}, csv_text)


def _cmd_design(args, spec):
    if not args.targets:
        raise InvalidInputError("design needs --targets")
    try:
        targets = [float(v) for v in args.targets.split(",")]
    except ValueError as exc:
        raise InvalidInputError(f"bad --targets: {exc}") from exc
    spikes = design_spikes(spec.without_spikes(), targets)
    designed = spec.without_spikes().with_spikes(spikes)
    _write(args, {"targets": targets, "spikes": [list(s) for s in spikes], "model": designed.to_dict()})


def _cmd_simulate(args, spec):
    cfg = RealizationConfig(spec, args.n or 400, args.seed, args.trials or 20, args.det_s)
    support = compute_support(spec.without_spikes())
    trials = run_trials(cfg, support)
    counts = np.array([t.outliers_per_gap for t in trials])
    preds = find_outliers(spec, support)
    predicted = [sum(p.multiplicity for p in preds if p.gap == (g.lo, g.hi)) for g in support.gaps]
    dens = experiment_density(cfg, support=support, trials=trials)
    fluct = []
    if cfg.trials >= 2:
        gap = _select_gap(support, args.gap_index)
        for p in preds:
            if p.gap != (gap.lo, gap.hi):
                continue
            rep = fluctuation_report(spec, p.rho, p.spike_omega_sq, p.multiplicity, None, support)
            summ = experiment_fluctuations(cfg, p, rep, draws=10_000, support=support, trials=trials)
            fluct.append({"rho": p.rho, "limit_std": rep.limit_std, **summ.to_dict()})
    payload = {
        "config": cfg.to_dict(),
        "support": support.to_dict(),
        "predicted_outliers_per_gap": predicted,
        "mean_outliers_per_gap": counts.mean(axis=0).tolist(),
        "density": dens.to_dict(),
        "fluctuations": fluct,
    }
    r = max(spec.rank, 1)
    lines = ["trial," + ",".join(f"top{k + 1}" for k in range(r))]
    lines += [f"{t.trial_index}," + ",".join(f"{v:.12g}" for v in t.top) for t in trials]
    _write(args, payload, "\n".join(lines) + "\n")


COMMANDS = {
    "density": (_cmd_density, "limiting spectral density on a grid (CSV) with the atom at zero"),
    "support": (_cmd_support, "bulks, gaps and edges of the support, plus the x(m) curve"),
    "outliers": (_cmd_outliers, "predicted outlier locations for the spikes in the model"),
    "fluct": (_cmd_fluct, "second-order fluctuation report and limit-law samples"),
    "design": (_cmd_design, "spike amplitudes placing outliers at --targets"),
    "simulate": (_cmd_simulate, "Monte Carlo census, density and fluctuation summaries"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="deformed-rmt",
        description="Spectra of Gaussian information-plus-noise matrices with a variance profile.",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=_epilog(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--model", required=True, help="model JSON file")
        p.add_argument("--out", help="output path prefix; writes <out>.json and <out>.csv")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"random seed (default {DEFAULT_SEED})")
        p.add_argument("--n", type=int, help="matrix width n for finite-size computations")
        p.add_argument("--trials", type=int, help="Monte Carlo trials (simulate) or limit-law draws (fluct)")
        p.add_argument("--grid", type=int, help="number of grid points for curves")
        p.add_argument("--bias", action="store_true", help="include the finite-n bias in fluct")
        p.add_argument("--det-s", action="store_true", help="use the deterministic S factor for the spikes")
        p.add_argument("--gap-index", type=int, help="gap index for fluct/simulate (default: last gap)")
        p.add_argument("--targets", help="comma-separated outlier targets for design")
    return parser


def _exit_code(exc):
    for cls, code in ((SingularityError, 5), (DomainError, 4), (InvalidInputError, 3),
                      (ConvergenceError, 6), (ConsistencyError, 7)):
        if isinstance(exc, cls):
            return code
    return 1


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        spec = _load_model(args.model)
        for flag in ("n", "trials", "grid"):
            value = getattr(args, flag)
            if value is not None and value < 1:
                raise InvalidInputError(f"--{flag} must be positive")
        COMMANDS[args.command][0](args, spec)
    except (DeformedRMTError, ValueError, RuntimeError) as exc:
        code = _exit_code(exc)
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        sys.stderr.write(json.dumps(err) + "\n")
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
