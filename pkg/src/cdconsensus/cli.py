"""Command-line front end.

Every number printed here comes from the library modules; this file only
loads scenarios, calls them and formats the results.

Exit codes: 0 success, 2 config error, 3 numerical blowup, 4 a sufficient
condition fails under ``--strict``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import svg
from .bounds import BoundReport, InitialErrors, check_monotonicity, theorem_bounds
from .errors import ConfigInvalid, MissingEstimate, NumericalBlowup
from .gains import residuals, synthesize
from .model import BlockStructure
from .scenario import load_scenario, with_overrides
from .simulator import ScenarioConfig, SimTrace, initial_estimates, metrics, run, steady_mean_error
from .topology import compute_omega, h_matrix

log = logging.getLogger("cdconsensus")

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_STRICT = 0, 2, 3, 4
SWEEPABLE = {"tau_M": "tau_M", "tau_m": "tau_m", "theta": "theta", "lambda": "lam",
             "c_bar": "c_bar"}


class StrictFailure(Exception):
    pass


@contextmanager
def atomic_outdir(out: Path):
    """Yield a scratch directory whose files move into ``out`` only on success."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
        out.mkdir(exist_ok=True)
        for p in sorted(tmp.iterdir()):
            os.replace(p, out / p.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _fmt_matrix(name: str, M: np.ndarray) -> str:
    body = np.array2string(np.atleast_2d(M), precision=10, suppress_small=True,
                           max_line_width=120)
    pad = " " * (len(name) + 3)
    lines = body.splitlines()
    return "\n".join([f"{name} = {lines[0]}"] + [pad + ln for ln in lines[1:]])


def _load(args) -> ScenarioConfig:
    if not args.config:
        raise ConfigInvalid("--config is required for this command")
    cfg = load_scenario(args.config)
    return with_overrides(cfg, seed=args.seed, horizon=args.horizon, dt=args.dt)


def bound_report(cfg: ScenarioConfig, delta_w: Optional[float] = None) -> BoundReport:
    """Bound report of a scenario, with initial errors taken from its initial states."""
    gains = synthesize(cfg.structure)
    cert = compute_omega(h_matrix(cfg.topology), cfg.topology)
    init = InitialErrors.from_states(cfg.x0, initial_estimates(cfg))
    return theorem_bounds(cert, gains, cfg.structure, cfg.effective_lipschitz, cfg.tuning,
                          cfg.disturbances, init, delta_w=delta_w, warn=False)


def _check_strict(args, report: BoundReport) -> None:
    if args.strict and not report.all_satisfied:
        failed = sorted(k for k, ok in report.satisfied.items() if not ok)
        raise StrictFailure(f"sufficient conditions not satisfied: {', '.join(failed)}")


# gains ---------------------------------------------------------------------

def gains_text(bs: BlockStructure) -> str:
    g = synthesize(bs)
    res = residuals(bs, g)
    lines = [f"structure: q={bs.q} m={bs.m} n={bs.n}",
             _fmt_matrix("P", g.P), _fmt_matrix("Q", g.Q),
             _fmt_matrix("K_o", g.K_o.reshape(-1, 1) if g.K_o.ndim == 1 else g.K_o),
             _fmt_matrix("K_c", g.K_c),
             f"eig(P) in [{g.rho_min_P:.12g}, {g.rho_max_P:.12g}]",
             f"eig(Q) in [{g.rho_min_Q:.12g}, {g.rho_max_Q:.12g}]",
             f"|K_o| = {g.norm_K_o:.12g}   |K_c| = {g.norm_K_c:.12g}",
             "residuals:"]
    lines += [f"  {k:<14} {v:.3e}" for k, v in res.items()]
    return "\n".join(lines)


def write_gains_csv(bs: BlockStructure, path: Path) -> None:
    g = synthesize(bs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["matrix", "row", "col", "value"])
        for name, M in (("P", g.P), ("Q", g.Q), ("K_o", g.K_o), ("K_c", g.K_c)):
            M = np.atleast_2d(M) if M.ndim == 2 else M.reshape(-1, 1)
            for (r, c), v in np.ndenumerate(M):
                w.writerow([name, r, c, f"{v:.17g}"])
        for k, v in residuals(bs, g).items():
            w.writerow([f"residual_{k}", "", "", f"{v:.17g}"])


def cmd_gains(args) -> int:
    if args.q is not None or args.m is not None:
        bs = BlockStructure(args.q or 1, args.m or 1)
    elif args.config:
        bs = _load(args).structure
    else:
        raise ConfigInvalid("gains needs --q/--m or --config")
    print(gains_text(bs))
    if args.out:
        with atomic_outdir(Path(args.out)) as tmp:
            write_gains_csv(bs, tmp / "gains.csv")
    return EXIT_OK


# bounds --------------------------------------------------------------------

def bounds_items(report: BoundReport) -> Dict[str, object]:
    out = dict(report.as_dict())
    p = report.params
    out.update(c_bar=p.c_bar, lam=p.lam, theta=p.theta, tau_m=p.tau_m, tau_M=p.tau_M,
               lipschitz=report.lipschitz, delta_w=report.delta_w,
               all_satisfied=report.all_satisfied)
    return out


def bounds_text(report: BoundReport) -> str:
    p = report.params
    rows = [("coupling c_bar", p.c_bar, ">=", report.c_star, "c_bar"),
            ("lambda", p.lam, ">=", report.lambda_star, "lambda"),
            ("theta", p.theta, ">=", report.theta_min, "theta"),
            ("tau_M", p.tau_M, "<", report.tau_M_max, "tau_M")]
    lines = [f"{'condition':<16}{'value':>14}    {'bound':>14}  status"]
    for label, val, op, bound, key in rows:
        status = "ok" if report.satisfied[key] else "FAIL"
        lines.append(f"{label:<16}{val:>14.6g} {op:>2} {bound:>14.6g}  {status}")
    status = "ok" if report.satisfied["tuning_ge_one"] else "FAIL"
    lines.append(f"{'min(c,lam,th)':<16}{min(p.c_bar, p.lam, p.theta):>14.6g} >= "
                 f"{1.0:>14.6g}  {status}")
    lines.append(f"xi* = {report.xi_star:.6g}, sigma* = {report.sigma_star:.6g}, "
                 f"L = {report.lipschitz:.6g}")
    lines.append(f"envelope: chi1 = {report.chi1:.6g}, chi2 = {report.chi2:.6g}, "
                 f"chi3 = {report.chi3:.6g}, rate = {report.decay_rate:.6g}, "
                 f"steady = {report.steady_state():.6g}")
    lines.append("all conditions hold" if report.all_satisfied
                 else "sufficient conditions NOT all satisfied")
    return "\n".join(lines)


def _kv(items: Dict[str, object]) -> str:
    def f(v):
        if isinstance(v, (bool, np.bool_)):
            return "true" if v else "false"
        return f"{float(v):.17g}"
    return "\n".join(f"{k}={f(v)}" for k, v in items.items())


def cmd_bounds(args) -> int:
    cfg = _load(args)
    report = bound_report(cfg, delta_w=args.delta_w)
    items = bounds_items(report)
    if args.format == "json":
        print(json.dumps({k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                          for k, v in items.items()}, indent=2))
    elif args.format == "kv":
        print(_kv(items))
    else:
        print(bounds_text(report))
    if args.out:
        with atomic_outdir(Path(args.out)) as tmp:
            (tmp / "bounds.txt").write_text(_kv(items) + "\n")
    _check_strict(args, report)
    return EXIT_OK


# simulate ------------------------------------------------------------------

def write_plots(trace: SimTrace, cfg: ScenarioConfig, out: Path) -> List[Path]:
    """Position, estimation-error, mean-error, sampling-gap and leader-output plots."""
    mt = metrics(trace)
    bs = trace.structure
    t = trace.times
    N, m = trace.N, bs.m
    paths = []
    for k in range(m):
        series = [(("leader" if a == 0 else f"agent {a}"), t, trace.states[:, a, k])
                  for a in range(N + 1)]
        paths.append(svg.line_plot(out / f"positions_{k + 1}.svg", series,
                                   title=f"{cfg.name}: position component {k + 1}",
                                   ylabel=f"x^(1)_{k + 1}"))

    pair = (1, 2) if (1, 2) in trace.pairs else next(p for p in trace.pairs if p[0] != p[1])
    i, j = pair
    series = [(f"block {b + 1}", t, mt.estimation_error[pair][:, b]) for b in range(bs.q)]
    paths.append(svg.line_plot(out / f"estimation_error_{i}_{j}.svg", series,
                               title=f"{cfg.name}: agent {i} estimating agent {j}",
                               ylabel="|xhat - x| per block"))

    err = mt.mean_position_error
    paths.append(svg.line_plot(out / "mean_error.svg", [("mean error", t, err)],
                               title=f"{cfg.name}: mean position tracking error",
                               ylabel="mean |x_i - x_0|"))
    paths.append(svg.line_plot(out / "mean_error_log.svg", [("mean error", t, err)],
                               title=f"{cfg.name}: mean position tracking error",
                               ylabel="mean |x_i - x_0|", logy=True))

    inst = trace.edge_instants(i, j)
    gaps = np.diff(np.concatenate(([0.0], inst)))
    tun = cfg.tuning
    paths.append(svg.stem_plot(out / f"sampling_periods_{i}_{j}.svg", inst, gaps,
                               title=f"{cfg.name}: sampling periods on edge ({i},{j})",
                               xlabel="sampling instant [s]", ylabel="gap [s]",
                               hlines=[tun.tau_m, tun.tau_M]))

    comp = 1 if m > 1 else 0
    leader_ev = [(tt, y) for (a, b, tt, y) in trace.events if b == 0]
    observer = min(a for (a, b, _, _) in trace.events if b == 0) if leader_ev else None
    series = [("clean", t, trace.states[:, 0, comp])]
    if observer is not None:
        ev = [(tt, y[comp]) for (a, b, tt, y) in trace.events if b == 0 and a == observer]
        series.append((f"sent to agent {observer}", np.array([e[0] for e in ev]),
                       np.array([e[1] for e in ev])))
    paths.append(svg.line_plot(out / "leader_output.svg", series,
                               title=f"{cfg.name}: leader output component {comp + 1}",
                               ylabel=f"y0_{comp + 1}"))
    return paths


def summary_lines(trace: SimTrace, report: BoundReport) -> List[str]:
    mt = metrics(trace)
    err = mt.mean_position_error
    return [f"name={trace.name}",
            f"final_mean_error={err[-1]:.17g}",
            f"peak_mean_error={err.max():.17g}",
            f"steady_mean_error={steady_mean_error(trace):.17g}",
            f"events={len(trace.events)}",
            f"steps={trace.step_times.size - 1}",
            f"conditions_hold={'true' if report.all_satisfied else 'false'}"]


def cmd_simulate(args) -> int:
    cfg = _load(args)
    report = bound_report(cfg)
    _check_strict(args, report)
    if not report.all_satisfied:
        log.warning("sufficient conditions not all satisfied; simulating anyway")
    out = Path(args.out or f"out/{cfg.name}")
    with atomic_outdir(out) as tmp:
        trace = run(cfg)
        trace.write_csv(tmp)
        write_plots(trace, cfg, tmp)
        (tmp / "summary.txt").write_text("\n".join(summary_lines(trace, report)) + "\n")
    print("\n".join(summary_lines(trace, report)))
    print(f"wrote {out}")
    return EXIT_OK


# sweep ---------------------------------------------------------------------

def sweep_config(cfg: ScenarioConfig, parameter: str, value: float, seed: int) -> ScenarioConfig:
    """Scenario with one tuning knob replaced.

    When ``tau_M`` drops to or below ``tau_m``, ``tau_m`` becomes ``tau_M / 2``.
    """
    field = SWEEPABLE[parameter]
    upd = {field: float(value)}
    if field == "tau_M" and cfg.tuning.tau_m >= value:
        upd["tau_m"] = value / 2.0
    return with_overrides(cfg, seed=seed, **upd)


def _sweep_one(job):
    cfg, parameter, value, seed = job
    trace = run(sweep_config(cfg, parameter, value, seed))
    return parameter, value, seed, steady_mean_error(trace)


def sweep(cfg: ScenarioConfig, parameter: str, values: Sequence[float], seeds: Sequence[int],
          jobs: int = 1):
    """Steady mean error for every (value, seed); returns rows and per-value means."""
    if parameter not in SWEEPABLE:
        raise ConfigInvalid(f"cannot sweep {parameter!r}; choose from {sorted(SWEEPABLE)}")
    work = [(cfg, parameter, float(v), int(s)) for v in values for s in seeds]
    for w in work:
        sweep_config(*w)   # validate everything before running anything
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_one, work))
    else:
        rows = [_sweep_one(w) for w in work]
    means = {float(v): float(np.mean([r[3] for r in rows if r[1] == float(v)])) for v in values}
    return rows, means


def cmd_sweep(args) -> int:
    cfg = _load(args)
    seeds = args.seeds if args.seeds else [cfg.seed]
    rows, means = sweep(cfg, args.parameter, args.values, seeds, jobs=args.jobs)
    out = Path(args.out or f"out/{cfg.name}_sweep_{args.parameter}")
    with atomic_outdir(out) as tmp:
        with open(tmp / "sweep_runs.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parameter", "value", "seed", "steady_mean_error"])
            for p, v, s, e in rows:
                w.writerow([p, f"{v:.17g}", s, f"{e:.17g}"])
        with open(tmp / "sweep_summary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parameter", "value", "seeds", "mean_steady_error"])
            for v, e in means.items():
                w.writerow([args.parameter, f"{v:.17g}", len(seeds), f"{e:.17g}"])
    for v, e in means.items():
        print(f"{args.parameter}={v:g}  mean steady error={e:.6g}")
    print(f"wrote {out}")
    return EXIT_OK


# report --------------------------------------------------------------------

def report_text(cfg: ScenarioConfig) -> str:
    top = cfg.topology
    cert = compute_omega(h_matrix(top), top)
    report = bound_report(cfg)
    verdicts = check_monotonicity(cert, synthesize(cfg.structure), cfg.structure,
                                  cfg.effective_lipschitz, cfg.tuning, cfg.disturbances)
    lines = [f"# {cfg.name}", "", "## gains", gains_text(cfg.structure), "",
             "## graph", f"followers N = {top.N}, edges = {len(top.edges())}, "
             f"pinned = {list(top.pinned())}",
             "omega = " + np.array2string(cert.omega, precision=6, max_line_width=120),
             f"varrho = {cert.varrho:.12g}, h_max = {cert.h_max:g}", "",
             "## sufficient conditions", bounds_text(report), "",
             "## monotone trends of the bounds"]
    lines += [f"{k}: {'yes' if v else 'no'}" for k, v in verdicts.items()]
    return "\n".join(lines)


def cmd_report(args) -> int:
    cfg = _load(args)
    text = report_text(cfg)
    print(text)
    if args.out:
        with atomic_outdir(Path(args.out)) as tmp:
            (tmp / "report.md").write_text(text + "\n")
    _check_strict(args, bound_report(cfg))
    return EXIT_OK


# entry point ---------------------------------------------------------------

def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario YAML file or bundled scenario name")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--horizon", type=float, help="override the horizon [s]")
    common.add_argument("--dt", type=float, help="override the integration step [s]")
    common.add_argument("--strict", action="store_true",
                        help="exit 4 unless every sufficient condition holds")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    ap = argparse.ArgumentParser(prog="cdconsensus", parents=[common],
                                 description="Leader-following consensus with sampled observers.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gains", parents=[common], help="print P, Q and the gain vectors")
    g.add_argument("--q", type=int)
    g.add_argument("--m", type=int)
    g.set_defaults(func=cmd_gains)

    b = sub.add_parser("bounds", parents=[common], help="evaluate the sufficient conditions")
    b.add_argument("--format", choices=("text", "kv", "json"), default="text")
    b.add_argument("--delta-w", type=float, default=None,
                   help="noise bound used in the envelope (Gaussian noise has none)")
    b.set_defaults(func=cmd_bounds)

    s = sub.add_parser("simulate", parents=[common], help="run a scenario, write CSV and SVG")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", parents=[common], help="steady error over a tuning sweep")
    w.add_argument("--parameter", required=True, choices=sorted(SWEEPABLE))
    w.add_argument("--values", type=float, nargs="+", required=True)
    w.add_argument("--seeds", type=int, nargs="+")
    w.add_argument("--jobs", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", parents=[common], help="gains, graph and bound summary")
    r.set_defaults(func=cmd_report)
    return ap


def _merge_globals(args, argv):
    # Flags given before the subcommand are parsed by the top-level parser and
    # then reset to None by the subparser defaults; recover them.
    head = argv[:argv.index(args.command)] if args.command in argv else []
    pre = _common_parser().parse_known_args(head)[0]
    for k in ("config", "seed", "out", "horizon", "dt"):
        if getattr(args, k, None) is None and getattr(pre, k, None) is not None:
            setattr(args, k, getattr(pre, k))
    args.strict = args.strict or getattr(pre, "strict", False)
    args.verbose = args.verbose or getattr(pre, "verbose", False)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = _merge_globals(build_parser().parse_args(argv), argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigInvalid, MissingEstimate) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalBlowup as exc:
        print(f"numerical blowup: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except StrictFailure as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        return EXIT_STRICT


if __name__ == "__main__":
    sys.exit(main())
