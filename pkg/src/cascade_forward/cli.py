"""Command line: ``run``, ``converge``, ``audit`` and ``probe``.

Exit codes: 0 success, 1 audit failure (``audit`` only), 2 invalid
configuration, 3 standing assumptions violated (``--force`` bypasses),
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .forwarding import AssumptionError, load_controller, save_controller
from .nonlinearity import validate_cone_bounded
from .numlin import NumericalError
from .plant import CascadeState, h_inner
from .scenario import ConfigError, load_scenario
from .simulate import InitialProfile, NumericalFailure, SimulationTrace, dump_profiles, read_trace_csv, run
from .verify import (AuditReport, contraction_audit, convergence_study, decay_audit,
                     observability_probe)

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_NUMERIC = 0, 1, 2, 3, 4
ENV_OUT = "CASCADE_FORWARD_OUT"


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(ENV_OUT) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _err(msg):
    print(f"cascade-forward: {msg}", file=sys.stderr)


def _zero_trace(tr: SimulationTrace) -> SimulationTrace:
    z = np.zeros_like(tr.z)
    return SimulationTrace(tr.times, z, np.zeros_like(tr.u), np.zeros_like(tr.u), np.zeros_like(tr.V),
                           np.zeros_like(tr.norm_z), np.zeros_like(tr.norm_w), w=np.zeros_like(tr.w))


def _random_state(ctl, rng):
    return CascadeState(rng.standard_normal(ctl.plant_.n),
                        rng.standard_normal((ctl.grid_.cells, ctl.plant_.N)))


def norm_equivalence_audit(ctl, samples=200, seed=0) -> AuditReport:
    """``c_lo (|z|^2 + |w|_H^2) <= V <= c_hi (|z|^2 + |w|_H^2)`` on random states."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        st = _random_state(ctl, rng) * float(rng.uniform(0.01, 10.0))
        x2 = float(st.z @ st.z) + h_inner(st.w, st.w, ctl.grid_, ctl.weight_)
        V = ctl.lyapunov(st)
        worst = max(worst, ctl.c_lo_ * x2 - V, V - ctl.c_hi_ * x2)
    worst = max(worst, 0.0)
    return AuditReport("norm_equivalence", worst == 0.0, worst,
                       f"c_lo={ctl.c_lo_:.6g} c_hi={ctl.c_hi_:.6g} samples={samples}")


def adjoint_audit(ctl, samples=100, seed=0, tol=1e-12) -> AuditReport:
    """``<M z, w>_H = <z, M^* w>`` on random pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        st = _random_state(ctl, rng)
        lhs = h_inner(ctl.M_.apply(st.z), st.w, ctl.grid_, ctl.weight_)
        rhs = float(st.z @ ctl.adjoint_apply(st.w))
        worst = max(worst, abs(lhs - rhs))
    return AuditReport("adjoint_duality", worst <= tol, worst, f"samples={samples} tol={tol:g}")


def probe_audit(ctl, modes=16) -> AuditReport:
    probes = observability_probe(ctl, modes)
    mags = [p.pairing_magnitude for p in probes]
    flagged = sum(p.flagged for p in probes)
    caveat = " (discretized modes)" if any(p.caveat for p in probes) else ""
    return AuditReport("observability_probe", flagged == 0, float(flagged),
                       f"modes={len(probes)} min_pairing={min(mags):.6g} flagged={flagged}{caveat}; "
                       "a finite probe can falsify but not prove observability")


def _pipeline_audits(sc, trace, seed):
    ctl = sc.controller
    reports = [decay_audit(trace, ctl)]
    mono = contraction_audit(trace, _zero_trace(trace), ctl)
    reports.append(AuditReport("v_norm_monotone", mono.passed, mono.worst_violation, mono.context))
    rng = np.random.default_rng(seed)
    z0b = rng.standard_normal(ctl.plant_.n)
    w0b = InitialProfile("samples", samples=rng.standard_normal((ctl.grid_.cells, ctl.plant_.N)))
    trace_b = run(sc.with_initial(z0b, w0b))
    pair = contraction_audit(trace, trace_b, ctl)
    reports.append(AuditReport("contraction_pair", pair.passed, pair.worst_violation,
                               f"seed={seed} " + pair.context))
    reports.append(norm_equivalence_audit(ctl, seed=seed))
    reports.append(adjoint_audit(ctl, seed=seed))
    val = validate_cone_bounded(ctl.actuator_)
    reports.append(AuditReport("cone_bounded", val.passed, max(val.worst_ratio - val.bound, 0.0),
                               f"worst_ratio={val.worst_ratio:.6g} bound={val.bound:.6g} "
                               f"worst_monotonicity={val.worst_monotonicity:.3g}"))
    reports.append(probe_audit(ctl))
    return reports


def _write_audits(path, header, reports):
    with open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for rep in reports:
            fh.write(rep.line() + "\n")


def _load(args, **kw):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cfg = load_scenario(args.scenario, lenient=args.lenient)
    for w in caught:
        _err(f"warning: {w.message}")
    return cfg, cfg.build(force=args.force, sabotage=getattr(args, "sabotage", False), **kw)


def cmd_run(args) -> int:
    _, sc = _load(args)
    out = _out_dir(args)
    trace = run(sc)
    trace.to_csv(out / "trace.csv")
    save_controller(sc.controller, out / "controller.txt")
    if args.profiles:
        dump_profiles(trace, sc.grid, out / "profiles.dat", every=args.profiles)
    reports = _pipeline_audits(sc, trace, args.seed)
    rep = sc.controller.assumptions_
    header = [f"assumptions: {'ok' if rep.passed else 'VIOLATED (forced)'} ({rep.disjoint_method}) {rep.detail}",
              f"sylvester: method={sc.controller.M_.method} residual={sc.controller.M_.residual}",
              f"steps: dt={trace.dt:.6g} h={sc.grid.h:.6g} snapshots={len(trace)}"
              + (" sabotage=on" if sc.sabotage else "")]
    _write_audits(out / "audits.txt", header, reports)
    for r in reports:
        print(r.line())
    print(f"wrote {out / 'trace.csv'}, {out / 'controller.txt'}, {out / 'audits.txt'}")
    return EXIT_OK


def _parse_grids(text):
    try:
        grids = [int(g) for g in text.split(",") if g.strip()]
    except ValueError:
        raise ConfigError(f"cannot read grid list {text!r}", "--grids") from None
    if len(grids) < 3:
        raise ConfigError("at least three grids are required", "--grids")
    for a, b in zip(grids[:-1], grids[1:]):
        if b <= a or b % a:
            raise ConfigError(f"{b} does not refine {a}", "--grids")
    return grids


def cmd_converge(args) -> int:
    grids = _parse_grids(args.grids)
    _, sc = _load(args, grid_cells=grids[0])
    out = _out_dir(args)
    rep = convergence_study(sc, grids)
    path = out / "convergence.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["G", "m_error", "m_order", "final_norm_X", "norm_order"])
        for row in rep.rows():
            wr.writerow([row[0]] + [v if isinstance(v, str) else f"{v:.17g}" for v in row[1:]])
    for row in rep.rows():
        print("  ".join(str(v) if isinstance(v, (int, str)) else f"{v:.6g}" for v in row))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_audit(args) -> int:
    out = Path(args.out or os.environ.get(ENV_OUT) or "out")
    trace = read_trace_csv(args.trace or out / "trace.csv")
    ctl = load_controller(args.controller or out / "controller.txt")
    reports = [decay_audit(trace, ctl), norm_equivalence_audit(ctl, seed=args.seed),
               adjoint_audit(ctl, seed=args.seed)]
    for r in reports:
        print(r.line())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_AUDIT


def cmd_probe(args) -> int:
    _, sc = _load(args)
    out = _out_dir(args)
    probes = observability_probe(sc.controller, args.modes)
    path = out / "probe.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["k", "re_mu", "im_mu", "pairing", "flagged", "caveat"])
        for p in probes:
            wr.writerow([p.mode_index, f"{p.eigenvalue.real:.17g}", f"{p.eigenvalue.imag:.17g}",
                         f"{p.pairing_magnitude:.17g}", int(p.flagged), int(p.caveat)])
    for p in probes:
        mark = "  <- zero pairing" if p.flagged else ""
        print(f"{p.mode_index:4d}  mu={p.eigenvalue:.6g}  |B^T M* phi|={p.pairing_magnitude:.6g}{mark}")
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cascade-forward",
                                 description="Forwarding control of ODE / transport-PDE cascades.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./out)")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized audits")
    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("scenario", help="scenario file")
    scen.add_argument("--force", action="store_true", help="proceed when assumptions fail")
    scen.add_argument("--lenient", action="store_true", help="warn on unknown keys instead of failing")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common, scen], help="synthesize, simulate and audit")
    p.add_argument("--sabotage", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--profiles", type=int, default=0, metavar="EVERY",
                   help="also dump w profiles every EVERY snapshots")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("converge", parents=[common, scen], help="grid refinement study")
    p.add_argument("--grids", default="100,200,400", help="comma-separated nested grid sizes")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("audit", parents=[common], help="re-audit a trace.csv with its controller.txt")
    p.add_argument("--trace", help="trace CSV (default <out>/trace.csv)")
    p.add_argument("--controller", help="controller file (default <out>/controller.txt)")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("probe", parents=[common, scen], help="observability probe table")
    p.add_argument("--modes", type=int, default=16)
    p.set_defaults(func=cmd_probe)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"configuration error: {exc}")
        return EXIT_CONFIG
    except AssumptionError as exc:
        _err(f"assumption check failed: {exc} (use --force to proceed)")
        return EXIT_ASSUMPTION
    except NumericalFailure as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except NumericalError as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
