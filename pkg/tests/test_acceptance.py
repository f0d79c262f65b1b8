"""Acceptance gate: one test per criterion, each printed as PASS/FAIL in the summary."""
import filecmp
import math
import time
from dataclasses import replace
from importlib import resources

import numpy as np
import pytest

from cascade_forward.cli import main
from cascade_forward.forwarding import synthesize
from cascade_forward.nonlinearity import compose_shaping, linear, sat_phi, saturation
from cascade_forward.numlin import solve_lyapunov
from cascade_forward.plant import CascadeState, Grid, folded_scalar_plant, h_inner, scalar_plant
from cascade_forward.simulate import InitialProfile, Scenario, run
from cascade_forward.sylvester import closed_form_scalar, solve_bvp, solve_discrete
from cascade_forward.verify import (contraction_audit, decay_audit, nonresonance_rank,
                                    observability_probe)

SHIPPED = resources.files("cascade_forward") / "data" / "scalar_paper.example"

SIGMAS = {
    "linear": linear(1.0),
    "sat1": saturation(1.0),
    "sat0.1(sat1)": None,  # shaping psi = sat_0.1 in front of sat_1
    "sat_phi(2)": sat_phi(2.0),
}
W0 = {"constant": InitialProfile("constant", 1.0), "sine1": InitialProfile("sine", 1.0, 1),
      "sine3": InitialProfile("sine", 1.0, 3)}


def _controller(name, grid, plant=None):
    plant = plant or scalar_plant()
    if name == "sat0.1(sat1)":
        return synthesize(plant, grid, saturation(1.0), shaping=saturation(0.1))
    return synthesize(plant, grid, SIGMAS[name])


@pytest.fixture(scope="module")
def corpus():
    """The 12 decay scenarios, G = 200, explicit Euler at CFL 0.9."""
    g, p = Grid(200), scalar_plant()
    out, t0 = {}, time.perf_counter()
    for sname in SIGMAS:
        ctl = _controller(sname, g)
        for wname, w0 in W0.items():
            sc = Scenario(p, g, ctl, [1.0], w0, t_final=30.0)
            out[(sname, wname)] = (sc, run(sc))
    return out, time.perf_counter() - t0


def test_criterion_01_sylvester_closed_form(criterion):
    criterion(1)
    t0 = time.perf_counter()
    p = scalar_plant(1.0, 1.0, 1.0)
    errs, bvp_err = {}, 0.0
    for G in (100, 200, 400):
        g = Grid(G)
        exact = closed_form_scalar(1, 1, 1, g.nodes)
        bvp_err = max(bvp_err, float(np.max(np.abs(solve_bvp(p, g).values[:, 0, 0] - exact))))
        errs[G] = float(np.max(np.abs(solve_discrete(p, g).values[:, 0, 0] - exact)))
    orders = [math.log2(errs[100] / errs[200]), math.log2(errs[200] / errs[400])]
    elapsed = time.perf_counter() - t0
    criterion.detail(f"bvp err {bvp_err:.2e} (<=1e-10); discrete G=200 err {errs[200]:.2e} (<=2e-2); "
                     f"orders {orders[0]:.3f}, {orders[1]:.3f}; {elapsed:.2f}s")
    assert bvp_err <= 1e-10
    assert errs[200] <= 2e-2
    assert all(abs(o - 1) <= 0.3 for o in orders)
    assert elapsed < 5.0


def test_criterion_02_boundary_identity(criterion):
    criterion(2)
    worst = 0.0
    for a, lam, c in [(1, 1, 1), (0.5, 2.0, -3.0), (2.0, 0.5, 0.25)]:
        m0, m1 = closed_form_scalar(a, lam, c, np.array([0.0, 1.0]))
        worst = max(worst, abs((m0 - m1) - c))
    criterion.detail(f"max |M(0) - M(1) - c| = {worst:.2e} (<=1e-12)")
    assert worst <= 1e-12


def test_criterion_03_lyapunov_matrix(criterion):
    criterion(3)
    corpus = [np.array([[-a]]) for a in (0.5, 1.0, 2.0)] + [np.array([[0.0, 1.0], [-2.0, -3.0]])]
    res, scal = 0.0, 0.0
    for A in corpus:
        P = solve_lyapunov(A)
        res = max(res, float(np.linalg.norm(P @ A + A.T @ P + np.eye(len(A)), "fro")))
        assert np.all(np.linalg.eigvalsh(P) > 0)
        if A.shape == (1, 1):
            scal = max(scal, abs(P[0, 0] - 1 / (2 * -A[0, 0])))
    criterion.detail(f"residual {res:.2e} (<=1e-10); scalar |P - 1/(2a)| {scal:.2e} (<=1e-14)")
    assert res <= 1e-10 and scal <= 1e-14


def test_criterion_04_decay_estimate(criterion, corpus):
    criterion(4)
    runs, build_time = corpus
    t0 = time.perf_counter()
    reports = {key: decay_audit(tr, sc.controller) for key, (sc, tr) in runs.items()}
    elapsed = build_time + time.perf_counter() - t0
    failed = [f"{s}/{w}" for (s, w), r in reports.items() if not r.passed]
    kappa = max(r.extra["kappa"] for r in reports.values())
    max_dv = max(r.extra["max_dV"] for r in reports.values())
    criterion.detail(f"{len(reports) - len(failed)}/12 pass; max kappa {kappa:.3g} (<=50); "
                     f"max per-step dV {max_dv:.2e}; {elapsed:.1f}s"
                     + (f"; failed {failed}" if failed else ""))
    assert not failed
    assert elapsed < 60.0


def test_criterion_05_global_decay(criterion):
    criterion(5)
    p, g = scalar_plant(), Grid(200)
    ratios = {}
    for label, ctl in (("sat1", _controller("sat1", g)), ("shaped", _controller("sat0.1(sat1)", g))):
        for integ in ("rk4", "euler"):
            tr = run(Scenario(p, g, ctl, [1.0], InitialProfile("sine", 1.0, 1), t_final=60.0,
                              integrator=integ, record_stride=1000))
            ratios[(label, integ)] = float(tr.norm_X[-1] / tr.norm_X[0])
    criterion.detail(f"rk4: sat1 {ratios[('sat1', 'rk4')]:.3g} (<=1e-2), shaped "
                     f"{ratios[('shaped', 'rk4')]:.3g} (<=1e-1); info euler: "
                     f"{ratios[('sat1', 'euler')]:.3g}, {ratios[('shaped', 'euler')]:.3g}")
    assert ratios[("sat1", "rk4")] <= 1e-2
    assert ratios[("shaped", "rk4")] <= 1e-1


def test_criterion_06_contraction(criterion, corpus):
    criterion(6)
    p, g = scalar_plant(), Grid(200)
    ctl = _controller("sat1", g)
    base = Scenario(p, g, ctl, [1.0], InitialProfile("sine"), t_final=10.0)
    rng = np.random.default_rng(2024)
    pair_fail, worst = 0, 0.0
    for _ in range(10):
        runs = []
        for _ in range(2):
            z0 = rng.uniform(-2, 2, 1)
            w0 = InitialProfile("samples", samples=rng.uniform(-2, 2, g.cells))
            runs.append(run(replace(base, z0=z0, w0=w0)))
        rep = contraction_audit(runs[0], runs[1], ctl)
        pair_fail += not rep.passed
        worst = max(worst, rep.worst_violation)
    single_fail = 0
    for sc, tr in corpus[0].values():
        d = np.sqrt(np.maximum(tr.V, 0.0))
        single_fail += bool(np.any(np.diff(d) > 1e-9 * max(1.0, d[0])))
    criterion.detail(f"pairs {10 - pair_fail}/10 pass (worst {worst:.2e}); "
                     f"single-trajectory monotone {12 - single_fail}/12")
    assert pair_fail == 0 and single_fail == 0


def test_criterion_07_norm_equivalence(criterion):
    criterion(7)
    violations, checked = 0, 0
    rng = np.random.default_rng(7)
    for plant, G in ((scalar_plant(), 200), (folded_scalar_plant(), 100)):
        ctl = synthesize(plant, Grid(G))
        for _ in range(1000):
            scale = 10.0 ** rng.uniform(-3, 3)
            st = CascadeState(scale * rng.standard_normal(plant.n),
                              scale * rng.standard_normal((G, plant.N)) * rng.uniform(0, 2))
            x2 = float(st.z @ st.z) + h_inner(st.w, st.w, ctl.grid_, ctl.weight_)
            V = ctl.lyapunov(st)
            violations += not (ctl.c_lo_ * x2 <= V <= ctl.c_hi_ * x2)
            checked += 1
    criterion.detail(f"{violations} violations in {checked} states")
    assert violations == 0


def test_criterion_08_nonresonance(criterion):
    criterion(8)
    mus = 1j * np.concatenate([np.linspace(-1000, 1000, 94), 2 * np.pi * np.arange(-3, 3)])
    wrong = sum(not nonresonance_rank([[-1.0]], [[1.0]], [[1.0]], mu) for mu in mus)
    wrong += sum(nonresonance_rank([[-1.0]], [[1.0]], [[0.0]], mu) for mu in mus)
    A, B = np.array([[0.0, 1.0], [-2.0, -3.0]]), np.array([[0.0], [1.0]])
    oracle_mismatch = 0
    for C in (np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])):
        for mu in [0.0, -1.0, -2.0, 1j, -1 + 2j, 3.5j, 0.5]:
            det = np.linalg.det(np.block([[A - mu * np.eye(2), B], [C, np.zeros((1, 1))]]))
            oracle_mismatch += nonresonance_rank(A, B, C, mu) != (abs(det) > 1e-9)
    criterion.detail(f"scalar family wrong verdicts {wrong}/200; 2x2 determinant mismatches {oracle_mismatch}/14")
    assert len(mus) == 100 and wrong == 0 and oracle_mismatch == 0


def test_criterion_09_observability_probe(criterion):
    criterion(9)
    g = Grid(400)
    err = {}
    for method in ("bvp", "discrete"):
        probes = observability_probe(synthesize(scalar_plant(), g, method=method), 16)
        err[method] = max(abs(p.pairing_magnitude - 1 / abs(1 + 2j * math.pi * p.mode_index)) for p in probes)
        if method == "bvp":
            smallest = min(p.pairing_magnitude for p in probes)
            flagged = sum(p.flagged for p in probes)
    zero = observability_probe(synthesize(scalar_plant(c=0.0), g), 16)
    criterion.detail(f"max error {err['bvp']:.2e} (<=1e-3; discrete gain {err['discrete']:.2e}); "
                     f"min pairing {smallest:.3g}; c=0 flags {sum(p.flagged for p in zero)}/{len(zero)}")
    assert err["bvp"] <= 1e-3
    assert smallest > 1e-3 and flagged == 0
    assert all(p.flagged for p in zero)


def test_criterion_10_adjoint_duality(criterion):
    criterion(10)
    worst = 0.0
    rng = np.random.default_rng(10)
    for plant, G in ((scalar_plant(), 200), (folded_scalar_plant(), 100)):
        ctl = synthesize(plant, Grid(G))
        for _ in range(100):
            z = rng.standard_normal(plant.n)
            w = rng.standard_normal((G, plant.N))
            lhs = h_inner(ctl.M_.apply(z), w, ctl.grid_, ctl.weight_)
            worst = max(worst, abs(lhs - float(z @ ctl.adjoint_apply(w))))
    criterion.detail(f"max |<Mz,w> - <z,M*w>| = {worst:.2e} (<=1e-12)")
    assert worst <= 1e-12


def test_criterion_11_determinism(criterion, tmp_path):
    criterion(11)
    codes = [main(["run", str(SHIPPED), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    same = filecmp.cmp(tmp_path / "a" / "trace.csv", tmp_path / "b" / "trace.csv", shallow=False)
    size = (tmp_path / "a" / "trace.csv").stat().st_size
    criterion.detail(f"exit codes {codes}; trace.csv byte-identical: {same} ({size} bytes)")
    assert codes == [0, 0] and same
