import math
from dataclasses import replace

import numpy as np
import pytest

from cascade_forward.forwarding import synthesize
from cascade_forward.nonlinearity import saturation
from cascade_forward.plant import Grid, build_plant, folded_scalar_plant, scalar_plant
from cascade_forward.simulate import InitialProfile, Scenario, read_trace_csv, run
from cascade_forward.verify import (AuditReport, contraction_audit, convergence_study, decay_audit,
                                    nonresonance_rank, observability_probe)


@pytest.fixture(scope="module")
def scen():
    p, g = scalar_plant(), Grid(100)
    return Scenario(p, g, synthesize(p, g, saturation(1.0)), [1.0], InitialProfile("sine"), t_final=5.0)


@pytest.fixture(scope="module")
def trace(scen):
    return run(scen)


def test_decay_zero_trajectory(scen):
    tr = run(replace(scen, z0=np.zeros(1), w0=InitialProfile("constant", 0.0), t_final=0.5))
    rep = decay_audit(tr, scen.controller)
    assert rep.passed and rep.worst_violation == 0.0


def test_decay_passes_and_survives_csv(trace, scen, tmp_path):
    rep = decay_audit(trace, scen.controller)
    assert rep.passed and rep.extra["kappa"] <= 50
    trace.to_csv(tmp_path / "t.csv")
    again = decay_audit(read_trace_csv(tmp_path / "t.csv"), scen.controller)
    assert again.passed and again.worst_violation == rep.worst_violation


def test_decay_fails_under_sabotage(scen):
    tr = run(replace(scen, sabotage=True, t_final=2.0))
    rep = decay_audit(tr, scen.controller)
    assert not rep.passed and rep.worst_violation > 0


def test_decay_rejects_mismatched_controller(trace):
    two_input = synthesize(build_plant(A=-np.eye(2), B=np.eye(2), C=np.eye(2), speeds=[1], R0=[[1]],
                                       E0=[[1, 0]]), Grid(10))
    with pytest.raises(ValueError):
        decay_audit(trace, two_input)


def test_contraction_examples(scen, trace):
    ctl = scen.controller
    zero = run(replace(scen, z0=np.zeros(1), w0=InitialProfile("constant", 0.0)))
    rep = contraction_audit(trace, zero, ctl)
    assert rep.passed
    np.testing.assert_allclose(rep.extra["distances"], np.sqrt(np.maximum(trace.V, 0)), rtol=1e-12)
    same = contraction_audit(trace, trace, ctl)
    assert same.passed and same.worst_violation == 0.0
    other = run(replace(scen, z0=np.array([-1.0])))
    assert contraction_audit(trace, other, ctl).passed
    with pytest.raises(ValueError):
        contraction_audit(trace, run(replace(scen, t_final=1.0)), ctl)


def test_nonresonance_examples():
    assert nonresonance_rank([[-1]], [[1]], [[1]], 2j * math.pi)
    assert not nonresonance_rank([[-1]], [[1]], [[0]], 0.3j)
    assert nonresonance_rank([[-1]], [[1]], [[2]], 0.0)
    # more outputs than inputs can never give full row rank
    assert not nonresonance_rank(-np.eye(2), [[1], [0]], np.eye(2), 1j)


def test_nonresonance_determinant_oracle():
    A, B, C = np.array([[0.0, 1.0], [-2.0, -3.0]]), np.array([[0.0], [1.0]]), np.array([[1.0, 0.0]])
    for mu in [0, 1j, -1, -2, 2.5j, -1 + 1j]:
        det = np.linalg.det(np.block([[A - mu * np.eye(2), B], [C, np.zeros((1, 1))]]))
        assert nonresonance_rank(A, B, C, mu) == (abs(det) > 1e-9)


def test_probe_scalar_analytic():
    ctl = synthesize(scalar_plant(), Grid(400), method="bvp")
    probes = observability_probe(ctl, 16)
    assert [p.mode_index for p in probes] == list(range(-16, 17))
    for p in probes:
        assert p.pairing_magnitude == pytest.approx(1 / abs(1 + 2j * math.pi * p.mode_index), abs=1e-3)
        assert p.eigenvalue == pytest.approx(-2j * math.pi * p.mode_index)
        assert not p.flagged and not p.caveat
    assert probes[16].pairing_magnitude == pytest.approx(1.0, abs=1e-6)


def test_probe_zero_coupling_flags_all():
    probes = observability_probe(synthesize(scalar_plant(c=0.0), Grid(50)), 4)
    assert all(p.flagged for p in probes)


def test_probe_discretized_fallback():
    probes = observability_probe(synthesize(folded_scalar_plant(), Grid(100), method="bvp"), 2)
    assert all(p.caveat for p in probes) and len(probes) == 5
    mags = sorted(p.pairing_magnitude for p in probes)
    assert mags[-1] == pytest.approx(1.0, abs=1e-3)


def test_convergence_study(scen):
    rep = convergence_study(replace(scen, t_final=1.0), [50, 100, 200])
    assert all(0.7 <= o <= 1.3 for o in rep.m_orders)
    assert rep.reference == "bvp" and len(rep.rows()) == 3


def test_convergence_bad_grids(scen):
    with pytest.raises(ValueError):
        convergence_study(scen, [100, 200])
    with pytest.raises(ValueError):
        convergence_study(scen, [100, 150, 300])


def test_convergence_exact_for_zero_coupling():
    p, g = scalar_plant(c=0.0), Grid(20)
    sc = Scenario(p, g, synthesize(p, g), [1.0], InitialProfile("sine"), t_final=0.2)
    assert convergence_study(sc, [20, 40, 80]).m_orders == "exact"


def test_audit_report_requires_finite():
    with pytest.raises(ValueError):
        AuditReport("x", True, float("nan"))
