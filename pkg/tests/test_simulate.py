import numpy as np
import pytest
from dataclasses import replace

from cascade_forward.forwarding import synthesize
from cascade_forward.nonlinearity import saturation
from cascade_forward.plant import CascadeState, Grid, build_plant, scalar_plant
from cascade_forward.simulate import (InitialProfile, NumericalFailure, Scenario, cfl_dt,
                                      dump_profiles, read_trace_csv, run, step)


@pytest.fixture(scope="module")
def scen():
    p, g = scalar_plant(), Grid(100)
    return Scenario(p, g, synthesize(p, g, saturation(1.0)), [1.0], InitialProfile("sine"), t_final=2.0)


def test_cfl_examples():
    p = scalar_plant()
    assert cfl_dt(Grid(100), p, 0.9) == pytest.approx(0.009)
    assert cfl_dt(Grid(100), scalar_plant(lam=2.0), 0.9) == pytest.approx(0.0045)
    assert cfl_dt(Grid(100), p, 1.0) == 0.01
    with pytest.raises(ValueError):
        cfl_dt(Grid(100), p, 1.5)


def test_zero_state_is_equilibrium(scen):
    tr = run(replace(scen, z0=np.zeros(1), w0=InitialProfile("constant", 0.0)))
    assert np.all(tr.z == 0) and np.all(tr.w == 0) and np.all(tr.V == 0)


def test_uncoupled_constant_transported_exactly():
    p = build_plant(A=[[-1.0]], B=[[0.0]], C=[[0.0]], speeds=[1.0], R0=[[1.0]])
    g = Grid(32)
    sc = Scenario(p, g, synthesize(p, g), [0.0], InitialProfile("constant", 0.7), t_final=3.0)
    tr = run(sc)
    np.testing.assert_array_equal(tr.w[-1], np.full((32, 1), 0.7))


def test_first_step_decreases_v(scen):
    tr = run(replace(scen, t_final=0.05))
    assert tr.V[1] <= tr.V[0]


def test_t_final_zero_single_snapshot(scen):
    tr = run(replace(scen, t_final=0.0))
    assert len(tr) == 1 and tr.times[0] == 0.0


def test_time_grid_hits_t_final(scen):
    tr = run(replace(scen, record_stride=7))
    assert tr.times[-1] == pytest.approx(2.0, abs=1e-12)
    assert np.all(np.diff(tr.times) > 0)
    assert tr.dt <= cfl_dt(scen.grid, scen.plant, 0.9) + 1e-15


def test_step_matches_run(scen):
    tr = run(replace(scen, t_final=0.009))
    st = step(scen.initial_state(), scen, tr.dt)
    np.testing.assert_allclose(st.z, tr.z[1], atol=1e-15)
    np.testing.assert_allclose(st.w, tr.w[1], atol=1e-15)
    with pytest.raises(ValueError):
        step(scen.initial_state(), scen, 0.5)


def test_euler_approaches_rk4_as_dt_shrinks(scen):
    r = run(replace(scen, integrator="rk4", cfl_safety=0.45)).V[-1]
    r_coarse = run(replace(scen, integrator="rk4")).V[-1]
    coarse = abs(run(scen).V[-1] - r)
    fine = abs(run(replace(scen, cfl_safety=0.2)).V[-1] - r)
    assert fine < 0.5 * coarse
    assert abs(r_coarse - r) < 1e-3 * coarse


def test_trace_recorded_quantities(scen):
    tr = run(scen)
    ctl = scen.controller
    for i in (0, len(tr) // 2, len(tr) - 1):
        st = tr.state(i)
        assert tr.V[i] == pytest.approx(ctl.lyapunov(st), rel=1e-12)
        np.testing.assert_allclose(tr.u[i], ctl.raw_feedback(st.z, st.w), atol=1e-12)
        np.testing.assert_allclose(tr.sigma_u[i], ctl.actuate(tr.u[i]), atol=0)


def test_csv_round_trip(scen, tmp_path):
    tr = run(scen)
    path = tmp_path / "trace.csv"
    tr.to_csv(path)
    back = read_trace_csv(path)
    for name in ("times", "z", "u", "sigma_u", "V", "norm_z", "norm_w"):
        np.testing.assert_array_equal(getattr(back, name), getattr(tr, name))
    with open(path) as fh:
        assert fh.readline().strip() == "t,z_1,u_1,sigma_u_1,norm_z,norm_w_H,V"


def test_dump_profiles(scen, tmp_path):
    tr = run(replace(scen, t_final=0.05))
    dump_profiles(tr, scen.grid, tmp_path / "p.dat", every=2)
    text = (tmp_path / "p.dat").read_text()
    assert text.count("# t =") == len(range(0, len(tr), 2))


def test_sabotage_blows_up_into_numerical_failure():
    p = scalar_plant(a=0.1)
    g = Grid(16)
    sc = Scenario(p, g, synthesize(p, g), [1.0], InitialProfile("constant", 1.0),
                  t_final=2000.0, sabotage=True)
    with pytest.raises(NumericalFailure) as info:
        run(sc)
    assert info.value.snapshot is not None and np.all(np.isfinite(info.value.snapshot.z))


def test_scenario_validation(scen):
    with pytest.raises(ValueError):
        replace(scen, z0=[1.0, 2.0])
    with pytest.raises(ValueError):
        replace(scen, cfl_safety=1.2)
    with pytest.raises(ValueError):
        replace(scen, integrator="leapfrog")
    with pytest.raises(ValueError):
        replace(scen, grid=Grid(50))


def test_samples_profile_interpolates():
    g = Grid(20)
    prof = InitialProfile("samples", samples=np.linspace(0, 1, 10))
    w = prof.sample(g, 1)
    assert w.shape == (20, 1) and np.all(np.diff(w[:, 0]) >= 0)


def test_uncontrolled_conservative_transport_does_not_gain_energy():
    p = build_plant(A=[[-1.0]], B=[[0.0]], C=[[0.0]], speeds=[1.0, -0.5], D0=[[0.6]], D1=[[-0.6]],
                    R0=[[0.8]], R1=[[0.8]])
    g = Grid(40)
    sc = Scenario(p, g, synthesize(p, g), [0.0], InitialProfile("sine", 1.0, 2), t_final=4.0)
    tr = run(sc)
    assert np.all(np.diff(tr.norm_w) <= 1e-13)


def test_refinement_order_on_compatible_data():
    from cascade_forward.verify import convergence_study
    p, g = scalar_plant(), Grid(100)
    # z0 = 0 with a sine keeps w(0) = w(1) + c z, so no jump is transported
    sc = Scenario(p, g, synthesize(p, g, saturation(1.0)), [0.0], InitialProfile("sine"), t_final=5.0)
    rep = convergence_study(sc, [100, 200, 400])
    assert 0.7 <= rep.norm_orders[0] <= 1.3
