import math

import numpy as np
import pytest
import scipy.sparse as sp

from smaglab.experiments import boundary_data, energy_residuals, manufactured_solution, mms_convergence
from smaglab.fem import FlowState, advection_local, interpolate
from smaglab.solver import (
    ModelParams,
    SaddleSolver,
    SolverError,
    TimeStepper,
    TimeSteppingConfig,
    divergence_residual,
    load_checkpoint,
    run_transient,
    save_checkpoint,
    solve_saddle,
    solve_stokes,
    step_backward_euler,
    write_field_vtk,
)

from conftest import COUETTE_BC, couette


def mass_norm(forms, v):
    return math.sqrt(float(v @ (forms.M @ v)))


# -- parameters ---------------------------------------------------------------

def test_reynolds_number():
    p = ModelParams.from_reynolds(4500.0, U=2.0, L=0.5)
    assert abs(p.re - 4500.0) <= 1e-14 * 4500.0
    assert p.nu == pytest.approx(2.0 * 0.5 / 4500.0)


@pytest.mark.parametrize("kwargs", [dict(nu=0.0), dict(nu=1.0, cs=-0.1), dict(nu=1.0, delta=-1.0), dict(nu=1.0, U=0.0)])
def test_model_params_validation(kwargs):
    with pytest.raises(ValueError):
        ModelParams(**kwargs)


@pytest.mark.parametrize("kwargs", [dict(dt=0.0), dict(dt=0.1, t_final=0.05), dict(picard_tol=1.0), dict(picard_max=0)])
def test_stepping_config_validation(kwargs):
    with pytest.raises(ValueError):
        TimeSteppingConfig(**kwargs)


def test_step_count():
    assert TimeSteppingConfig(dt=0.01, t_final=10.0).n_steps == 1000


# -- saddle systems -----------------------------------------------------------

def test_solve_saddle_small_system(rng):
    n, m = 8, 3
    R = rng.standard_normal((n, n))
    K = sp.csr_matrix(R @ R.T + n * np.eye(n))
    B = sp.csr_matrix(rng.standard_normal((m, n)))
    f, g = rng.standard_normal(n), rng.standard_normal(m)
    w = np.ones(m)
    # eliminate the pressure mean by hand with a dense oracle
    dense = np.block([[K.toarray(), -B.T.toarray(), np.zeros((n, 1))],
                      [-B.toarray(), np.zeros((m, m)), -w[:, None]],
                      [np.zeros((1, n)), -w[None], np.zeros((1, 1))]])
    ref = np.linalg.solve(dense, np.concatenate([f, -g, [0.0]]))
    u, p = solve_saddle(K, B, f, g, w)
    np.testing.assert_allclose(u, ref[:n], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(p, ref[n : n + m], rtol=1e-10, atol=1e-12)
    assert abs(w @ p) <= 1e-12


def test_solve_saddle_rejects_singular_system():
    K = sp.csr_matrix(np.zeros((3, 3)))
    B = sp.csr_matrix(np.zeros((1, 3)))
    with pytest.raises(SolverError):
        solve_saddle(K, B, np.ones(3))


def test_factorisation_reuse_matches_fresh_solve(channel, rng):
    space, forms = channel
    g = space.dirichlet_values(COUETTE_BC)
    fresh = SaddleSolver(space, forms)
    reuse = SaddleSolver(space, forms, reuse=True)
    for k in range(3):
        u_adv = rng.standard_normal(space.n_vel) * 0.1
        pattern = space._scalar_pattern
        Ks = pattern.from_data(forms.Ms.data / 0.01 + 0.01 * forms.As.data + pattern.data(advection_local(space, u_adv)))
        rhs = rng.standard_normal(space.n_vel)
        u1, p1 = fresh.solve(Ks, rhs, g)
        u2, p2 = reuse.solve(Ks, rhs, g)
        assert np.max(np.abs(u1 - u2)) <= 1e-9 * np.max(np.abs(u1))
    assert reuse.factorizations < fresh.factorizations


# -- Stokes -------------------------------------------------------------------

def test_stokes_couette_is_exact(channel):
    space, forms = channel
    st = solve_stokes(space, ModelParams(nu=0.01), COUETTE_BC, forms)
    exact = interpolate(space, couette)
    assert np.max(np.abs(st.u - exact)) <= 1e-10
    assert np.max(np.abs(st.p)) <= 1e-10


def test_stokes_zero_data(annulus):
    space, forms = annulus
    zero = {m: (0.0, 0.0) for m in space.dirichlet_markers}
    st = solve_stokes(space, ModelParams(nu=1.0), zero, forms)
    assert np.max(np.abs(st.u)) == 0.0
    assert np.max(np.abs(st.p)) == 0.0


def test_stokes_annulus_divergence_and_pressure_mean(annulus):
    space, forms = annulus
    _, bc = boundary_data(space.mesh, 1.0)
    st = solve_stokes(space, ModelParams(nu=1e-3), bc, forms)
    assert divergence_residual(space, forms, st.u) <= 1e-10 * np.linalg.norm(st.u)
    assert abs(forms.pressure_weights @ st.p) <= 1e-12 * np.max(np.abs(st.p))
    # boundary data imposed exactly
    g = space.dirichlet_values(bc)
    np.testing.assert_array_equal(st.u[space.dirichlet_dofs], g[space.dirichlet_dofs])


# -- time stepping ------------------------------------------------------------

@pytest.mark.parametrize("cs", [0.0, 0.17])
def test_couette_is_a_fixed_point(channel, cs):
    space, forms = channel
    params = ModelParams(nu=0.01, cs=cs, delta=space.mesh.h_max)
    exact = interpolate(space, couette)
    state = FlowState(exact.copy(), np.zeros(space.n_pres))
    cfg = TimeSteppingConfig(dt=0.37, t_final=0.37)
    new = step_backward_euler(state, space, params, cfg, COUETTE_BC, forms=forms)
    assert mass_norm(forms, new.u - exact) <= 1e-9
    assert new.t == pytest.approx(0.37)


def test_annulus_steps_stay_divergence_free(annulus):
    space, forms = annulus
    _, bc = boundary_data(space.mesh, 1.0)
    params = ModelParams(nu=1e-3, cs=0.17, delta=space.mesh.h_max)
    stepper = TimeStepper(space, params, TimeSteppingConfig(dt=0.01, t_final=0.05), bc, forms=forms)
    state = solve_stokes(space, params, bc, forms)
    for _ in range(5):
        state = stepper.step(state)
        assert stepper.last_info.converged
        assert divergence_residual(space, forms, state.u) <= 1e-9 * np.linalg.norm(state.u)


def test_picard_non_convergence_is_flagged(annulus, caplog):
    space, forms = annulus
    _, bc = boundary_data(space.mesh, 1.0)
    params = ModelParams(nu=1e-3)
    cfg = TimeSteppingConfig(dt=0.01, t_final=0.01, picard_tol=1e-14, picard_max=1)
    stepper = TimeStepper(space, params, cfg, bc, forms=forms)
    stepper.step(solve_stokes(space, params, bc, forms))
    assert not stepper.last_info.converged
    assert "did not converge" in caplog.text


@pytest.mark.parametrize("cs", [0.0, 0.17])
def test_discrete_energy_identity(channel, rng, cs):
    space, forms = channel
    params = ModelParams(nu=0.01, cs=cs, delta=space.mesh.h_max)
    res = energy_residuals(space, forms, params, rng.standard_normal(space.n_vel), 0.01, 10)
    assert max(res) <= 1e-10


def test_energy_decays_without_drive(channel, rng):
    space, forms = channel
    bc = {m: (0.0, 0.0) for m in space.dirichlet_markers}
    params = ModelParams(nu=0.01, cs=0.17, delta=space.mesh.h_max)
    stepper = TimeStepper(space, params, TimeSteppingConfig(dt=0.01, t_final=0.1), bc, forms=forms)
    state = FlowState(space.apply_constraints(rng.standard_normal(space.n_vel), np.zeros(space.n_vel)),
                      np.zeros(space.n_pres))
    energies = [mass_norm(forms, state.u)]
    for _ in range(10):
        state = stepper.step(state)
        energies.append(mass_norm(forms, state.u))
    assert all(b < a for a, b in zip(energies, energies[1:]))


def test_manufactured_forcing_matches_finite_differences():
    nu = 0.1
    velocity, pressure, forcing = manufactured_solution(nu)
    x, z, t, e = 0.31, 0.47, 0.2, 1e-4

    def u(x, z, t):
        return np.array(velocity(x, z, t))

    ut = (u(x, z, t + e) - u(x, z, t - e)) / (2 * e)
    ux = (u(x + e, z, t) - u(x - e, z, t)) / (2 * e)
    uz = (u(x, z + e, t) - u(x, z - e, t)) / (2 * e)
    lap = (u(x + e, z, t) + u(x - e, z, t) + u(x, z + e, t) + u(x, z - e, t) - 4 * u(x, z, t)) / e**2
    grad_p = np.array([(pressure(x + e, z) - pressure(x - e, z)) / (2 * e),
                       (pressure(x, z + e) - pressure(x, z - e)) / (2 * e)])
    v = u(x, z, t)
    expected = ut + v[0] * ux + v[1] * uz - nu * lap + grad_p
    np.testing.assert_allclose(forcing(x, z, t), expected, rtol=1e-5)
    assert abs(ux[0] + uz[1]) <= 1e-8


def test_manufactured_solution_converges():
    report = mms_convergence((4, 8, 16))
    assert all(a > b for a, b in zip(report.errors, report.errors[1:]))
    assert min(report.orders) >= 2.5


# -- transient driver ---------------------------------------------------------

def test_run_transient_series(channel):
    space, _ = channel
    params = ModelParams(nu=0.01, cs=0.17, delta=space.mesh.h_max)
    cfg = TimeSteppingConfig(dt=0.1, t_final=1.0, output_every=2)
    calls = []
    series = run_transient(space, params, cfg, COUETTE_BC, hooks=[lambda st, k: calls.append(k)])
    assert series.times == [pytest.approx(0.2 * k, abs=0) for k in range(6)]
    assert series.times[-1] == 1.0
    assert calls == [0, 2, 4, 6, 8, 10]
    expected = 1.0 / params.re + (params.cs * params.delta) ** 2
    assert series.c_eps == pytest.approx(expected, rel=1e-8)
    assert series.burn_in == 0.5
    assert len(series.picard_iterations) == 10 and series.picard_failures == 0


def test_run_transient_returns_partial_series_on_failure(channel, monkeypatch):
    space, _ = channel
    original = TimeStepper.step
    count = [0]

    def flaky(self, state, t_new=None):
        count[0] += 1
        if count[0] == 3:
            raise SolverError("injected breakdown")
        return original(self, state, t_new)

    monkeypatch.setattr(TimeStepper, "step", flaky)
    series = run_transient(space, ModelParams(nu=0.01), TimeSteppingConfig(dt=0.1, t_final=1.0), COUETTE_BC)
    assert "injected breakdown" in series.error
    assert len(series.times) == 3
    assert series.final_state is not None and series.final_state.t == pytest.approx(0.2)


def test_checkpoint_round_trip(channel, annulus, tmp_path):
    space, _ = channel
    state = FlowState(interpolate(space, couette), np.arange(space.n_pres, dtype=float), 1.25)
    save_checkpoint(tmp_path / "c.npz", space, state)
    back = load_checkpoint(tmp_path / "c.npz", space)
    np.testing.assert_array_equal(back.u, state.u)
    np.testing.assert_array_equal(back.p, state.p)
    assert back.t == 1.25
    with pytest.raises(ValueError, match="different mesh"):
        load_checkpoint(tmp_path / "c.npz", annulus[0])


def test_field_vtk(channel, tmp_path):
    space, _ = channel
    state = FlowState(interpolate(space, couette), np.zeros(space.n_pres), 0.5)
    write_field_vtk(tmp_path / "f.vtk", space, state)
    text = (tmp_path / "f.vtk").read_text()
    for key in ("VECTORS velocity double", "SCALARS pressure double 1", "SCALARS grad_u_modulus double 1"):
        assert key in text
