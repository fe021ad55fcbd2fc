import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatboat import (
    ControlInput,
    EnvironmentalDisturbance,
    VesselParams,
    VesselState,
    coriolis_matrix,
    damping_matrix,
    rotation,
    simulate,
    state_derivative,
)

finite_vel = st.floats(-3.0, 3.0, allow_nan=False)


def test_rotation_zero_angle_is_identity():
    npt.assert_allclose(rotation(0.0), np.eye(3))


def test_rotation_quarter_turn_maps_surge_east():
    eta_dot = rotation(np.pi / 2) @ np.array([1.0, 0.0, 0.0])
    npt.assert_allclose(eta_dot, [0.0, 1.0, 0.0], atol=1e-15)


def test_rotation_orthogonal():
    R = rotation(0.7)
    npt.assert_allclose(R @ R.T, np.eye(3), atol=1e-15)


def test_coriolis_pure_surge(params):
    C = coriolis_matrix([1.0, 0.0, 0.0], params)
    assert C[1][2] == pytest.approx(25.8)
    assert C[2][1] == pytest.approx(-25.8)
    assert C[0][2] == 0.0 and C[2][0] == 0.0


def test_coriolis_pure_sway(params):
    C = coriolis_matrix([0.0, 1.0, 0.0], params)
    assert C[0][2] == pytest.approx(-33.8)
    assert C[2][0] == pytest.approx(33.8)


def test_coriolis_zero_velocity(params):
    npt.assert_allclose(coriolis_matrix([0, 0, 0], params), np.zeros((3, 3)))


@given(u=finite_vel, v=finite_vel, r=finite_vel)
@settings(max_examples=50, deadline=None)
def test_coriolis_skew_and_powerless(u, v, r):
    params = VesselParams(
        m11=25.8, m22=33.8, m23=6.2, m32=6.2, m33=2.76,
        Xu=12.0, Yv=17.0, Yr=0.2, Nv=0.5, Nr=0.5, Xuu=2.5, Yvv=4.5, Nrr=0.1,
    )
    nu = np.array([u, v, r])
    C = coriolis_matrix(nu, params)
    assert C[2][0] == pytest.approx(-C[0][2], abs=1e-12)
    # Coriolis forces do no work
    assert nu @ C @ nu == pytest.approx(0.0, abs=1e-10)


def test_damping_at_rest(params):
    D = damping_matrix([0, 0, 0], params)
    npt.assert_allclose(
        D, [[12.0, 0, 0], [0, 17.0, 0.2], [0, 0.5, 0.5]]
    )


def test_damping_quadratic_surge(params):
    assert damping_matrix([1.0, 0, 0], params)[0][0] == pytest.approx(14.5)


def test_damping_quadratic_yaw(params):
    assert damping_matrix([0, 0, -2.0], params)[2][2] == pytest.approx(0.7)


def test_params_validation():
    with pytest.raises(ValueError):
        VesselParams(m11=-1, m22=33.8, m23=6.2, m32=6.2, m33=2.76,
                     Xu=12, Yv=17, Yr=0.2, Nv=0.5, Nr=0.5, Xuu=2.5, Yvv=4.5, Nrr=0.1)
    with pytest.raises(ValueError):
        VesselParams(m11=25.8, m22=1.0, m23=6.2, m32=6.2, m33=2.76,
                     Xu=12, Yv=17, Yr=0.2, Nv=0.5, Nr=0.5, Xuu=2.5, Yvv=4.5, Nrr=0.1)
    with pytest.raises(ValueError):
        VesselParams(m11=25.8, m22=33.8, m23=6.2, m32=6.2, m33=2.76,
                     Xu=-0.1, Yv=17, Yr=0.2, Nv=0.5, Nr=0.5, Xuu=2.5, Yvv=4.5, Nrr=0.1)


def test_equilibrium_derivative(params):
    d = state_derivative(
        VesselState(eta=[0, 0, 0], nu=[0, 0, 0]), ControlInput(0, 0, 0), params
    )
    npt.assert_allclose(d, np.zeros(6))


def test_thrust_damping_balance(params):
    # at u = 1 the quadratic damping exactly balances 14.5 N
    d = state_derivative(
        VesselState(eta=[0, 0, 0], nu=[1, 0, 0]), ControlInput(14.5, 0, 0), params
    )
    npt.assert_allclose(d, [1, 0, 0, 0, 0, 0], atol=1e-14)


def test_current_drift_is_kinematic(params):
    dist = EnvironmentalDisturbance(current_ned=[-0.04, 0.0])
    d = state_derivative(
        VesselState(eta=[0, 0, 0], nu=[0, 0, 0]), ControlInput(0, 0, 0), params, dist
    )
    npt.assert_allclose(d[:3], [-0.04, 0, 0])
    npt.assert_allclose(d[3:], 0.0)


def test_simulate_preserves_equilibrium(params):
    res = simulate(
        VesselState(eta=[1, 2, 0.3], nu=[0, 0, 0]),
        lambda t: ControlInput(0, 0, 0),
        0.0, 10.0, params,
    )
    npt.assert_allclose(res.states[-1], res.states[0], atol=1e-12)


def test_simulate_steady_state_surge(params):
    res = simulate(
        VesselState(eta=[0, 0, 0], nu=[0, 0, 0]),
        lambda t: ControlInput(14.5, 0, 0),
        0.0, 80.0, params,
        t_eval=np.linspace(0, 80, 41),
    )
    u = res.states[:, 3]
    assert np.all(np.diff(u) > -1e-7)  # monotone up to integration jitter
    assert u[-1] == pytest.approx(1.0, rel=0.01)


def test_simulate_tolerance_convergence(params):
    def control(t):
        return ControlInput(2.0 * np.sin(0.3 * t), 0.0, 0.05 * np.cos(0.2 * t))

    x0 = VesselState(eta=[0, 0, 0.2], nu=[0.1, 0, 0])
    coarse = simulate(x0, control, 0, 20, params, rtol=1e-6, atol=1e-8)
    fine = simulate(x0, control, 0, 20, params, rtol=1e-12, atol=1e-14)
    err = np.abs(coarse.states[-1] - fine.states[-1]).max()
    assert err < 1e-6  # halving tol changes endpoint by less than coarse tol


def test_energy_conserved_without_damping(params):
    # tau = 0, D = 0: nu^T M nu is invariant (Coriolis does no work)
    undamped = VesselParams(
        m11=params.m11, m22=params.m22, m23=params.m23, m32=params.m32,
        m33=params.m33, Xu=0, Yv=0, Yr=0, Nv=0, Nr=0, Xuu=0, Yvv=0, Nrr=0,
    )
    M = undamped.inertia_matrix
    nu0 = np.array([0.5, -0.2, 0.3])
    res = simulate(
        VesselState(eta=[0, 0, 0], nu=nu0),
        lambda t: ControlInput(0, 0, 0),
        0.0, 20.0, undamped,
        t_eval=np.linspace(0, 20, 21),
        rtol=1e-10, atol=1e-12,
    )
    energies = [nu @ M @ nu for nu in res.states[:, 3:]]
    npt.assert_allclose(energies, energies[0], rtol=1e-7)


def test_simulate_rejects_bad_interval(params):
    with pytest.raises(ValueError):
        simulate(
            VesselState(eta=[0, 0, 0], nu=[0, 0, 0]),
            lambda t: ControlInput(0, 0, 0),
            5.0, 5.0, params,
        )
