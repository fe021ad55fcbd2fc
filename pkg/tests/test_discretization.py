import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from flatboat import (
    ContractViolation,
    FlatTrajectory,
    SampleGrid,
    a_matrix,
    b_matrix,
    build_h_matrix,
    evaluate_continuous,
    pack,
    propagate,
    unpack,
)
from flatboat.discretization import decision_length, knot_states


def test_a_matrix_printed_form():
    npt.assert_allclose(a_matrix(2.0), [[1, 2], [0, 1]])


def test_a_matrix_unimodular():
    for T in (0.1, 0.75, 1.78, 2.0):
        assert np.linalg.det(a_matrix(T)) == pytest.approx(1.0)


def test_a_matrix_semigroup():
    npt.assert_allclose(a_matrix(0.5) @ a_matrix(1.3), a_matrix(1.8))


def test_b_matrix_printed_form():
    B = b_matrix(2.0)
    npt.assert_allclose(B[:, 0], [4 / 3, 1])
    npt.assert_allclose(B[:, 1], [2 / 3, 1])


def test_b_matrix_row_identities():
    for T in (0.5, 0.75, 1.78):
        B = b_matrix(T)
        assert B[1].sum() == pytest.approx(T)  # trapezoid velocity gain
        assert B[0].sum() == pytest.approx(T * T / 2)  # unit-acc displacement


def test_propagate_constant_acceleration():
    grid = SampleGrid.uniform(0.0, 2.0, 1)
    out = propagate(np.array([0.0, 0.0]), np.array([1.0, 1.0]), grid)
    npt.assert_allclose(out[-1], [2.0, 2.0])


def test_propagate_free_drift():
    grid = SampleGrid.uniform(0.0, 2.0, 1)
    out = propagate(np.array([1.0, 3.0]), np.array([0.0, 0.0]), grid)
    npt.assert_allclose(out[-1], [7.0, 3.0])


def test_propagate_matches_ode_on_mixed_steps(rng):
    grid = SampleGrid(0.0, np.array([0.5, 0.75, 1.78]))
    zdd = rng.normal(size=grid.n_knots)
    zeta0 = rng.normal(size=2)
    knots = propagate(zeta0, zdd, grid)
    tk = grid.times
    sol = solve_ivp(
        lambda t, y: [y[1], np.interp(t, tk, zdd)],
        (tk[0], tk[-1]), zeta0,
        rtol=1e-12, atol=1e-14, t_eval=tk, max_step=0.05,
    )
    npt.assert_allclose(knots, sol.y.T, atol=1e-10)


def test_propagate_length_mismatch():
    grid = SampleGrid.uniform(0.0, 1.0, 3)
    with pytest.raises(ContractViolation):
        propagate(np.zeros(2), np.zeros(3), grid)


def test_h_matrix_single_segment():
    grid = SampleGrid.uniform(0.0, 1.5, 1)
    A_N, H = build_h_matrix(grid)
    npt.assert_allclose(A_N, a_matrix(1.5))
    npt.assert_allclose(H, b_matrix(1.5))


def test_h_matrix_last_column_is_b2():
    grid = SampleGrid.uniform(0.0, 2.0, 2)
    _, H = build_h_matrix(grid)
    npt.assert_allclose(H[:, -1], [2 / 3, 1])


def test_h_matrix_columns_match_propagate(rng):
    grid = SampleGrid(0.0, np.array([0.4, 1.1, 0.9, 2.0]))
    A_N, H = build_h_matrix(grid)
    m = grid.n_knots
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        end = propagate(np.zeros(2), e, grid)[-1]
        npt.assert_allclose(H[:, j], end, atol=1e-12)
    zeta0 = rng.normal(size=2)
    npt.assert_allclose(
        propagate(zeta0, np.zeros(m), grid)[-1], A_N @ zeta0, atol=1e-12
    )


def test_decision_lengths():
    assert decision_length(1) == 12
    assert decision_length(59) == 186
    assert decision_length(59, with_slack=True) == 187
    # 61 knots -> 189 decision variables
    assert decision_length(60) == 189


def test_pack_unpack_round_trip(rng):
    grid = SampleGrid.uniform(0.0, 2.0, 7)
    xi = rng.normal(size=decision_length(7))
    z0, zdot0, zdd = unpack(xi, grid)
    npt.assert_allclose(pack(z0, zdot0, zdd), xi)


def test_unpack_length_check():
    grid = SampleGrid.uniform(0.0, 2.0, 7)
    with pytest.raises(ContractViolation):
        unpack(np.zeros(10), grid)


def test_evaluate_continuous_knot_consistency(rng):
    grid = SampleGrid(0.0, np.array([0.5, 0.75, 1.78, 1.0]))
    xi = rng.normal(size=decision_length(4))
    traj = FlatTrajectory.from_decision(xi, grid)
    fp = evaluate_continuous(xi, grid, grid.times)
    npt.assert_allclose(fp.z, traj.z, atol=1e-12)
    npt.assert_allclose(fp.zdot, traj.zdot, atol=1e-12)
    npt.assert_allclose(fp.zddot, traj.zddot, atol=1e-12)


def test_evaluate_continuous_midpoint_ramp():
    grid = SampleGrid.uniform(0.0, 2.0, 1)
    zdd = np.zeros((2, 3))
    zdd[1, 0] = 1.0  # ramp 0 -> 1 in the first output
    xi = pack(np.zeros(3), np.zeros(3), zdd)
    fp = evaluate_continuous(xi, grid, 1.0)
    assert fp.zddot[0] == pytest.approx(0.5)
    assert fp.zdot[0] == pytest.approx(0.25)


def test_evaluate_continuous_range_error():
    grid = SampleGrid.uniform(0.0, 1.0, 2)
    xi = np.zeros(decision_length(2))
    with pytest.raises(ValueError):
        evaluate_continuous(xi, grid, 2.5)


def test_split_segment_consistency(rng):
    """Propagating from a mid-segment evaluation equals direct propagation."""
    grid = SampleGrid.uniform(0.0, 2.0, 3)
    xi = rng.normal(size=decision_length(3)) * 0.3
    t_mid = 3.0  # interior of segment 2
    fp = evaluate_continuous(xi, grid, t_mid)
    # continue on a grid starting at t_mid with the interpolated zddot
    zdd_full = unpack(xi, grid)[2]
    sub = SampleGrid(t_mid, np.array([1.0, 2.0]))
    zdd_sub = np.vstack([fp.zddot, zdd_full[2:]])
    z_end, zdot_end = knot_states(fp.z, fp.zdot, zdd_sub, sub)
    direct = FlatTrajectory.from_decision(xi, grid)
    npt.assert_allclose(z_end[-1], direct.z[-1], atol=1e-12)
    npt.assert_allclose(zdot_end[-1], direct.zdot[-1], atol=1e-12)


def test_refinement_invariance(rng):
    """Inserting a knot by interpolation leaves the trajectory unchanged."""
    grid = SampleGrid.uniform(0.0, 2.0, 2)
    xi = rng.normal(size=decision_length(2)) * 0.5
    z0, zdot0, zdd = unpack(xi, grid)
    # split the first segment at its midpoint
    fp = evaluate_continuous(xi, grid, 1.0)
    grid2 = SampleGrid(0.0, np.array([1.0, 1.0, 2.0]))
    zdd2 = np.vstack([zdd[0], fp.zddot, zdd[1], zdd[2]])
    xi2 = pack(z0, zdot0, zdd2)
    for t in np.linspace(0, 4, 23):
        a = evaluate_continuous(xi, grid, t)
        b = evaluate_continuous(xi2, grid2, t)
        npt.assert_allclose(a.z, b.z, atol=1e-12)
        npt.assert_allclose(a.zdot, b.zdot, atol=1e-12)


@given(scale=st.floats(0.1, 3.0), seed=st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_propagate_linearity(scale, seed):
    rng = np.random.default_rng(seed)
    grid = SampleGrid(0.0, np.array([0.5, 0.75, 1.78]))
    za, zb = rng.normal(size=2), rng.normal(size=2)
    ua, ub = rng.normal(size=4), rng.normal(size=4)
    lhs = propagate(za + scale * zb, ua + scale * ub, grid)
    rhs = propagate(za, ua, grid) + scale * propagate(zb, ub, grid)
    npt.assert_allclose(lhs, rhs, atol=1e-9)


def test_grid_validation():
    with pytest.raises(ContractViolation):
        SampleGrid(0.0, np.array([1.0, -0.5]))
    with pytest.raises(ContractViolation):
        SampleGrid(0.0, np.array([]))


def test_tiered_grid_layout():
    grid = SampleGrid.from_tiers(0.0, [(0.5, 2), (0.75, 4), (1.78, 9)])
    assert grid.n_segments == 15
    assert grid.n_knots == 16
    assert grid.duration == pytest.approx(20.02)
