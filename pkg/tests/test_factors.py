import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tacgraph.factors import (
    REST_POSE,
    FactorGraphState,
    MissingVariable,
    NoiseModel,
    TimestepObservation,
    Values,
    contact_jacobian_wrench,
    cost_breakdown,
    detect_contact,
    force_key,
    h1_geometric_consistency,
    h2_nonpenetration,
    h3_contact_kinematics,
    h4_force_balance,
    object_pose_at,
    point_key,
    total_cost,
)
from tacgraph.geometry import PointCloud, sample_surface
from tacgraph.lie import Pose, compose, exp, random_pose, retract, trans

H = 1e-6


def obs_at(g=None, delta=None, wrench=np.zeros(6), contact=False):
    return TimestepObservation(g or Pose.identity(), delta or Pose.identity(), wrench, contact)


def fd_pose(fun, pose):
    """Central differences of fun(retract(pose, xi)) in each tangent coordinate."""
    cols = []
    for e in np.eye(6) * H:
        cols.append((fun(retract(pose, e)) - fun(retract(pose, -e))) / (2 * H))
    return np.stack(cols, axis=-1)


def fd_vec(fun, x):
    cols = []
    for e in np.eye(len(x)) * H:
        cols.append((fun(x + e) - fun(x - e)) / (2 * H))
    return np.stack(cols, axis=-1)


def rel_err(J, J_fd):
    return np.linalg.norm(J - J_fd) / max(np.linalg.norm(J_fd), 1e-12)


def face_points(rng, n, half=0.025, margin=0.012, offset=0.002):
    """Points near the centres of a cube's faces, away from edges."""
    axis = rng.integers(0, 3, n)
    sign = rng.choice([-1.0, 1.0], n)
    p = rng.uniform(-half + margin, half - margin, (n, 3))
    p[np.arange(n), axis] = sign * (half + rng.uniform(-offset, offset, n))
    return p


def small_pose(rng, rot=0.02, tr=0.002):
    return exp(np.r_[rng.normal(0, rot, 3), rng.normal(0, tr, 3)])


# -- object_pose_at --------------------------------------------------------------


def test_object_pose_examples():
    p = random_pose(np.random.default_rng(0))
    o = object_pose_at(p, obs_at())
    assert np.allclose(o.matrix, p.matrix, atol=1e-15)
    o = object_pose_at(trans(0.01), obs_at(g=trans(0.01)))
    assert np.allclose(o.t, [0.02, 0, 0])


def test_object_pose_matches_matrix_product():
    rng = np.random.default_rng(1)
    for _ in range(20):
        g, o_r = random_pose(rng), random_pose(rng)
        d = small_pose(rng, 0.1, 0.01)
        got = object_pose_at(o_r, obs_at(g=g, delta=d)).matrix
        assert np.allclose(got, g.matrix @ d.matrix @ o_r.matrix, atol=1e-12)


def test_large_delta_rejected():
    with pytest.raises(ValueError):
        obs_at(delta=exp([0.6, 0, 0, 0, 0, 0]))
    with pytest.raises(ValueError):
        obs_at(delta=trans(0.06))


# -- h1 --------------------------------------------------------------------------


def test_h1_zero_on_surface(cube):
    rng = np.random.default_rng(2)
    o_r = random_pose(rng)
    obj = sample_surface(cube, 300, 1).points
    cloud = obj @ o_r.R.T + o_r.t
    assert np.max(np.abs(h1_geometric_consistency(o_r, cloud, cube))) <= 1e-9


def test_h1_plane_offset(cube):
    rng = np.random.default_rng(3)
    P = face_points(rng, 50, offset=0.0)
    P = P[np.isclose(P[:, 0], 0.025)]
    assert len(P) > 5
    r = h1_geometric_consistency(trans(0.01), P, cube)
    assert np.allclose(r, -0.01, atol=1e-12)


def test_h1_requires_gripper_frame(cube):
    with pytest.raises(ValueError):
        h1_geometric_consistency(Pose.identity(), PointCloud(np.zeros((1, 3)), "world"), cube)
    r = h1_geometric_consistency(Pose.identity(), PointCloud(np.zeros((1, 3)), "gripper"), cube)
    assert r[0] == pytest.approx(-0.025)


def test_h1_jacobian_fd(cube):
    rng = np.random.default_rng(4)
    for _ in range(50):
        o_r = small_pose(rng)
        P = face_points(rng, 20)
        _, J = h1_geometric_consistency(o_r, P, cube, jacobian=True)
        J_fd = fd_pose(lambda p: h1_geometric_consistency(p, P, cube), o_r)
        assert rel_err(J, J_fd) <= 1e-4


# -- h2 --------------------------------------------------------------------------


def test_h2_clear_of_table_is_zero(cube, table):
    pts = sample_surface(cube, 400, 0).points
    r, J = h2_nonpenetration(trans(z=0.0251), obs_at(), pts, table, jacobian=True)
    assert np.all(r == 0.0) and np.all(J == 0.0)


def test_h2_cube_lowered_into_table(cube, table):
    rng = np.random.default_rng(5)
    bottom = rng.uniform(-0.02, 0.02, (40, 3))
    bottom[:, 2] = -0.025
    top = bottom.copy()
    top[:, 2] = 0.025
    pts = np.vstack([bottom, top])
    r = h2_nonpenetration(Pose.identity(), obs_at(g=trans(z=0.02)), pts, table)
    assert np.allclose(r[:40], -0.005, atol=1e-12)
    assert np.all(r[40:] == 0.0)


def test_h2_continuous_at_boundary(cube, table):
    pts = np.array([[0.0, 0.0, -0.025]])
    vals = [h2_nonpenetration(Pose.identity(), obs_at(g=trans(z=0.025 - e)), pts, table)[0] for e in (1e-3, 1e-6, 1e-9, 0.0, -1e-6)]
    assert vals[0] < vals[1] < vals[2] <= 0.0
    assert vals[2] == pytest.approx(-1e-9, abs=1e-15) and vals[3] == 0.0 and vals[4] == 0.0


def test_h2_jacobian_fd(cube, table):
    rng = np.random.default_rng(6)
    bottom = rng.uniform(-0.015, 0.015, (30, 3))
    bottom[:, 2] = -0.025
    for _ in range(50):
        o_r = small_pose(rng, 0.01, 0.0005)
        obs = obs_at(g=compose(trans(z=0.021), small_pose(rng, 0.01, 0.0005)))
        r, J = h2_nonpenetration(o_r, obs, bottom, table, jacobian=True)
        assert np.all(r < 0)
        J_fd = fd_pose(lambda p: h2_nonpenetration(p, obs, bottom, table), o_r)
        assert rel_err(J, J_fd) <= 1e-4


# -- h3 --------------------------------------------------------------------------


def test_h3_examples(cube, table):
    obs = obs_at(g=trans(z=0.025), contact=True)
    c = np.array([0.004, -0.003, 0.0])
    assert np.allclose(h3_contact_kinematics(Pose.identity(), c, obs, table, cube), 0.0, atol=1e-12)
    # lifted off the table but on the object's side face
    c = np.array([0.025, 0.0, 0.003])
    assert np.allclose(h3_contact_kinematics(Pose.identity(), c, obs, table, cube), [0.003, 0.0], atol=1e-12)


def test_h3_jacobian_fd(cube, table):
    rng = np.random.default_rng(7)
    for _ in range(50):
        o_r = small_pose(rng)
        obs = obs_at(g=compose(trans(z=0.025), small_pose(rng)), contact=True)
        c = np.r_[rng.uniform(-0.01, 0.01, 2), rng.uniform(-0.003, 0.003)]
        r, Jr, Jc = h3_contact_kinematics(o_r, c, obs, table, cube, jacobian=True)
        assert rel_err(Jr, fd_pose(lambda p: h3_contact_kinematics(p, c, obs, table, cube), o_r)) <= 1e-4
        assert rel_err(Jc, fd_vec(lambda x: h3_contact_kinematics(o_r, x, obs, table, cube), c)) <= 1e-4


# -- wrench / h4 -----------------------------------------------------------------


def test_contact_jacobian_examples():
    g = random_pose(np.random.default_rng(8))
    f = np.array([1.0, -2.0, 0.5])
    w = contact_jacobian_wrench(g.t, f, g)
    assert np.allclose(w[3:], 0.0, atol=1e-15) and np.allclose(w[:3], g.R.T @ f)
    w = contact_jacobian_wrench([0, 0, -0.1], [1, 0, 0], Pose.identity())
    assert np.allclose(w, [1, 0, 0, 0, -0.1, 0], atol=1e-17)


@given(st.floats(-10, 10, allow_nan=False), st.integers(0, 1000))
def test_contact_jacobian_linear_in_force(lam, seed):
    rng = np.random.default_rng(seed)
    g, c, f = random_pose(rng), rng.normal(size=3), rng.normal(size=3)
    assert np.allclose(contact_jacobian_wrench(c, lam * f, g), lam * contact_jacobian_wrench(c, f, g), atol=1e-12)


def test_h4_examples():
    rng = np.random.default_rng(9)
    g, c, f = random_pose(rng), rng.normal(size=3), rng.normal(size=3)
    obs = obs_at(g=g, wrench=contact_jacobian_wrench(c, f, g), contact=True)
    assert np.allclose(h4_force_balance(c, f, obs), 0.0, atol=1e-14)
    obs = obs_at(wrench=[0, 0, 1, 0, 0, 0], contact=True)
    assert np.array_equal(h4_force_balance(np.zeros(3), np.zeros(3), obs), [0, 0, -1, 0, 0, 0])


def test_h4_jacobian_fd():
    rng = np.random.default_rng(10)
    for _ in range(50):
        obs = obs_at(g=random_pose(rng), wrench=rng.normal(size=6), contact=True)
        c, f = rng.normal(size=3), rng.normal(size=3)
        _, Jc, Jf = h4_force_balance(c, f, obs, jacobian=True)
        assert rel_err(Jc, fd_vec(lambda x: h4_force_balance(x, f, obs), c)) <= 1e-4
        assert rel_err(Jf, fd_vec(lambda x: h4_force_balance(c, x, obs), f)) <= 1e-4


# -- contact detection -----------------------------------------------------------


def test_detect_contact_examples():
    nm = NoiseModel()
    assert not detect_contact(np.zeros(6), nm)
    nm = NoiseModel(detect_force=0.5, epsilon=4.0)
    assert not detect_contact([2.0, 0, 0, 0, 0, 0], nm)  # exactly epsilon
    assert detect_contact([2.0 + 1e-12, 0, 0, 0, 0, 0], nm)
    with pytest.raises(ValueError):
        detect_contact(np.zeros(6), nm, epsilon=0.0)


def test_detect_contact_false_positive_rate():
    # wrench noise at the simulator level (0.1 N, 0.01 N m), no contact
    nm = NoiseModel()
    rng = np.random.default_rng(11)
    w = rng.normal(size=(1000, 6)) * np.r_[np.full(3, 0.1), np.full(3, 0.01)]
    fp = sum(detect_contact(x, nm) for x in w)
    assert fp / 1000 <= 0.01
    # a 5 N press is always detected
    assert all(detect_contact(x + [0, 0, 5.0, 0, 0, 0], nm) for x in w[:100])


def test_noise_model_positive():
    with pytest.raises(ValueError):
        NoiseModel(sigma_h1=0.0)
    assert np.array_equal(NoiseModel().h4_sigmas, [0.3, 0.3, 0.3, 0.03, 0.03, 0.03])


# -- values / total cost ---------------------------------------------------------


def _state(cube, table, rng, noise=None, order="default", contact_at=(1,)):
    o_r = small_pose(rng)
    cloud = sample_surface(cube, 200, 0).points @ o_r.R.T + o_r.t + rng.normal(0, 1e-3, (200, 3))
    obs = []
    for t in range(3):
        contact = t in contact_at
        obs.append(obs_at(g=trans(z=0.024 if contact else 0.03), wrench=rng.normal(size=6) if contact else np.zeros(6), contact=contact))
    kw = {} if noise is None else {"noise": noise}
    st_ = FactorGraphState(cube, table, cloud, sample_surface(cube, 300, 1).points, obs, factor_order=order, **kw)
    vals = Values({REST_POSE: o_r})
    for t in contact_at:
        vals = vals.with_contact(t, rng.normal(0, 0.01, 3), rng.normal(size=3))
    return st_, vals


def test_total_cost_is_sum_of_independent_factor_costs(cube, table):
    rng = np.random.default_rng(12)
    state, vals = _state(cube, table, rng)
    nm = state.noise
    o_r = vals.rest_pose
    expect = np.sum((h1_geometric_consistency(o_r, state.cloud, cube) / nm.sigma_h1) ** 2)
    for t, obs in enumerate(state.observations):
        expect += np.sum((h2_nonpenetration(o_r, obs, state.object_points, table) / nm.sigma_h2) ** 2)
        if obs.contact:
            c, f = vals.contact(t)
            expect += np.sum((h3_contact_kinematics(o_r, c, obs, table, cube) / nm.sigma_h3) ** 2)
            expect += np.sum((h4_force_balance(c, f, obs) / nm.h4_sigmas) ** 2)
    assert total_cost(state, vals) == pytest.approx(expect, rel=1e-12)
    assert cost_breakdown(state, vals)["h2"] > 0


def test_doubling_h1_variance_halves_h1(cube, table):
    state, vals = _state(cube, table, np.random.default_rng(13))
    s2 = state.with_noise(NoiseModel(sigma_h1=0.002 * np.sqrt(2.0)))
    assert cost_breakdown(s2, vals)["h1"] == pytest.approx(0.5 * cost_breakdown(state, vals)["h1"], rel=1e-12)


def test_factor_order_does_not_change_cost(cube, table):
    rng = np.random.default_rng(14)
    state, vals = _state(cube, table, rng)
    rev = FactorGraphState(cube, table, state.cloud, state.object_points, state.observations, factor_order="reversed")
    assert [f.name for f in rev.factors] != [f.name for f in state.factors]
    assert total_cost(rev, vals) == pytest.approx(total_cost(state, vals), rel=1e-12)


def test_no_contacts_reduces_to_h1_plus_h2(cube, table):
    state, vals = _state(cube, table, np.random.default_rng(15), contact_at=())
    b = cost_breakdown(state, vals)
    assert b["h3"] == 0.0 and b["h4"] == 0.0
    assert total_cost(state, vals) == b["h1"] + b["h2"]
    assert all(f.name in ("h1", "h2") for f in state.factors)


def test_perfect_state_has_zero_cost(cube, table):
    o_r = Pose.identity()
    g = trans(z=0.025)
    c, f = np.array([0.0, 0.0, 0.0]), np.array([0.0, 0.0, 5.0])
    obs = obs_at(g=g, wrench=contact_jacobian_wrench(c, f, g), contact=True)
    cloud = sample_surface(cube, 200, 0).points
    state = FactorGraphState(cube, table, cloud, sample_surface(cube, 300, 1).points, [obs])
    vals = Values({REST_POSE: o_r}).with_contact(0, c, f)
    assert total_cost(state, vals) <= 1e-8


def test_missing_contact_variables(cube, table):
    state, vals = _state(cube, table, np.random.default_rng(16))
    with pytest.raises(MissingVariable):
        total_cost(state, Values({REST_POSE: vals.rest_pose}))
    bad = Values(vals)
    del bad[force_key(1)]
    with pytest.raises(MissingVariable):
        total_cost(state, bad)
    with pytest.raises(MissingVariable):
        Values().check()
    with pytest.raises(MissingVariable):
        vals.contact(0)
    assert point_key(1) in vals


@given(st.integers(0, 10_000))
def test_cost_nonnegative(seed):
    from tacgraph.scenario import get_mesh

    state, vals = _state(get_mesh("builtin:cube"), get_mesh("builtin:table"), np.random.default_rng(seed))
    assert total_cost(state, vals) >= 0.0


def test_empty_cloud_rejected(cube, table):
    with pytest.raises(ValueError):
        FactorGraphState(cube, table, np.zeros((0, 3)), np.zeros((1, 3)))


def test_state_extend_and_truncate(cube, table):
    state, _ = _state(cube, table, np.random.default_rng(17))
    ext = state.extended(obs_at(contact=True))
    assert len(ext.observations) == 4 and ext.contact_steps == [1, 3]
    assert state.truncated(1).contact_steps == []
