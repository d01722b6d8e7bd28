import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dynalloc import satellite as bm
from dynalloc.model import (AllocatorWeights, ControllerModel, DisturbanceClass, InfluenceModel,
                            ModelError, PlantModel, assemble_closed_loop, dz, nullspace_basis,
                            optimal_allocator_state, orth_complement, right_pseudo_inverse, sat,
                            spectral_abscissa)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_nullspace_example():
    N = nullspace_basis([[1.0, 1.0]])
    assert N.shape == (2, 1)
    assert np.allclose(np.array([[1.0, 1.0]]) @ N, 0, atol=1e-14)
    assert np.isclose(np.linalg.norm(N), 1.0)


def test_nullspace_override_validated():
    M = np.array([[1.0, 1.0]])
    N = nullspace_basis(M, [[1.0], [-1.0]])
    assert np.array_equal(N, [[1.0], [-1.0]])
    with pytest.raises(ModelError, match="kernel"):
        nullspace_basis(M, [[1.0], [1.0]])


def test_nullspace_rank_deficient():
    with pytest.raises(ModelError, match="not full row rank"):
        nullspace_basis([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])


def test_pseudo_inverse_examples():
    assert np.allclose(right_pseudo_inverse([[1.0, 0.0]]), [[1.0], [0.0]])
    Md = right_pseudo_inverse([[2.0, 0.0], [0.0, 2.0]] @ np.eye(2)[:, :2] @ np.hstack([np.eye(2), np.zeros((2, 1))]))
    assert np.allclose(Md[:2], 0.5 * np.eye(2))
    assert np.allclose(right_pseudo_inverse([[2.0, 0.0, 0.0]]), [[0.5], [0.0], [0.0]])


def test_orth_complement_example():
    Cp = orth_complement([[0.0, 0.0, 1.0]])
    assert Cp.shape == (3, 2)
    assert np.allclose(Cp[2], 0)
    assert np.allclose(Cp.T @ Cp, np.eye(2))


def test_orth_complement_rank_deficient():
    with pytest.raises(ModelError, match="not full row rank"):
        orth_complement([[1.0, 0.0], [2.0, 0.0]])


def test_sat_dz_examples():
    assert sat(60.0, 50.0) == 50.0 and dz(60.0, 50.0) == -10.0
    assert sat(-30.0, 50.0) == -30.0 and dz(-30.0, 50.0) == 0.0
    assert np.array_equal(sat([60.0, -60.0], [50.0, 50.0]), [50.0, -50.0])


def test_spectral_abscissa_examples():
    assert spectral_abscissa(-np.eye(2)) == -1.0
    assert spectral_abscissa([[0.0, 1.0], [0.0, 0.0]]) == 0.0
    assert spectral_abscissa(bm.closed_loop().A0) < 0


def test_satellite_dimensions(sat_cl):
    assert (sat_cl.n, sat_cl.m_a, sat_cl.m_c, sat_cl.n_f) == (10, 8, 2, 6)
    assert (sat_cl.n_p, sat_cl.n_c) == (2, 2)


def test_satellite_structural_residuals(sat_cl):
    M_n = sat_cl.influence.M_n
    scale = np.linalg.norm(M_n)
    assert np.abs(M_n @ sat_cl.N).max() <= 1e-10 * scale
    assert np.allclose(M_n @ sat_cl.M_dagger, np.eye(sat_cl.m_c), atol=1e-10)
    assert np.linalg.norm(sat_cl.C_bar @ sat_cl.C_bar_perp) <= 1e-10
    T = np.hstack([sat_cl.C_bar_perp, sat_cl.C_bar.T])
    assert abs(np.linalg.det(T)) > 1e-8
    Cp = sat_cl.C_bar_perp
    assert np.allclose(Cp.T @ Cp, np.eye(Cp.shape[1]), atol=1e-12)


def test_nominal_vertex_list(sat_cl):
    assert len(sat_cl.A_vertices) == 1
    assert sat_cl.vertex(0)[0] is sat_cl.A and sat_cl.vertex(0)[1] is sat_cl.B


def test_uncertain_vertices_differ_in_plant_rows_only(sat_cl_robust):
    cl = sat_cl_robust
    (A1, B1), (A2, B2) = cl.vertex(0), cl.vertex(1)
    n_p = cl.n_p
    assert np.allclose(A1[n_p:], A2[n_p:]) and np.allclose(B1[n_p:], B2[n_p:])
    assert not np.allclose(A1[:n_p], A2[:n_p])
    d = cl.influence.vertices[0] - cl.influence.vertices[1]
    assert np.allclose(B1 - B2, cl.B_bar @ d)
    assert np.allclose(A1 - A2, cl.B_bar @ d @ cl.C)


def test_matrices_at_interpolates(sat_cl_robust):
    A, B = sat_cl_robust.matrices_at([0.25, 0.75])
    assert np.allclose(A, 0.25 * sat_cl_robust.A_vertices[0] + 0.75 * sat_cl_robust.A_vertices[1])
    with pytest.raises(ModelError, match="simplex"):
        sat_cl_robust.matrices_at([0.5, 0.6])


def test_assembly_rejects_non_hurwitz():
    plant = PlantModel(A_p=[[0.0]], B_p=[[1.0]], C_p=[[1.0]])
    ctrl = ControllerModel(A_c=[[-1.0]], B_c=[[0.0]], C_c=[[0.0]], D_c=[[0.0]])
    infl = InfluenceModel(M_n=[[1.0, 1.0]], u_bar=[1.0, 1.0])
    with pytest.raises(ModelError, match="not Hurwitz"):
        assemble_closed_loop(plant, ctrl, infl, AllocatorWeights([1.0, 1.0]))


def test_dimension_errors():
    with pytest.raises(ModelError, match="B_p must have 2 rows"):
        PlantModel(A_p=np.eye(2), B_p=np.ones((3, 1)), C_p=np.ones((1, 2)))
    with pytest.raises(ModelError, match="more actuators"):
        InfluenceModel(M_n=np.eye(2), u_bar=[1.0, 1.0])
    with pytest.raises(ModelError, match="strictly positive"):
        AllocatorWeights([1.0, 0.0])
    with pytest.raises(ModelError, match="positive definite"):
        DisturbanceClass(R=[[-1.0]], sigma=1.0)


def test_unstabilizable_plant_warns():
    with pytest.warns(UserWarning, match="stabilizable"):
        PlantModel(A_p=np.eye(2), B_p=[[1.0], [0.0]], C_p=np.eye(2))


def test_weights_from_bounds():
    w = AllocatorWeights.from_bounds([2.0, 4.0])
    assert np.allclose(w.w, [0.25, 0.0625])
    assert np.allclose(w.W_sqrt @ w.W_sqrt, w.W)


# properties ------------------------------------------------------------------

@st.composite
def full_rank_influence(draw):
    m_c = draw(st.integers(1, 3))
    m_a = draw(st.integers(m_c + 1, 6))
    M = draw(arrays(float, (m_c, m_a), elements=finite))
    s = np.linalg.svd(M, compute_uv=False)
    if s[-1] < 1e-3 * max(s[0], 1e-300):
        M = M + np.hstack([np.eye(m_c), np.zeros((m_c, m_a - m_c))])
    return M


@settings(max_examples=60, deadline=None)
@given(full_rank_influence())
def test_kernel_and_inverse_residuals(M):
    s = np.linalg.svd(M, compute_uv=False)
    if s[-1] < 1e-6 * s[0]:
        return
    N = nullspace_basis(M)
    Md = right_pseudo_inverse(M)
    scale = np.linalg.norm(M, 2)
    assert N.shape == (M.shape[1], M.shape[1] - M.shape[0])
    assert np.abs(M @ N).max() <= 1e-10 * scale
    assert np.abs(M @ Md - np.eye(M.shape[0])).max() <= 1e-10 * s[0] / s[-1]


@settings(max_examples=60, deadline=None)
@given(full_rank_influence(), st.integers(0, 2**31 - 1))
def test_allocation_error_identity(M, seed):
    # without saturation the allocator output reproduces the requested input
    if np.linalg.svd(M, compute_uv=False)[-1] < 1e-6:
        return
    rng = np.random.default_rng(seed)
    N, Md = nullspace_basis(M), right_pseudo_inverse(M)
    x_f = rng.standard_normal(N.shape[1])
    y_c = rng.standard_normal(M.shape[0])
    u_p = M @ (N @ x_f + Md @ y_c)
    assert np.allclose(u_p - y_c, 0, atol=1e-9 * (1 + np.abs(y_c).max() + np.abs(x_f).max()) * np.linalg.cond(M))


@settings(max_examples=100, deadline=None)
@given(full_rank_influence(), st.integers(0, 2**31 - 1))
def test_optimal_allocation_matches_least_squares(M, seed):
    if np.linalg.svd(M, compute_uv=False)[-1] < 1e-6:
        return
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.1, 10.0, M.shape[1])
    N, Md = nullspace_basis(M), right_pseudo_inverse(M)
    y_c = rng.standard_normal(M.shape[0])
    x_star = optimal_allocator_state(N, np.diag(w), Md, y_c)
    # oracle: min |W^1/2 (N x + Md y_c)|^2 as an ordinary least-squares problem
    sw = np.sqrt(w)[:, None]
    x_ls = np.linalg.lstsq(sw * N, -(sw[:, 0] * (Md @ y_c)), rcond=None)[0]
    assert np.allclose(x_star, x_ls, atol=1e-8 * (1 + np.abs(x_ls).max()))
    cost = lambda x: float((N @ x + Md @ y_c) @ (w * (N @ x + Md @ y_c)))
    for _ in range(5):
        assert cost(x_star) <= cost(x_star + 1e-3 * rng.standard_normal(x_star.shape)) + 1e-12


@settings(max_examples=200, deadline=None)
@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite),
       arrays(float, 4, elements=st.floats(0.01, 10)))
def test_sat_properties(v, u, ub):
    assert np.array_equal(dz(v, ub) == 0, np.abs(v) <= ub)
    assert np.all(np.abs(sat(v, ub) - sat(u, ub)) <= np.abs(v - u) + 1e-15)
    assert np.allclose(dz(v, ub), sat(v, ub) - v)


def test_no_warnings_for_satellite():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        bm.closed_loop()
