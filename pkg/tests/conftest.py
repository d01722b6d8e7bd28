import numpy as np
import pytest
import scipy.linalg as sla

from dynalloc import satellite as bm
from dynalloc.model import (AllocatorWeights, ControllerModel, InfluenceModel, PlantModel,
                            assemble_closed_loop)
from dynalloc.synthesis import SynthesisOptions, synthesize


@pytest.fixture(scope="session")
def sat_cl():
    return bm.closed_loop()


@pytest.fixture(scope="session")
def sat_cl_robust():
    return bm.closed_loop(uncertain=True)


@pytest.fixture(scope="session")
def disturbed_design(sat_cl):
    opts = SynthesisOptions(mode="disturbed", rho=bm.RHO_DISTURBED,
                            trace_selector=bm.shaped_trace_selector(sat_cl.n))
    return synthesize(sat_cl, opts, bm.disturbance_class())


@pytest.fixture(scope="session")
def nominal_design(sat_cl):
    return synthesize(sat_cl, SynthesisOptions(mode="nominal", rho=(2.0, 0.15)))


@pytest.fixture(scope="session")
def robust_design(sat_cl_robust):
    return synthesize(sat_cl_robust, SynthesisOptions(mode="robust", rho=bm.RHO_ROBUST))


def lqg_controller(A_p, B_p, C_p):
    """Observer-based controller with identity weights; makes A0 Hurwitz."""
    n_p, m_c = B_p.shape
    q = C_p.shape[0]
    X = sla.solve_continuous_are(A_p, B_p, np.eye(n_p), np.eye(m_c))
    K = B_p.T @ X
    Y = sla.solve_continuous_are(A_p.T, C_p.T, np.eye(n_p), np.eye(q))
    L = Y @ C_p.T
    return ControllerModel(A_c=A_p - B_p @ K - L @ C_p, B_c=L, C_c=-K, D_c=np.zeros((m_c, q)))


def random_system(rng, n_p=None, m_c=None, m_a=None, n_w=1, stable_plant=False, vertex=None):
    """Random small over-actuated loop (n_p <= 3, m_a <= 4) with an LQG controller."""
    n_p = n_p or int(rng.integers(1, 4))
    m_c = m_c or int(rng.integers(1, 3))
    m_a = m_a or int(rng.integers(m_c + 1, 5))
    A_p = rng.standard_normal((n_p, n_p))
    if stable_plant:
        A_p -= (np.max(np.linalg.eigvals(A_p).real) + 0.5) * np.eye(n_p)
    B_p = rng.standard_normal((n_p, m_c))
    C_p = rng.standard_normal((1, n_p))
    B_w = rng.standard_normal((n_p, n_w)) if n_w else None
    plant = PlantModel(A_p=A_p, B_p=B_p, C_p=C_p, B_w=B_w)
    M_n = rng.standard_normal((m_c, m_a))
    u_bar = rng.uniform(1.0, 5.0, m_a)
    vertices = () if vertex is None else (vertex(M_n),)
    infl = InfluenceModel(M_n=M_n, u_bar=u_bar, vertices=vertices)
    return assemble_closed_loop(plant, lqg_controller(A_p, B_p, C_p), infl,
                                AllocatorWeights(np.ones(m_a)))
