"""Two-satellite formation benchmark with four thrusters per satellite.

Units: thrust in mN, mass in kg, time in s.  Each thruster delivers 0 to
100 mN; the range is symmetrised to +/-50 mN and the physical command is
recovered by adding the offset ``xi = u_bar``.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .model import (AllocatorWeights, ControllerModel, DisturbanceClass, InfluenceModel,
                    PlantModel, assemble_closed_loop)
from .results import SynthesisResult

MASS = 1000.0
U_BAR = 50.0
M_SINGLE = np.array([[1.0, -1.0, -1.0, 1.0]])
N_SINGLE = np.vstack([[1.0, 1.0, -1.0], np.eye(3)])
# thrusters 2-4 of satellite 1 lose part of their authority
M_UNCERTAIN = np.array([[0.0, 1.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0],
                        [0.0] * 8])
THETA_RANGE = (0.9, 1.0)

X0_DISTURBED = np.array([-0.18, 0.0])
X0_ROBUST = np.array([-0.25, 0.0])
W_PULSE = 0.1667
W_PULSE_END = 36.0
RHO_DISTURBED = (2.0, 0.15, 1000.0)
RHO_ROBUST = (2.0, 0.15)


def plant(m1: float = MASS, m2: float = MASS) -> PlantModel:
    return PlantModel(
        A_p=[[0.0, 1.0], [0.0, 0.0]],
        B_p=[[0.0, 0.0], [1.0 / m1, -1.0 / m2]],
        C_p=[[1.0, 0.0]],
        B_w=[[0.0], [1.0 / m1]],
    )


def controller() -> ControllerModel:
    """LQG controller (identity weights) for the relative-position loop."""
    return ControllerModel(
        A_c=[[-1.7321, 1.0], [-1.0014, -0.0532]],
        B_c=[[1.7321], [1.0]],
        C_c=[[-0.7071, -26.6009], [0.7071, 26.6009]],
        D_c=[[0.0], [0.0]],
    )


def nominal_influence() -> np.ndarray:
    return sla.block_diag(M_SINGLE, M_SINGLE)


def kernel_basis() -> np.ndarray:
    return sla.block_diag(N_SINGLE, N_SINGLE)


def pseudo_inverse() -> np.ndarray:
    return 0.25 * sla.block_diag(M_SINGLE.T, M_SINGLE.T)


def weights() -> AllocatorWeights:
    """Penalise thruster 1 a hundred times more than the others."""
    return AllocatorWeights([100.0] + [1.0] * 7)


def influence(uncertain: bool = False) -> InfluenceModel:
    vertices = tuple(theta * M_UNCERTAIN for theta in THETA_RANGE) if uncertain else ()
    return InfluenceModel(M_n=nominal_influence(), u_bar=np.full(8, U_BAR),
                          vertices=vertices, N=kernel_basis())


def disturbance_class() -> DisturbanceClass:
    return DisturbanceClass(R=[[1.0]], sigma=1.0)


def closed_loop(uncertain: bool = False):
    return assemble_closed_loop(plant(), controller(), influence(uncertain), weights())


def theta_weights(theta: float) -> np.ndarray:
    """Simplex weights over the two vertices for a scalar ``theta``."""
    lo, hi = THETA_RANGE
    if not lo - 1e-12 <= theta <= hi + 1e-12:
        raise ValueError(f"theta={theta} outside [{lo}, {hi}]")
    a = (hi - theta) / (hi - lo)
    return np.array([a, 1.0 - a])


def initial_state(cl, x_p0) -> np.ndarray:
    x0 = np.zeros(cl.n)
    x0[:len(x_p0)] = x_p0
    return x0


def shaped_trace_selector(n: int) -> np.ndarray:
    """Bound only the first diagonal entry of ``P_0`` (relative position direction)."""
    T = np.zeros((1, n))
    T[0, 0] = 1.0
    return T


# Four-decimal gains quoted for the two design examples; used as external inputs.
_EC_EF_DISTURBED = [
    [-0.1708, -0.0059, -0.0032, -0.0053, 0.0111, -0.0066, -0.0066, 0.0066],
    [-0.0895, -0.0118, -0.0103, 0.0057, -0.0024, 0.0048, 0.0048, -0.0048],
    [-0.0480, -0.0103, 0.1031, -0.0662, 0.0747, 0.1042, 0.1042, -0.1042],
    [-0.0805, 0.0057, -0.0661, 0.0225, -0.0512, -0.0537, -0.0537, 0.0537],
    [0.1277, -0.0018, 0.0566, -0.0389, -0.0080, 0.0722, 0.0722, -0.0722],
    [-0.0757, 0.0037, 0.0790, -0.0408, 0.0722, 0.9615, -0.3662, 0.3662],
    [-0.0757, 0.0037, 0.0790, -0.0408, 0.0722, -0.3662, 0.9615, 0.3662],
    [0.0757, -0.0037, -0.0790, 0.0408, -0.0722, 0.3662, 0.3662, 0.9615],
]
_KF_DISTURBED = [
    [-1.8960, 0.9476, -0.9437, 0.0053, 0.0053, -0.0053],
    [0.9103, -1.8750, -0.9090, 0.0013, 0.0013, -0.0013],
    [-0.8741, -0.8266, -1.8904, -0.0007, -0.0007, 0.0007],
    [-0.0020, -0.0009, 0.0118, -1.6716, 0.5010, -0.5010],
    [-0.0020, -0.0009, 0.0118, 0.5010, -1.6716, -0.5010],
    [0.0020, 0.0009, -0.0118, -0.5010, -0.5010, -1.6716],
]
_EC_EF_ROBUST = [
    [0.0019, -0.0000, 0.0394, -0.0193, 0.0325, -0.0411, -0.0411, 0.0411],
    [-0.0002, -0.0047, 0.0142, -0.0043, 0.0118, -0.0160, -0.0160, 0.0160],
    [1.2781, 0.0144, 0.1663, -0.0741, 0.1006, 0.1297, 0.1297, -0.1297],
    [-0.6243, -0.0044, -0.0738, 0.3141, 0.2881, -0.0918, -0.0918, 0.0918],
    [0.7725, 0.0088, 0.0736, 0.2114, 0.3749, 0.0720, 0.0720, -0.0720],
    [-0.9763, -0.0119, 0.0949, -0.0674, 0.0721, 0.9519, -0.3357, 0.3357],
    [-0.9763, -0.0119, 0.0949, -0.0674, 0.0721, -0.3357, 0.9519, 0.3357],
    [0.9763, 0.0119, -0.0949, 0.0674, -0.0721, 0.3357, 0.3357, 0.9519],
]
_KF_ROBUST = [
    [-1.1684, 0.6813, -0.4766, 0.0034, 0.0034, -0.0034],
    [0.7282, -1.0438, -0.3054, 0.0249, 0.0249, -0.0249],
    [-0.4528, -0.3418, -0.8017, 0.0284, 0.0284, -0.0284],
    [-0.0200, 0.0792, 0.0584, -0.8628, 0.1381, -0.1381],
    [-0.0200, 0.0792, 0.0584, 0.1381, -0.8628, -0.1381],
    [0.0200, -0.0792, -0.0584, -0.1381, -0.1381, -0.8628],
]


def reference_gains(which: str) -> SynthesisResult:
    """Quoted gains for ``"disturbed"`` or ``"robust"`` as an external result."""
    if which == "disturbed":
        E, K_f = np.array(_EC_EF_DISTURBED), np.array(_KF_DISTURBED)
    elif which == "robust":
        E, K_f = np.array(_EC_EF_ROBUST), np.array(_KF_ROBUST)
    else:
        raise ValueError(f"unknown example {which!r}")
    return SynthesisResult(mode="external", K_f=K_f, E_c=E[:2], E_f=E[2:])
