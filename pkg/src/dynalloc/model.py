"""System data and closed-loop assembly for dynamic control allocation.

The closed loop stacks plant, controller and allocator states as
``x = [x_p; x_c; x_f]`` and is written as::

    dx/dt = (A(theta) + L_f K_f C_bar) x + (B(theta) + L E) dz(C x) + B_w_bar w
    y_f   = C x

where ``dz`` is the deadzone ``sat(v) - v``.  Everything here is plain numpy
data; nothing in this module touches an optimizer.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

RANK_RTOL = 1e-8


class ModelError(ValueError):
    """Inconsistent dimensions or rank conditions in the system data."""


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ModelError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} contains non-finite entries")
    return arr


def _numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0


def _pbh_ok(A: np.ndarray, X: np.ndarray, *, columns: bool) -> bool:
    # PBH test restricted to eigenvalues with nonnegative real part
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real < 0:
            continue
        if columns:
            test = np.hstack([A - lam * np.eye(n), X])
        else:
            test = np.vstack([A - lam * np.eye(n), X])
        if _numerical_rank(test) < n:
            return False
    return True


@dataclass(frozen=True)
class PlantModel:
    """Linear plant ``dx_p = A_p x_p + B_p u_p + B_w w``, ``y_p = C_p x_p``."""

    A_p: np.ndarray
    B_p: np.ndarray
    C_p: np.ndarray
    B_w: np.ndarray | None = None

    def __post_init__(self):
        A_p = _as_matrix(self.A_p, "A_p")
        n_p = A_p.shape[0]
        if A_p.shape != (n_p, n_p):
            raise ModelError(f"A_p must be square, got {A_p.shape}")
        B_p = _as_matrix(self.B_p, "B_p")
        if B_p.shape[0] != n_p:
            raise ModelError(f"B_p must have {n_p} rows, got {B_p.shape[0]}")
        C_p = _as_matrix(self.C_p, "C_p")
        if C_p.shape[1] != n_p:
            raise ModelError(f"C_p must have {n_p} columns, got {C_p.shape[1]}")
        if self.B_w is None:
            B_w = np.zeros((n_p, 0))
        else:
            B_w = np.asarray(self.B_w, dtype=float)
            B_w = B_w.reshape(n_p, -1) if B_w.ndim < 2 else B_w
            if B_w.shape[0] != n_p:
                raise ModelError(f"B_w must have {n_p} rows, got {B_w.shape[0]}")
        object.__setattr__(self, "A_p", A_p)
        object.__setattr__(self, "B_p", B_p)
        object.__setattr__(self, "C_p", C_p)
        object.__setattr__(self, "B_w", B_w)
        if not _pbh_ok(A_p, B_p, columns=True):
            warnings.warn("(A_p, B_p) is not stabilizable", stacklevel=3)
        if not _pbh_ok(A_p, C_p, columns=False):
            warnings.warn("(C_p, A_p) is not detectable", stacklevel=3)

    @property
    def n_p(self) -> int:
        return self.A_p.shape[0]

    @property
    def m_c(self) -> int:
        return self.B_p.shape[1]

    @property
    def q(self) -> int:
        return self.C_p.shape[0]

    @property
    def n_w(self) -> int:
        return self.B_w.shape[1]


@dataclass(frozen=True)
class ControllerModel:
    """Output-feedback controller ``(A_c, B_c, C_c, D_c)`` designed for ``u_p = y_c``.

    The anti-windup gain ``E_c`` is a synthesis output and is not stored here.
    """

    A_c: np.ndarray
    B_c: np.ndarray
    C_c: np.ndarray
    D_c: np.ndarray

    def __post_init__(self):
        A_c = _as_matrix(self.A_c, "A_c")
        n_c = A_c.shape[0]
        if A_c.shape != (n_c, n_c):
            raise ModelError(f"A_c must be square, got {A_c.shape}")
        B_c = _as_matrix(self.B_c, "B_c")
        C_c = _as_matrix(self.C_c, "C_c")
        D_c = _as_matrix(self.D_c, "D_c")
        if B_c.shape[0] != n_c:
            raise ModelError(f"B_c must have {n_c} rows, got {B_c.shape[0]}")
        if C_c.shape[1] != n_c:
            raise ModelError(f"C_c must have {n_c} columns, got {C_c.shape[1]}")
        if D_c.shape != (C_c.shape[0], B_c.shape[1]):
            raise ModelError(
                f"D_c must be {C_c.shape[0]}x{B_c.shape[1]}, got {D_c.shape}")
        object.__setattr__(self, "A_c", A_c)
        object.__setattr__(self, "B_c", B_c)
        object.__setattr__(self, "C_c", C_c)
        object.__setattr__(self, "D_c", D_c)

    @property
    def n_c(self) -> int:
        return self.A_c.shape[0]


@dataclass(frozen=True)
class InfluenceModel:
    """Actuator influence matrix ``M(theta) = M_n + sum_i alpha_i M_i``.

    ``vertices`` holds the uncertain parts ``M_i`` (empty in the nominal case)
    and ``u_bar`` the symmetric actuator magnitude bounds.  ``N`` optionally
    overrides the computed kernel basis of ``M_n``.
    """

    M_n: np.ndarray
    u_bar: np.ndarray
    vertices: tuple = ()
    N: np.ndarray | None = None

    def __post_init__(self):
        M_n = _as_matrix(self.M_n, "M_n")
        m_c, m_a = M_n.shape
        if m_a <= m_c:
            raise ModelError(f"need more actuators than inputs, M_n is {m_c}x{m_a}")
        u_bar = np.asarray(self.u_bar, dtype=float).ravel()
        if u_bar.shape != (m_a,):
            raise ModelError(f"u_bar must have length {m_a}, got {u_bar.size}")
        if np.any(u_bar <= 0):
            raise ModelError("u_bar entries must be positive")
        verts = tuple(_as_matrix(Mi, f"vertices[{i}]") for i, Mi in enumerate(self.vertices))
        for i, Mi in enumerate(verts):
            if Mi.shape != M_n.shape:
                raise ModelError(f"vertices[{i}] must be {m_c}x{m_a}, got {Mi.shape}")
        object.__setattr__(self, "M_n", M_n)
        object.__setattr__(self, "u_bar", u_bar)
        object.__setattr__(self, "vertices", verts)
        if self.N is not None:
            object.__setattr__(self, "N", _as_matrix(self.N, "N"))

    @property
    def m_c(self) -> int:
        return self.M_n.shape[0]

    @property
    def m_a(self) -> int:
        return self.M_n.shape[1]

    @property
    def n_alpha(self) -> int:
        return len(self.vertices)

    def matrix(self, alpha=None) -> np.ndarray:
        """Influence matrix at simplex weights ``alpha`` (nominal when None)."""
        if alpha is None or self.n_alpha == 0:
            return self.M_n.copy()
        alpha = check_simplex(alpha, self.n_alpha)
        return self.M_n + sum(a * Mi for a, Mi in zip(alpha, self.vertices))


@dataclass(frozen=True)
class DisturbanceClass:
    """Energy-bounded disturbances: ``int w' R w dt < 1/sigma``."""

    R: np.ndarray
    sigma: float

    def __post_init__(self):
        R = _as_matrix(self.R, "R")
        if R.shape[0] != R.shape[1] or not np.allclose(R, R.T):
            raise ModelError("R must be symmetric")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ModelError("R must be positive definite")
        if not self.sigma > 0:
            raise ModelError("sigma must be positive")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "sigma", float(self.sigma))


@dataclass(frozen=True)
class AllocatorWeights:
    """Diagonal actuator penalty ``W``; larger entries discourage an actuator."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim == 2:
            if not np.allclose(w, np.diag(np.diag(w))):
                raise ModelError("W must be diagonal")
            w = np.diag(w)
        w = w.ravel()
        if np.any(w <= 0):
            raise ModelError("W entries must be strictly positive")
        object.__setattr__(self, "w", w.copy())

    @property
    def W(self) -> np.ndarray:
        return np.diag(self.w)

    @property
    def W_sqrt(self) -> np.ndarray:
        return np.diag(np.sqrt(self.w))

    @classmethod
    def from_bounds(cls, u_bar) -> "AllocatorWeights":
        """Weights ``w_i = u_bar_i**-2``, which normalise actuators by their range."""
        return cls(np.asarray(u_bar, dtype=float) ** -2)


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    """Augmented closed-loop matrices; build with :func:`assemble_closed_loop`."""

    plant: PlantModel
    controller: ControllerModel
    influence: InfluenceModel
    weights: AllocatorWeights
    N: np.ndarray
    M_dagger: np.ndarray
    A0: np.ndarray
    A: np.ndarray
    B_bar: np.ndarray
    B: np.ndarray
    C: np.ndarray
    C_bar: np.ndarray
    C_bar_perp: np.ndarray
    L_c: np.ndarray
    L_f: np.ndarray
    L: np.ndarray
    B_w_bar: np.ndarray
    A_vertices: list = field(default_factory=list)
    B_vertices: list = field(default_factory=list)

    @property
    def n_p(self) -> int:
        return self.plant.n_p

    @property
    def n_c(self) -> int:
        return self.controller.n_c

    @property
    def n_f(self) -> int:
        return self.N.shape[1]

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m_a(self) -> int:
        return self.influence.m_a

    @property
    def m_c(self) -> int:
        return self.influence.m_c

    @property
    def n_w(self) -> int:
        return self.B_w_bar.shape[1]

    @property
    def u_bar(self) -> np.ndarray:
        return self.influence.u_bar

    @property
    def W(self) -> np.ndarray:
        return self.weights.W

    def vertex(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.A_vertices[i], self.B_vertices[i]

    def matrices_at(self, alpha=None) -> tuple[np.ndarray, np.ndarray]:
        """``(A(theta), B(theta))`` for simplex weights over the vertices."""
        if alpha is None or self.influence.n_alpha == 0:
            if self.influence.n_alpha == 0:
                return self.A, self.B
            raise ModelError("simplex weights required for an uncertain influence model")
        alpha = check_simplex(alpha, len(self.A_vertices))
        A = sum(a * Ai for a, Ai in zip(alpha, self.A_vertices))
        B = sum(a * Bi for a, Bi in zip(alpha, self.B_vertices))
        return A, B

    def closed_loop_matrices(self, K_f, E, alpha=None) -> tuple[np.ndarray, np.ndarray]:
        """State matrix ``A(theta) + L_f K_f C_bar`` and deadzone input ``B(theta) + L E``."""
        A, B = self.matrices_at(alpha)
        return A + self.L_f @ np.asarray(K_f) @ self.C_bar, B + self.L @ np.asarray(E)


def check_simplex(alpha, size: int) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.shape != (size,):
        raise ModelError(f"simplex weights must have length {size}, got {alpha.size}")
    if np.any(alpha < -1e-12) or abs(alpha.sum() - 1.0) > 1e-9:
        raise ModelError(f"weights {alpha} are not in the unit simplex")
    return np.clip(alpha, 0.0, None)


def nullspace_basis(M_n, override=None) -> np.ndarray:
    """Basis of ker(M_n), orthonormal unless ``override`` is given.

    A user basis is validated (``M_n N = 0`` and full column rank) and returned
    unchanged, which allows reproducing designs quoted with a specific ``N``.
    """
    M_n = _as_matrix(M_n, "M_n")
    m_c, m_a = M_n.shape
    if _numerical_rank(M_n) < m_c:
        raise ModelError("influence matrix not full row rank")
    n_f = m_a - m_c
    if override is None:
        return sla.null_space(M_n, rcond=RANK_RTOL)
    N = _as_matrix(override, "N")
    if N.shape != (m_a, n_f):
        raise ModelError(f"kernel basis must be {m_a}x{n_f}, got {N.shape}")
    scale = max(np.linalg.norm(M_n), 1.0) * max(np.linalg.norm(N), 1.0)
    if np.abs(M_n @ N).max() > 1e-10 * scale:
        raise ModelError("supplied N is not in the kernel of M_n")
    if _numerical_rank(N) < n_f:
        raise ModelError("supplied N is rank deficient")
    return N


def right_pseudo_inverse(M_n) -> np.ndarray:
    """``M_n' (M_n M_n')^{-1}`` computed from a QR factorisation of ``M_n'``."""
    M_n = _as_matrix(M_n, "M_n")
    m_c = M_n.shape[0]
    if _numerical_rank(M_n) < m_c:
        raise ModelError("influence matrix not full row rank")
    Q, R = np.linalg.qr(M_n.T)
    # M_n = R' Q'  =>  M_n Q R^{-T} = R' R^{-T} = I
    return Q @ sla.solve_triangular(R, np.eye(m_c), trans="T")


def orth_complement(C_bar) -> np.ndarray:
    """Orthonormal ``C_perp`` with ``C_bar C_perp = 0``."""
    C_bar = _as_matrix(C_bar, "C_bar")
    if _numerical_rank(C_bar) < C_bar.shape[0]:
        raise ModelError("C_bar not full row rank (check W, N)")
    return sla.null_space(C_bar, rcond=RANK_RTOL)


def sat(v, u_bar) -> np.ndarray:
    """Componentwise symmetric saturation at ``u_bar``."""
    u_bar = np.asarray(u_bar, dtype=float)
    return np.clip(v, -u_bar, u_bar)


def dz(v, u_bar) -> np.ndarray:
    """Deadzone ``sat(v) - v``; zero exactly when nothing saturates."""
    v = np.asarray(v, dtype=float)
    return sat(v, u_bar) - v


def spectral_abscissa(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return float(np.max(np.linalg.eigvals(A).real))


def linear_interconnection(plant: PlantModel, controller: ControllerModel) -> np.ndarray:
    """Plant/controller matrix ``A0`` for the unsaturated loop ``u_p = y_c``."""
    Ap, Bp, Cp = plant.A_p, plant.B_p, plant.C_p
    Ac, Bc, Cc, Dc = controller.A_c, controller.B_c, controller.C_c, controller.D_c
    return np.block([[Ap + Bp @ Dc @ Cp, Bp @ Cc], [Bc @ Cp, Ac]])


def optimal_allocator_state(N, W, M_dagger, y_c) -> np.ndarray:
    """Allocator state minimising ``y_f' W y_f`` with ``y_f = N x_f + M_dagger y_c``.

    This is also the steady state of the allocator whenever ``K_f`` is
    nonsingular.
    """
    N = np.asarray(N, dtype=float)
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = np.diag(W)
    rhs = N.T @ W @ np.asarray(M_dagger) @ np.asarray(y_c, dtype=float)
    return -np.linalg.solve(N.T @ W @ N, rhs)


def assemble_closed_loop(plant: PlantModel, controller: ControllerModel,
                         influence: InfluenceModel, weights: AllocatorWeights,
                         *, check_hurwitz: bool = True) -> ClosedLoop:
    """Build the augmented closed-loop data.

    Raises
    ------
    ModelError
        On dimension mismatch, rank deficiency, or (with ``check_hurwitz``)
        when the unsaturated plant/controller loop is not Hurwitz.
    """
    n_p, n_c = plant.n_p, controller.n_c
    m_c, m_a = influence.m_c, influence.m_a
    if plant.m_c != m_c:
        raise ModelError(f"B_p has {plant.m_c} inputs but M_n has {m_c} rows")
    if controller.B_c.shape[1] != plant.q:
        raise ModelError(f"B_c expects {controller.B_c.shape[1]} outputs, plant has {plant.q}")
    if controller.C_c.shape[0] != m_c:
        raise ModelError(f"C_c must have {m_c} rows, got {controller.C_c.shape[0]}")
    if weights.w.shape != (m_a,):
        raise ModelError(f"W must have {m_a} diagonal entries, got {weights.w.size}")

    N = nullspace_basis(influence.M_n, influence.N)
    M_dagger = right_pseudo_inverse(influence.M_n)
    n_f = N.shape[1]
    n_o = n_p + n_c
    n = n_o + n_f

    A0 = linear_interconnection(plant, controller)
    if check_hurwitz and spectral_abscissa(A0) >= 0:
        raise ModelError(
            f"plant/controller loop is not Hurwitz (spectral abscissa "
            f"{spectral_abscissa(A0):.3g})")

    A = np.zeros((n, n))
    A[:n_o, :n_o] = A0
    B_bar = np.vstack([plant.B_p, np.zeros((n_c + n_f, m_c))])
    B = B_bar @ influence.M_n
    C = np.hstack([M_dagger @ controller.D_c @ plant.C_p, M_dagger @ controller.C_c, N])
    C_bar = N.T @ weights.W @ C
    C_bar_perp = orth_complement(C_bar)
    L_c = np.vstack([np.zeros((n_p, n_c)), np.eye(n_c), np.zeros((n_f, n_c))])
    L_f = np.vstack([np.zeros((n_o, n_f)), np.eye(n_f)])
    L = np.hstack([L_c, L_f])
    B_w_bar = np.vstack([plant.B_w, np.zeros((n_c + n_f, plant.n_w))])

    if influence.n_alpha:
        A_vertices = [A + B_bar @ Mi @ C for Mi in influence.vertices]
        B_vertices = [B + B_bar @ Mi for Mi in influence.vertices]
    else:
        A_vertices, B_vertices = [A], [B]

    return ClosedLoop(
        plant=plant, controller=controller, influence=influence, weights=weights,
        N=N, M_dagger=M_dagger, A0=A0, A=A, B_bar=B_bar, B=B, C=C, C_bar=C_bar,
        C_bar_perp=C_bar_perp, L_c=L_c, L_f=L_f, L=L, B_w_bar=B_w_bar,
        A_vertices=A_vertices, B_vertices=B_vertices)
