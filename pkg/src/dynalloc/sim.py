"""Fixed-step simulation of the saturated closed loop and trajectory metrics.

The state is ``x = [x_p; x_c; x_f]`` and the loop is integrated in the form

    x' = (A(theta) + L_f K_f C_bar) x + (B(theta) + L E) dz(C x) + B_w_bar w

with classical RK4.  The deadzone is evaluated at every stage.  Disturbances
are held constant over each step (their breakpoints are snapped to the
grid), so the midpoint sample of a step is its value on the whole step.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid as _trapezoid

from .model import ClosedLoop, check_simplex, dz, sat
from .results import SynthesisResult

DIVERGENCE_LIMIT = 1e12


class SimulationError(RuntimeError):
    pass


@dataclass
class DisturbanceSignal:
    """Piecewise-constant disturbance.

    ``kind="piecewise-constant"``: ``values[i]`` holds on
    ``[breakpoints[i], breakpoints[i+1])`` and ``w = 0`` outside
    ``[breakpoints[0], breakpoints[-1])``.
    ``kind="samples"``: zero-order hold of ``values[i]`` from
    ``breakpoints[i]`` to the next sample time; zero after the last one.
    ``kind="zero"``: ``w = 0`` with ``n_w`` channels.
    """

    kind: str = "zero"
    breakpoints: np.ndarray | None = None
    values: np.ndarray | None = None
    n_w: int = 1

    def __post_init__(self):
        if self.kind not in ("zero", "piecewise-constant", "samples"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "zero":
            self.breakpoints = np.zeros(1)
            self.values = np.zeros((0, self.n_w))
            return
        t = np.asarray(self.breakpoints, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        n_int = len(t) - 1 if self.kind == "piecewise-constant" else len(t)
        if v.shape[0] != n_int:
            raise ValueError(f"{self.kind} signal needs {n_int} value rows, got {v.shape[0]}")
        if len(t) and np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if self.kind == "samples":
            # the last sample starts a zero segment
            v = v[:-1]
        self.breakpoints, self.values, self.n_w = t, v, v.shape[1]

    @classmethod
    def zero(cls, n_w: int = 1) -> "DisturbanceSignal":
        return cls("zero", n_w=n_w)

    @classmethod
    def pulse(cls, amplitude, t_start: float, t_end: float) -> "DisturbanceSignal":
        amp = np.atleast_1d(np.asarray(amplitude, dtype=float))
        return cls("piecewise-constant", [t_start, t_end], amp[None, :])

    def __call__(self, t: float) -> np.ndarray:
        t_b = self.breakpoints
        if self.values.shape[0] == 0 or t < t_b[0] or t >= t_b[-1]:
            return np.zeros(self.n_w)
        i = int(np.searchsorted(t_b, t, side="right")) - 1
        return self.values[i]

    def snapped(self, dt: float) -> "DisturbanceSignal":
        """Copy with breakpoints rounded to the grid ``k * dt``."""
        if self.kind == "zero":
            return self
        t = np.round(self.breakpoints / dt) * dt
        keep = np.concatenate([[True], np.diff(t) > 0])
        if not keep.all():
            raise ValueError(f"breakpoints closer than dt={dt} collapse when snapped")
        out = DisturbanceSignal.__new__(DisturbanceSignal)
        out.kind, out.breakpoints, out.values, out.n_w = self.kind, t, self.values.copy(), self.n_w
        return out

    def energy(self, R=None) -> float:
        """Exact ``int w' R w dt`` (the signal is constant between breakpoints)."""
        if self.values.shape[0] == 0:
            return 0.0
        R = np.eye(self.n_w) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
        widths = np.diff(self.breakpoints)[:self.values.shape[0]]
        quad = np.einsum("ij,jk,ik->i", self.values, R, self.values)
        return float(widths @ quad)

    def admissible(self, R, sigma: float) -> bool:
        return self.energy(R) < 1.0 / sigma

    def sampled(self, t_grid) -> np.ndarray:
        """Values on a grid, using the step-midpoint convention of the simulator."""
        t_grid = np.asarray(t_grid, dtype=float)
        if len(t_grid) < 2:
            return np.array([self(t) for t in t_grid]).reshape(len(t_grid), self.n_w)
        dt = t_grid[1] - t_grid[0]
        return np.array([self(t + 0.5 * dt) for t in t_grid]).reshape(len(t_grid), self.n_w)


@dataclass(frozen=True)
class SaturationSpec:
    """Symmetric bounds plus the offset restoring an asymmetric actuator range.

    A physical range ``[lo, hi]`` becomes ``u_bar = (hi - lo) / 2`` and
    ``xi = (hi + lo) / 2``; the thrust actually applied is ``sat(y_f) + xi``.
    """

    u_bar: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u_bar, dtype=float).ravel()
        xi = np.broadcast_to(np.asarray(self.xi, dtype=float), u.shape).copy()
        if np.any(u <= 0):
            raise ValueError("u_bar entries must be positive")
        object.__setattr__(self, "u_bar", u)
        object.__setattr__(self, "xi", xi)

    @classmethod
    def from_range(cls, lo, hi) -> "SaturationSpec":
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        return cls((hi - lo) / 2.0, (hi + lo) / 2.0)

    def physical(self, y_f) -> np.ndarray:
        return sat(y_f, self.u_bar) + self.xi


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    y_f: np.ndarray
    sat: np.ndarray
    u_p: np.ndarray
    y_c: np.ndarray
    e: np.ndarray
    w: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        for name in ("x", "y_f", "sat", "u_p", "y_c", "e", "w", "V"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"signal {name} is not aligned with the time grid")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def header(self) -> list[str]:
        cols = ["t"]
        for prefix, arr in (("x", self.x), ("yf", self.y_f), ("sat", self.sat), ("up", self.u_p),
                            ("yc", self.y_c), ("e", self.e), ("w", self.w)):
            cols += [f"{prefix}{i + 1}" for i in range(arr.shape[1])]
        return cols + ["V"]

    def table(self) -> np.ndarray:
        return np.column_stack([self.t, self.x, self.y_f, self.sat, self.u_p, self.y_c,
                                self.e, self.w, self.V])

    def to_csv(self, path=None) -> str:
        """Write the trajectory as CSV (``%.12e`` numbers) and return the text."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header())
        for row in self.table():
            writer.writerow([f"{v:.12e}" for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))

        def cols(prefix):
            idx = [i for i, h in enumerate(header)
                   if h.startswith(prefix) and h[len(prefix):].isdigit()]
            return data[:, idx]

        return cls(t=data[:, 0], x=cols("x"), y_f=cols("yf"), sat=cols("sat"), u_p=cols("up"),
                   y_c=cols("yc"), e=cols("e"), w=cols("w"), V=data[:, header.index("V")])


def _step_rk4(f, x, w, dt):
    k1 = f(x, w)
    k2 = f(x + 0.5 * dt * k1, w)
    k3 = f(x + 0.5 * dt * k2, w)
    k4 = f(x + dt * k3, w)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate(cl: ClosedLoop, A_cl, B_cl, x0, dist, t_final, dt):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if t_final < 0:
        raise ValueError("t_final must be nonnegative")
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (cl.n,):
        raise ValueError(f"x0 must have length {cl.n}, got {x0.size}")
    if dist is None:
        dist = DisturbanceSignal.zero(max(cl.n_w, 1))
    if cl.n_w and dist.n_w != cl.n_w:
        raise ValueError(f"disturbance has {dist.n_w} channels, plant has {cl.n_w}")
    dist = dist.snapped(dt)
    n_steps = int(round(t_final / dt))
    t = dt * np.arange(n_steps + 1)
    w = dist.sampled(t)
    C, u_bar = cl.C, cl.u_bar
    Bw = cl.B_w_bar if cl.n_w else np.zeros((cl.n, dist.n_w))

    def f(x, wk):
        return A_cl @ x + B_cl @ dz(C @ x, u_bar) + Bw @ wk

    X = np.empty((n_steps + 1, cl.n))
    X[0] = x0
    for k in range(n_steps):
        X[k + 1] = _step_rk4(f, X[k], w[k], dt)
        if not np.all(np.isfinite(X[k + 1])) or np.abs(X[k + 1]).max() > DIVERGENCE_LIMIT:
            raise SimulationError(f"divergence at t={t[k + 1]:.6g}")
    return t, X, w


def _signals(cl: ClosedLoop, t, X, w, alpha, P) -> Trajectory:
    yf = X @ cl.C.T
    s = sat(yf, cl.u_bar)
    M = cl.influence.matrix(alpha)
    u_p = s @ M.T
    n_p, n_c = cl.n_p, cl.n_c
    y_p = X[:, :n_p] @ cl.plant.C_p.T
    y_c = X[:, n_p:n_p + n_c] @ cl.controller.C_c.T + y_p @ cl.controller.D_c.T
    V = np.einsum("ij,jk,ik->i", X, P, X) if P is not None else np.full(len(t), np.nan)
    return Trajectory(t=t, x=X, y_f=yf, sat=s, u_p=u_p, y_c=y_c, e=u_p - y_c, w=w, V=V)


def _alpha(cl: ClosedLoop, theta_vertex_weights):
    if cl.influence.n_alpha == 0:
        return None
    if theta_vertex_weights is None:
        raise ValueError("uncertain influence model needs vertex weights")
    return check_simplex(theta_vertex_weights, cl.influence.n_alpha)


def simulate(cl: ClosedLoop, gains: SynthesisResult, theta_vertex_weights=None, x0=None,
             dist: DisturbanceSignal | None = None, t_final: float = 120.0,
             dt: float = 0.01) -> Trajectory:
    """Integrate the nonlinear closed loop with the allocator/anti-windup ``gains``.

    ``V = x' P x`` is filled in when ``gains`` carries a Lyapunov matrix
    (``P(alpha)`` interpolated over vertices in robust mode), NaN otherwise.
    """
    alpha = _alpha(cl, theta_vertex_weights)
    x0 = np.zeros(cl.n) if x0 is None else x0
    A_cl, B_cl = cl.closed_loop_matrices(gains.K_f, gains.E, alpha)
    t, X, w = _integrate(cl, A_cl, B_cl, x0, dist, t_final, dt)
    return _signals(cl, t, X, w, alpha, gains.P_at(alpha))


def static_baseline(cl: ClosedLoop, E_c, x0=None, dist: DisturbanceSignal | None = None,
                    t_final: float = 120.0, dt: float = 0.01,
                    theta_vertex_weights=None) -> Trajectory:
    """Same loop with the memoryless allocator ``y_f = M_dagger y_c``.

    The allocator state is frozen at zero (``K_f = 0``, ``E_f = 0``), which
    removes it from the loop; its columns stay in the trajectory as zeros.
    """
    alpha = _alpha(cl, theta_vertex_weights)
    x0 = np.zeros(cl.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    x0[cl.n_p + cl.n_c:] = 0.0
    E = np.vstack([np.atleast_2d(np.asarray(E_c, dtype=float)), np.zeros((cl.n_f, cl.m_a))])
    A_cl, B_cl = cl.closed_loop_matrices(np.zeros((cl.n_f, cl.n_f)), E, alpha)
    t, X, w = _integrate(cl, A_cl, B_cl, x0, dist, t_final, dt)
    return _signals(cl, t, X, w, alpha, None)


def trapezoid(y, t) -> float:
    if len(t) < 2:
        return 0.0
    return float(_trapezoid(np.asarray(y, dtype=float), np.asarray(t, dtype=float)))


def energy_metric(traj: Trajectory, W) -> float:
    """Trapezoidal ``int sat(y_f)' W sat(y_f) dt``."""
    W = np.asarray(W, dtype=float)
    W = np.diag(W) if W.ndim == 1 else W
    return trapezoid(np.einsum("ij,jk,ik->i", traj.sat, W, traj.sat), traj.t)


def disturbance_energy(dist: DisturbanceSignal, R=None) -> float:
    return dist.energy(R)


def actuator_usage(traj: Trajectory) -> np.ndarray:
    """``int |sat(y_f)_i| dt`` for every actuator."""
    return np.array([trapezoid(np.abs(traj.sat[:, i]), traj.t) for i in range(traj.sat.shape[1])])


def trajectory_metrics(traj: Trajectory, W) -> dict:
    return {
        "energy": energy_metric(traj, W),
        "peak_abs_sat": np.abs(traj.sat).max(axis=0).tolist(),
        "actuator_usage": actuator_usage(traj).tolist(),
        "terminal_state_norm": float(np.linalg.norm(traj.x[-1])),
        "allocation_error_integral": trapezoid(np.linalg.norm(traj.e, axis=1), traj.t),
        "t_final": float(traj.t[-1]),
        "n_samples": int(len(traj.t)),
    }
