"""A-posteriori checks of designs and trajectories.

Everything here works from recovered quantities (gains, ``P``, ``G``, ``S``,
``gamma``, ``mu`` and the slack matrix ``J_bar``) plus model data, so results
loaded from disk or typed in from elsewhere can be checked without the
synthesis code.  Two independent routes certify a design:

* ``psi``: the synthesis matrix rebuilt from ``P_bar = J_bar P J_bar'``,
  ``G_bar = G J_bar'``, ``K_e = E S`` and ``K_bar_f = K_f C_bar J_f'``;
* ``analysis``: the slack-free dissipation inequality in ``(x, phi, w)``
  built directly from ``P``, the closed-loop matrices and ``T = S^-1``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import ClosedLoop, dz, spectral_abscissa
from .results import SynthesisResult
from .sim import energy_metric

STRICT_TOL = 1e-9
SEMIDEF_TOL = 1e-9
INVARIANCE_RTOL = 1e-6
LYAPUNOV_RTOL = 1e-8
ANALYSIS_ROUNDING = 100 * np.finfo(float).eps


class VerificationError(ValueError):
    """Inputs are incomplete or inconsistent (not a failed check)."""


@dataclass
class Check:
    name: str
    status: str  # "pass", "fail" or "not-applicable"
    margin: float | None = None
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status != "fail"


@dataclass
class Report:
    title: str
    checks: list = field(default_factory=list)

    def add(self, name, ok, margin=None, **detail) -> Check:
        status = ok if isinstance(ok, str) else ("pass" if ok else "fail")
        c = Check(name, status, None if margin is None else float(margin), _plain(detail))
        self.checks.append(c)
        return c

    def extend(self, other: "Report") -> "Report":
        self.checks.extend(other.checks)
        return self

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"title": self.title, "passed": self.passed,
                "checks": [asdict(c) for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"# {self.title}"]
        for c in self.checks:
            m = "" if c.margin is None else f" margin={c.margin:.6e}"
            lines.append(f"{c.status.upper():<15} {c.name}{m}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _he(X):
    return X + X.T


def _max_eig(M) -> float:
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).max())


def _min_eig(M) -> float:
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())


def _require(result: SynthesisResult, names):
    missing = [n for n in names if getattr(result, n) is None or
               (n == "P_vertices" and not result.P_vertices)]
    if missing:
        raise VerificationError(f"result lacks certificate fields: {', '.join(missing)}")


def psi_matrix(cl: ClosedLoop, A, B, P_bar, J_bar, K_bar_f, K_e, G_bar, S, gamma) -> np.ndarray:
    """The slack-variable synthesis matrix evaluated at numeric data."""
    n, m_a, n_o = cl.n, cl.m_a, cl.n_p + cl.n_c
    W_half = np.diag(np.sqrt(np.diag(cl.W)))
    C, L = cl.C, cl.L
    Z = np.zeros((n, n))
    Z[n_o:, n_o:] = K_bar_f
    AJ = A @ J_bar.T + Z
    p13 = B @ S + L @ K_e
    p12 = P_bar + AJ - J_bar
    p23 = p13 - G_bar.T - J_bar @ C.T
    p24 = J_bar @ C.T @ W_half
    return np.block([
        [-_he(J_bar), p12, p13, np.zeros((n, m_a))],
        [p12.T, _he(AJ), p23, p24],
        [p13.T, p23.T, -2.0 * S, S @ W_half],
        [np.zeros((m_a, n)), p24.T, W_half @ S, -gamma * np.eye(m_a)],
    ])


def analysis_matrix(cl: ClosedLoop, A_cl, B_cl, P, G, S, gamma, R=None) -> np.ndarray:
    """Quadratic form of ``dV/dt + sat'W sat/gamma - 2 phi'S^-1(phi + Cx + Gx) - w'Rw``.

    Variables are ``(x, phi)``, plus ``w`` when ``R`` is given; negative
    definiteness certifies decrease of ``V = x'Px`` inside the sector region.
    """
    C, W = cl.C, cl.W
    T = np.diag(1.0 / np.diag(S))
    g = 1.0 / gamma
    xx = _he(P @ A_cl) + g * C.T @ W @ C
    xp = P @ B_cl + g * C.T @ W - (C + G).T @ T
    pp = g * W - 2.0 * T
    if R is None:
        return np.block([[xx, xp], [xp.T, pp]])
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Bw = cl.B_w_bar
    n_w = Bw.shape[1]
    return np.block([
        [xx, xp, P @ Bw],
        [xp.T, pp, np.zeros((cl.m_a, n_w))],
        [Bw.T @ P, np.zeros((n_w, cl.m_a)), -R],
    ])


def _vertex_data(cl: ClosedLoop, result: SynthesisResult):
    """``(label, A_i, B_i, P_i)`` triples the certificate must cover."""
    if result.mode == "robust":
        if len(result.P_vertices) != len(cl.A_vertices):
            raise VerificationError(
                f"robust result has {len(result.P_vertices)} P matrices, model has "
                f"{len(cl.A_vertices)} vertices")
        return [(f"[{i}]", A, B, P)
                for i, (A, B, P) in enumerate(zip(cl.A_vertices, cl.B_vertices, result.P_vertices))]
    return [("", cl.A, cl.B, result.P)]


def check_lmi_certificate(cl: ClosedLoop, result: SynthesisResult, mode: str | None = None,
                          R=None) -> Report:
    """Rebuild the design LMIs from recovered quantities and report eigenvalue margins.

    Strict blocks pass when their largest eigenvalue is ``<= -1e-9``;
    semidefinite blocks when their smallest is ``>= -1e-9``.  The slack-free
    ``analysis`` form must be negative beyond rounding (``100 eps |Q|``).  ``R`` is the
    disturbance weight, required in disturbed mode.
    """
    mode = mode or result.mode
    if mode not in ("nominal", "global", "disturbed", "robust"):
        raise VerificationError(f"cannot check a certificate in mode {mode!r}")
    _require(result, ["P_vertices", "S", "gamma", "J_bar"] + ([] if mode == "global" else ["G"]))
    if mode == "disturbed":
        _require(result, ["mu"])
        if R is None:
            raise VerificationError("disturbed certificate needs the disturbance weight R")
    n, n_o = cl.n, cl.n_p + cl.n_c
    J_bar = result.J_bar
    if J_bar.shape != (n, n):
        raise VerificationError(f"J_bar must be {n}x{n}, got {J_bar.shape}")
    S = result.S
    if not np.allclose(S, np.diag(np.diag(S))) or np.any(np.diag(S) <= 0):
        raise VerificationError("S must be diagonal positive definite")
    gamma = float(result.gamma)
    G = np.zeros((cl.m_a, n)) if mode == "global" else result.G
    J_f = J_bar[n_o:, :]
    K_bar_f = result.K_f @ cl.C_bar @ J_f.T
    K_e = result.E @ S
    G_bar = G @ J_bar.T
    level = float(result.mu) if mode == "disturbed" else 1.0
    u_bar = cl.u_bar

    rep = Report(f"LMI certificate ({mode})")
    R_mat = None if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    for label, A, B, P in _vertex_data(cl, result):
        P_min = _min_eig(P)
        rep.add(f"P_pos{label}", P_min > 0, P_min)
        P_bar = J_bar @ P @ J_bar.T
        psi = psi_matrix(cl, A, B, P_bar, J_bar, K_bar_f, K_e, G_bar, S, gamma)
        if mode == "disturbed":
            Bw = cl.B_w_bar
            row = np.hstack([Bw.T, Bw.T, np.zeros((Bw.shape[1], 2 * cl.m_a))])
            psi = np.block([[psi, row.T], [row, -R_mat]])
        top = _max_eig(psi)
        rep.add(f"psi{label}", top <= -STRICT_TOL, -top)
        A_cl = A + cl.L_f @ result.K_f @ cl.C_bar
        B_cl = B + cl.L @ result.E
        Q = analysis_matrix(cl, A_cl, B_cl, P, G, S, gamma, R_mat if mode == "disturbed" else None)
        # Q is the psi certificate seen through the congruence x = J' x_bar, which
        # rescales its margin by |J|^2; strictness is judged against rounding in Q.
        top = _max_eig(Q)
        floor = ANALYSIS_ROUNDING * np.linalg.norm(Q, 2)
        rep.add(f"analysis{label}", top < -floor, -top, rounding_floor=floor)
        if mode != "global":
            worst = min(_min_eig(np.block([[P_bar, G_bar[i:i + 1].T],
                                           [G_bar[i:i + 1], np.array([[level * u * u]])]]))
                        for i, u in enumerate(u_bar))
            rep.add(f"ellipsoid_lmi{label}", worst >= -SEMIDEF_TOL, worst)
    if mode == "disturbed":
        if result.sigma is None:
            raise VerificationError("disturbed certificate needs sigma")
        margin = float(result.sigma) - level
        rep.add("sigma_minus_mu", margin >= 0, margin)
    S_min = float(np.diag(S).min())
    rep.add("S_pos", S_min > 0, S_min)
    rep.add("gamma_pos", gamma > 0, gamma)
    return rep


def check_vertex_stability(cl: ClosedLoop, K_f, threshold: float = 0.0) -> Report:
    """Spectral abscissa of ``A_i + L_f K_f C_bar`` at every vertex; pass iff ``< threshold``."""
    K_f = np.atleast_2d(np.asarray(K_f, dtype=float))
    if K_f.shape != (cl.n_f, cl.n_f):
        raise VerificationError(f"K_f must be {cl.n_f}x{cl.n_f}, got {K_f.shape}")
    rep = Report("vertex stability")
    verts = cl.A_vertices if cl.influence.n_alpha else [cl.A]
    for i, A in enumerate(verts):
        a = spectral_abscissa(A + cl.L_f @ K_f @ cl.C_bar)
        rep.add(f"abscissa[{i}]", a < threshold, threshold - a, abscissa=a)
    return rep


def check_ellipsoid_inclusion(P, G, u_bar, level: float = 1.0, rtol: float = 1e-9) -> bool:
    """True iff ``G_i P^-1 G_i' <= level * u_bar_i**2`` for every row ``i``.

    This is the Schur complement of the ellipsoid LMI, i.e. the ellipsoid
    ``x'Px <= 1/level`` lies inside ``|G_i x| <= u_bar_i``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    try:
        L = np.linalg.cholesky(0.5 * (P + P.T))
    except np.linalg.LinAlgError:
        raise VerificationError("P is not positive definite") from None
    G = np.atleast_2d(np.asarray(G, dtype=float))
    u_bar = np.asarray(u_bar, dtype=float).ravel()
    Y = np.linalg.solve(L, G.T)  # L^-1 G'
    lhs = np.sum(Y * Y, axis=0)
    rhs = level * u_bar ** 2
    return bool(np.all(lhs <= rhs * (1.0 + rtol)))


def sample_ellipsoid(P, level: float, n_samples: int, rng) -> np.ndarray:
    """Uniform samples of ``{x : x'Px <= 1/level}``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = P.shape[0]
    L = np.linalg.cholesky(0.5 * (P + P.T))
    z = rng.standard_normal((n_samples, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = rng.random(n_samples) ** (1.0 / n) / np.sqrt(level)
    return np.linalg.solve(L.T, (z * r[:, None]).T).T


def check_sector_condition(cl: ClosedLoop, result: SynthesisResult, n_samples: int = 10_000,
                           seed: int = 0, alpha=None) -> Check:
    """Spot-check ``phi' S^-1 (phi + Cx + Gx) <= 0`` on random points of the ellipsoid."""
    _require(result, ["P_vertices", "S", "G"])
    rng = np.random.default_rng(seed)
    X = sample_ellipsoid(result.P_at(alpha), result.level, n_samples, rng)
    Y = X @ cl.C.T
    phi = dz(Y, cl.u_bar)
    s_inv = 1.0 / np.diag(result.S)
    val = np.sum(phi * s_inv * (phi + Y + X @ result.G.T), axis=1)
    scale = np.sum(np.abs(phi) * s_inv * (np.abs(phi) + np.abs(Y) + np.abs(X @ result.G.T)), axis=1)
    excess = val - 1e-12 * np.maximum(scale, 1.0)
    worst = float(excess.max())
    return Check("sector_condition", "pass" if worst <= 0 else "fail", -worst,
                 {"samples": n_samples, "saturated_fraction": float(np.mean(np.any(phi != 0, axis=1)))})


def _switch_mask(traj, u_bar=None) -> np.ndarray:
    """Per-sample flags: saturation pattern or disturbance differs from the previous sample."""
    pattern = traj.sat != traj.y_f
    change = np.zeros(len(traj.t), dtype=bool)
    change[1:] = np.any(pattern[1:] != pattern[:-1], axis=1) | np.any(traj.w[1:] != traj.w[:-1], axis=1)
    return change


def check_trajectory_certificates(traj, P, gamma, mu, W, R=None, sigma=None) -> Report:
    """Trajectory-level consequences of the certificate.

    * ``energy_bound``: trapezoidal ``int sat'W sat`` is at most ``gamma / mu``
      (``mu = 1`` outside disturbed mode).
    * ``ellipsoid_invariance``: every sample has ``x'Px <= (1 + 1e-6) / mu``;
      applicable when ``x(0)'Px(0) <= 1/mu - 1/sigma`` with admissible ``w``,
      or more generally when ``x(0)'Px(0) + int w'Rw <= 1/mu``.
    * ``lyapunov_decrease``: with ``w = 0`` and ``x(0)`` in the ellipsoid,
      ``V`` never grows by more than ``1e-8 max V``.
    * ``dissipation``: central differences of ``V`` satisfy
      ``dV/dt - w'Rw < 0``; stencils straddling a change of saturation
      pattern or a jump of ``w`` are skipped (the trajectory is only
      piecewise smooth there).
    """
    t = np.asarray(traj.t, dtype=float)
    X = np.asarray(traj.x, dtype=float)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if X.shape[0] != len(t) or X.shape[1] != P.shape[0]:
        raise VerificationError("trajectory grid or state size does not match P")
    mu = 1.0 if mu is None else float(mu)
    V = np.einsum("ij,jk,ik->i", X, P, X)
    w = np.asarray(traj.w, dtype=float)
    n_w = w.shape[1]
    R = np.eye(n_w) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    wRw = np.einsum("ij,jk,ik->i", w, R, w)
    disturbed = bool(np.any(wRw > 0))
    dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
    # w is held over each step, so the rectangle sum is the exact disturbance energy
    w_energy = float(np.sum(wRw[:-1]) * dt)
    rep = Report("trajectory certificates")

    energy = energy_metric(traj, W)
    bound = float(gamma) / mu
    rep.add("energy_bound", energy <= bound, bound - energy, energy=energy, bound=bound)

    level_inv = 1.0 / mu
    inside = V[0] <= level_inv
    admissible = sigma is None or w_energy < 1.0 / sigma
    strict_pre = inside and admissible and (
        not disturbed or sigma is None or V[0] <= level_inv - 1.0 / sigma)
    budget_pre = V[0] + w_energy <= level_inv
    if strict_pre or budget_pre:
        limit = level_inv * (1.0 + INVARIANCE_RTOL)
        rep.add("ellipsoid_invariance", bool(V.max() <= limit), limit - V.max(),
                V0=V[0], V_max=V.max(), disturbance_energy=w_energy,
                precondition="beta" if strict_pre else "energy-budget")
    else:
        rep.add("ellipsoid_invariance", "not-applicable", None, V0=V[0],
                disturbance_energy=w_energy, reason="x(0) outside the certified ellipsoid")

    if not disturbed and inside and len(t) > 1:
        tol = LYAPUNOV_RTOL * max(V.max(), np.finfo(float).tiny)
        rise = float(np.max(np.diff(V)))
        rep.add("lyapunov_decrease", rise <= tol, tol - rise)
    else:
        rep.add("lyapunov_decrease", "not-applicable", None,
                reason="disturbed run" if disturbed else "x(0) outside the ellipsoid")

    if len(t) >= 3 and (inside or budget_pre):
        change = _switch_mask(traj)
        # stencil k uses samples k-1, k, k+1; skip if a switch happens anywhere in it
        bad = change[1:-1] | change[2:]
        dV = (V[2:] - V[:-2]) / (2.0 * dt)
        # w on the stencil: both halves use the held values w[k-1], w[k]
        wterm = 0.5 * (wRw[:-2] + wRw[1:-1])
        lhs = dV - wterm
        floor = 64.0 * np.finfo(float).eps * max(V.max(), np.finfo(float).tiny) / dt
        lhs_ok = lhs[~bad]
        active = lhs_ok[np.abs(lhs_ok) > 0]
        worst = float(active.max()) if active.size else -np.inf
        ok = worst < floor
        rep.add("dissipation", ok, floor - worst if np.isfinite(worst) else None,
                checked=int((~bad).sum()), skipped=int(bad.sum()), roundoff_floor=floor)
    else:
        rep.add("dissipation", "not-applicable", None, reason="too few samples or outside region")
    return rep


def verify_result(cl: ClosedLoop, result: SynthesisResult, R=None, *, abscissa_threshold=0.0,
                  sector_samples: int = 10_000, seed: int = 0) -> Report:
    """All certificate-only checks applicable to ``result``."""
    rep = Report(f"verification ({result.mode})")
    rep.extend(check_vertex_stability(cl, result.K_f, abscissa_threshold))
    if result.mode == "external" or result.J_bar is None:
        if result.P_vertices:
            for i, P in enumerate(result.P_vertices):
                P_min = _min_eig(P)
                rep.add(f"P_pos[{i}]", P_min > 0, P_min)
        return rep
    rep.extend(check_lmi_certificate(cl, result, R=R))
    if result.mode != "global":
        for i, P in enumerate(result.P_vertices):
            ok = check_ellipsoid_inclusion(P, result.G, cl.u_bar, result.level)
            rep.add(f"ellipsoid_inclusion[{i}]", ok)
        for i in range(len(result.P_vertices)):
            alpha = None
            if len(result.P_vertices) > 1:
                alpha = np.eye(len(result.P_vertices))[i]
            c = check_sector_condition(cl, result, sector_samples, seed, alpha)
            c.name = f"sector_condition[{i}]"
            rep.checks.append(c)
    return rep
