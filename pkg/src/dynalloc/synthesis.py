"""LMI co-design of the dynamic allocator and anti-windup gains.

Four design modes share one parametrisation of the decision variables:

``nominal``
    regional stability on ``{x' P x <= 1}`` with an energy bound ``gamma``;
``global``
    the same inequality with the sector matrix forced to zero (open-loop
    stable plants only);
``disturbed``
    energy-bounded disturbances, ellipsoid ``{x' P x <= 1/mu}``;
``robust``
    one LMI copy per vertex of a polytopic influence matrix, shared gains.

Each mode builds an :class:`~dynalloc.sdp.SdpProblem`, solves it and maps the
solution back to ``K_f``, ``E_c``, ``E_f`` and the Lyapunov certificate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .model import ClosedLoop, DisturbanceClass, spectral_abscissa
from .results import SynthesisResult
from .sdp import Affine, SdpProblem, SolveOptions, bmat, solve, sym, vstack

log = logging.getLogger(__name__)

RECOVERY_RTOL = 1e-8


class SynthesisError(RuntimeError):
    """Synthesis could not produce gains."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class InfeasibleError(SynthesisError):
    """The LMI problem was reported infeasible."""


class SingularRecoveryError(SynthesisError):
    """A matrix that must be inverted to recover gains is near singular."""


@dataclass
class SynthesisOptions:
    """Weights and numerical knobs for the design problems.

    ``rho`` holds the objective weights on the ellipsoid size bound, the
    energy bound ``gamma`` and (disturbed mode) the level ``mu``.
    ``trace_selector`` replaces ``P_0 <= lam I`` with
    ``T P_0 T' <= lam I``; e.g. ``T = e_1'`` bounds a single direction.
    With a selector the remaining entries of ``P_0`` are unbounded and the
    solver lets them grow large; ``p0_regularization * trace(P_0)`` is added
    to the objective to keep them at a scale where absolute residual checks
    are meaningful.
    """

    mode: str = "nominal"
    rho: tuple = (1.0, 1.0, 1.0)
    sigma_line_search: bool = False
    sigma_ratio: float = 0.8
    sigma_max_steps: int = 25
    eps: float = 1e-7
    trace_selector: np.ndarray | None = None
    p0_regularization: float = 1e-6
    solver: SolveOptions = field(default_factory=SolveOptions)
    diagnose: bool = True

    def __post_init__(self):
        rho = tuple(float(r) for r in self.rho) + (0.0,) * (3 - len(self.rho))
        if any(r < 0 for r in rho):
            raise ValueError("objective weights must be nonnegative")
        self.rho = rho[:3]
        if self.mode != "global" and not any(self.rho):
            raise ValueError(f"{self.mode} mode needs at least one positive objective weight")
        if self.p0_regularization < 0:
            raise ValueError("p0_regularization must be nonnegative")
        if not 0 < self.sigma_ratio < 1:
            raise ValueError("sigma_ratio must lie in (0, 1)")


@dataclass
class DecisionVariables:
    """Synthesis unknowns, either symbolic (:class:`Affine`) or numeric arrays."""

    P_bar: list
    J_o: object
    J_f: object
    K_bar_f: object
    K_e: object
    G_bar: object
    S: object
    gamma: object
    mu: object = None
    lam: object = None
    P_0: object = None

    def J_bar(self, cl: ClosedLoop):
        return vstack([self.J_o @ cl.C_bar_perp.T, self.J_f])

    def Z(self, cl: ClosedLoop):
        n_o = cl.n_p + cl.n_c
        return bmat([[np.zeros((n_o, n_o)), None], [None, self.K_bar_f]])


def build_psi(cl: ClosedLoop, v: DecisionVariables, vertex_index: int | None = None):
    """The ``(2n + 2 m_a)``-square synthesis matrix that must be negative definite.

    With ``vertex_index`` the vertex pair ``(A_i, B_i)`` and ``P_bar_i`` are
    used; otherwise the nominal ``A``, ``B`` and the first ``P_bar``.
    """
    if vertex_index is None:
        A, B, P_bar = cl.A, cl.B, v.P_bar[0]
    else:
        A, B = cl.vertex(vertex_index)
        P_bar = v.P_bar[vertex_index]
    n, m_a = cl.n, cl.m_a
    W_half = cl.weights.W_sqrt
    J_bar = v.J_bar(cl)
    Z = v.Z(cl)
    if np.shape(v.G_bar) != (m_a, n):
        raise ValueError(f"G_bar must be {m_a}x{n}")

    p13 = B @ v.S + cl.L @ v.K_e
    p12 = P_bar + A @ J_bar.T + Z - J_bar
    p22 = sym(A @ J_bar.T + Z)
    p23 = p13 - v.G_bar.T - J_bar @ cl.C.T
    p24 = J_bar @ cl.C.T @ W_half
    p34 = v.S @ W_half
    p44 = -(v.gamma * np.eye(m_a))
    return bmat([
        [-sym(J_bar), p12, p13, np.zeros((n, m_a))],
        [p12.T, p22, p23, p24],
        [p13.T, p23.T, -2.0 * v.S, p34],
        [np.zeros((m_a, n)), p24.T, p34.T, p44],
    ])


def build_psi_w(cl: ClosedLoop, v: DecisionVariables, R):
    """Synthesis matrix bordered by the disturbance row ``[B_w', B_w', 0, 0, -R]``."""
    psi = build_psi(cl, v)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Bw = cl.B_w_bar
    n_w = Bw.shape[1]
    row = np.hstack([Bw.T, Bw.T, np.zeros((n_w, 2 * cl.m_a))])
    return bmat([[psi, row.T], [row, -R]])


def _ellipsoid_blocks(P_bar, G_bar, u_bar, level=None):
    blocks = []
    for i, u in enumerate(u_bar):
        corner = (u * u) * level if level is not None else np.array([[u * u]])
        blocks.append(bmat([[P_bar, G_bar[i:i + 1, :].T], [G_bar[i:i + 1, :], corner]]))
    return blocks


def _declare(prob: SdpProblem, cl: ClosedLoop, mode: str, n_vertices: int) -> DecisionVariables:
    n, n_o, n_f, n_c, m_a = cl.n, cl.n_p + cl.n_c, cl.n_f, cl.n_c, cl.m_a
    P_bar = [prob.variable("P_bar" if n_vertices == 1 else f"P_bar{i}", n, "symmetric")
             for i in range(n_vertices)]
    v = DecisionVariables(
        P_bar=P_bar,
        J_o=prob.variable("J_o", (n_o, n_o)),
        J_f=prob.variable("J_f", (n_f, n)),
        K_bar_f=prob.variable("K_bar_f", (n_f, n_f)),
        K_e=prob.variable("K_e", (n_c + n_f, m_a)),
        G_bar=np.zeros((m_a, n)) if mode == "global" else prob.variable("G_bar", (m_a, n)),
        S=prob.variable("S", m_a, "diagonal"),
        gamma=prob.variable("gamma", 1, "scalar"),
    )
    if mode == "disturbed":
        v.mu = prob.variable("mu", 1, "scalar")
    if mode != "global":
        v.lam = prob.variable("lam", 1, "scalar")
        v.P_0 = prob.variable("P_0", n, "symmetric")
    return v


def _add_trace_bound(prob, cl, v, options, P_bar, family):
    n = cl.n
    J_bar = v.J_bar(cl)
    prob.add_psd(bmat([[v.P_0, np.eye(n)], [np.eye(n), sym(J_bar) - P_bar]]),
                 name=f"trace[{family}]", family=family)


def _add_size_bound(prob, cl, v, options):
    T = options.trace_selector
    if T is None:
        prob.add_psd(v.lam * np.eye(cl.n) - v.P_0, name="lam_bound", family="trace")
    else:
        T = np.atleast_2d(np.asarray(T, dtype=float))
        prob.add_psd(v.lam * np.eye(T.shape[0]) - T @ v.P_0 @ T.T, name="lam_bound",
                     family="trace")


def _p0_penalty(v, options):
    if options.trace_selector is None or options.p0_regularization == 0:
        return 0.0
    return options.p0_regularization * v.P_0.trace()


def build_problem(cl: ClosedLoop, options: SynthesisOptions,
                  dist: DisturbanceClass | None = None, sigma: float | None = None):
    """Assemble the SDP for ``options.mode``; returns ``(problem, variables, families)``.

    ``families`` lists constraint groups in the order used for infeasibility
    attribution.
    """
    mode = options.mode
    n_vertices = len(cl.A_vertices) if mode == "robust" else 1
    prob = SdpProblem(eps_rel=options.eps)
    v = _declare(prob, cl, mode, n_vertices)
    u_bar = cl.u_bar
    rho1, rho2, rho3 = options.rho

    prob.add_psd(v.S, strict=True, name="S_pos", family="base")
    if mode == "robust":
        families = ["base"]
        for i in range(n_vertices):
            fam = f"vertex[{i}]"
            families.append(fam)
            prob.add_psd(v.P_bar[i], strict=True, name=f"P_bar_pos[{i}]", family=fam)
            prob.add_nsd(build_psi(cl, v, i), strict=True, name=f"psi[{i}]", family=fam)
            for j, blk in enumerate(_ellipsoid_blocks(v.P_bar[i], v.G_bar, u_bar)):
                prob.add_psd(blk, name=f"ellipsoid[{i},{j}]", family=fam)
            _add_trace_bound(prob, cl, v, options, v.P_bar[i], fam)
        _add_size_bound(prob, cl, v, options)
        families.append("trace")
        prob.minimize(rho1 * v.lam + rho2 * v.gamma + _p0_penalty(v, options))
        return prob, v, families

    prob.add_psd(v.P_bar[0], strict=True, name="P_bar_pos", family="base")
    if mode == "disturbed":
        prob.add_nsd(build_psi_w(cl, v, dist.R), strict=True, name="psi_w", family="psi")
        prob.add_psd(v.mu, strict=True, name="mu_pos", family="base")
        prob.add_psd(float(sigma) - v.mu, name="sigma_mu", family="sigma")
        level = v.mu
    else:
        prob.add_nsd(build_psi(cl, v), strict=True, name="psi", family="psi")
        level = None
    if mode == "global":
        prob.minimize(1.0 * v.gamma)
        return prob, v, ["base", "psi"]

    for j, blk in enumerate(_ellipsoid_blocks(v.P_bar[0], v.G_bar, u_bar, level)):
        prob.add_psd(blk, name=f"ellipsoid[{j}]", family="ellipsoid")
    _add_trace_bound(prob, cl, v, options, v.P_bar[0], "trace")
    _add_size_bound(prob, cl, v, options)
    objective = rho1 * v.lam + rho2 * v.gamma + _p0_penalty(v, options)
    if mode == "disturbed":
        objective = objective + rho3 * v.mu
    prob.minimize(objective)
    families = ["base", "psi", "ellipsoid", "trace"]
    if mode == "disturbed":
        families.insert(2, "sigma")
    return prob, v, families


def numeric_variables(v: DecisionVariables, sol) -> DecisionVariables:
    def val(x):
        return None if x is None else sol.value(x)

    return DecisionVariables(
        P_bar=[val(P) for P in v.P_bar], J_o=val(v.J_o), J_f=val(v.J_f),
        K_bar_f=val(v.K_bar_f), K_e=val(v.K_e), G_bar=val(v.G_bar), S=val(v.S),
        gamma=float(val(v.gamma)[0, 0]),
        mu=None if v.mu is None else float(val(v.mu)[0, 0]),
        lam=None if v.lam is None else float(val(v.lam)[0, 0]),
        P_0=val(v.P_0))


def _attribute(prob: SdpProblem, families, solver_opts) -> str | None:
    """Return the first family whose inclusion makes the problem infeasible."""
    active = []
    for fam in families:
        active.append(fam)
        sub = prob.subproblem(active)
        used = set()
        for c in sub.constraints:
            used.update(c.expr.terms)
        sub.variables = {k: s for k, s in sub.variables.items() if k in used}
        if not sub.constraints:
            continue
        if not solve(sub, solver_opts).ok:
            return fam
    return None


def _cond(M) -> float:
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    return float(np.inf) if s[-1] == 0 else float(s[0] / s[-1])


def recover_gains(v: DecisionVariables, cl: ClosedLoop, mode: str = "nominal") -> SynthesisResult:
    """Map numeric decision variables to gains and Lyapunov matrices.

    ``E = K_e S^-1``, ``K_f = K_bar_f (C_bar J_f')^-1``, ``P_i = J P_bar_i J'``
    and ``G = G_bar J_bar^-T`` with ``J = J_bar^-1``.
    """
    J_bar = np.asarray(v.J_bar(cl))
    CJ = cl.C_bar @ np.asarray(v.J_f).T
    for name, M in (("J_bar", J_bar), ("C_bar J_f'", CJ)):
        c = _cond(M)
        if not c * RECOVERY_RTOL < 1.0:
            raise SingularRecoveryError(
                f"{name} is numerically singular (condition number {c:.3e})",
                {"matrix": name, "condition_number": c})
    S = np.asarray(v.S)
    s = np.diag(S)
    if np.any(s <= 0):
        raise SingularRecoveryError("S is not positive definite", {"S": s.tolist()})
    J = np.linalg.inv(J_bar)
    E = np.asarray(v.K_e) / s[None, :]
    K_f = np.linalg.solve(CJ.T, np.asarray(v.K_bar_f).T).T
    P_vertices = []
    for P_bar in v.P_bar:
        P = J @ np.asarray(P_bar) @ J.T
        P_vertices.append(0.5 * (P + P.T))
    G = np.linalg.solve(J_bar, np.asarray(v.G_bar).T).T
    n_c = cl.n_c
    return SynthesisResult(
        mode=mode, K_f=K_f, E_c=E[:n_c], E_f=E[n_c:], P_vertices=P_vertices, G=G, S=S,
        gamma=float(v.gamma), mu=v.mu, lam=v.lam, J_bar=J_bar,
        diagnostics={"cond_J_bar": _cond(J_bar), "cond_C_bar_J_f": _cond(CJ)})


def _run(cl: ClosedLoop, options: SynthesisOptions, dist=None, sigma=None) -> SynthesisResult:
    prob, v, families = build_problem(cl, options, dist, sigma)
    sol = solve(prob, options.solver)
    report = {"status": sol.status, "mode": options.mode, **sol.diagnostics}
    if sol.status in ("infeasible", "unbounded", "numerical-failure") or not sol.ok:
        if options.diagnose and sol.status == "infeasible":
            report["failing_family"] = _attribute(prob, families, options.solver)
        cls = InfeasibleError if sol.status == "infeasible" else SynthesisError
        fam = report.get("failing_family")
        msg = f"{options.mode} synthesis failed: {sol.status}"
        if fam:
            msg += f" (first failing constraint family: {fam})"
        raise cls(msg, report)

    num = numeric_variables(v, sol)
    result = recover_gains(num, cl, options.mode)
    result.status = sol.status
    result.objective = sol.objective
    result.sigma = None if sigma is None else float(sigma)
    margins = {c.name: c.margin for c in prob.constraints}
    result.diagnostics.update({
        "solver": sol.diagnostics,
        "worst_residual": sol.worst_residual,
        "lmi_min_eig": {k: r + margins[k] for k, r in sol.residuals.items()},
        "n_scalars": prob.n_scalars,
    })
    log.info("%s synthesis: %s, gamma=%.4g, objective=%.4g, %.2fs", options.mode, sol.status,
             result.gamma, sol.objective, sol.diagnostics.get("solve_time", 0.0))
    return result


def synthesize_nominal(cl: ClosedLoop, options: SynthesisOptions | None = None) -> SynthesisResult:
    """Regional design: minimise ``rho1 * lam + rho2 * gamma``."""
    options = replace(options or SynthesisOptions(), mode="nominal")
    if cl.influence.n_alpha:
        log.warning("nominal synthesis ignores %d uncertainty vertices", cl.influence.n_alpha)
        cl = replace(cl, A_vertices=[cl.A], B_vertices=[cl.B])
    return _run(cl, options)


def synthesize_global(cl: ClosedLoop, options: SynthesisOptions | None = None) -> SynthesisResult:
    """Global design with the sector matrix fixed to zero; minimises ``gamma``.

    Raises
    ------
    SynthesisError
        If the plant matrix ``A_p`` is not Hurwitz.
    """
    if spectral_abscissa(cl.plant.A_p) >= 0:
        raise SynthesisError("global mode requires stable plant",
                             {"spectral_abscissa": spectral_abscissa(cl.plant.A_p)})
    options = replace(options or SynthesisOptions(), mode="global")
    return _run(cl, options)


def synthesize_disturbed(cl: ClosedLoop, dist: DisturbanceClass,
                         options: SynthesisOptions | None = None) -> SynthesisResult:
    """Design for energy-bounded disturbances.

    With ``options.sigma_line_search`` the bound ``sigma`` is decreased
    geometrically (``sigma_k = sigma_0 * r**k``) until the problem becomes
    infeasible, and the last feasible design is returned.
    """
    if cl.n_w < 1:
        raise SynthesisError("disturbed mode needs a disturbance input (n_w >= 1)")
    options = replace(options or SynthesisOptions(), mode="disturbed")
    if dist.R.shape != (cl.n_w, cl.n_w):
        raise SynthesisError(f"R must be {cl.n_w}x{cl.n_w}")
    if not options.sigma_line_search:
        return _run(cl, options, dist, dist.sigma)

    best = None
    trail = []
    sigma = dist.sigma
    for _ in range(options.sigma_max_steps):
        try:
            res = _run(cl, replace(options, diagnose=False), dist, sigma)
        except SynthesisError as exc:
            trail.append({"sigma": sigma, "status": exc.report.get("status", "error")})
            break
        trail.append({"sigma": sigma, "status": res.status, "mu": res.mu})
        best = res
        sigma *= options.sigma_ratio
    if best is None:
        raise InfeasibleError("disturbed synthesis infeasible at the initial sigma",
                              {"line_search": trail})
    best.diagnostics["line_search"] = trail
    return best


def synthesize_robust(cl: ClosedLoop, options: SynthesisOptions | None = None) -> SynthesisResult:
    """Vertex design over the influence-matrix polytope; minimises ``rho1 * lam + rho2 * gamma``."""
    if cl.influence.n_alpha < 1:
        raise SynthesisError("robust mode needs at least one uncertainty vertex")
    options = replace(options or SynthesisOptions(), mode="robust")
    return _run(cl, options)


def synthesize(cl: ClosedLoop, options: SynthesisOptions, dist: DisturbanceClass | None = None):
    """Dispatch on ``options.mode``."""
    if options.mode == "nominal":
        return synthesize_nominal(cl, options)
    if options.mode == "global":
        return synthesize_global(cl, options)
    if options.mode == "disturbed":
        if dist is None:
            raise SynthesisError("disturbed mode needs a disturbance class")
        return synthesize_disturbed(cl, dist, options)
    if options.mode == "robust":
        return synthesize_robust(cl, options)
    raise ValueError(f"unknown mode {options.mode!r}")


def psi_max_eig(cl: ClosedLoop, v: DecisionVariables, vertex_index=None, R=None) -> float:
    """Largest eigenvalue of the (numeric) synthesis matrix."""
    M = build_psi(cl, v, vertex_index) if R is None else build_psi_w(cl, v, R)
    if isinstance(M, Affine):
        raise TypeError("decision variables must be numeric")
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).max())
