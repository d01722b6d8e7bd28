"""Small dense SDP layer: affine matrix expressions and LMI problems.

Decision variables are matrices with a declared structure.  Each structure
has a fixed vectorisation into scalars (``full``: row-major entries,
``symmetric``: upper triangle row by row, ``diagonal``: the diagonal,
``pattern``: entries where a boolean mask is True).  Expressions built from
variables are :class:`Affine` objects that carry one coefficient matrix per
scalar, so callers compose LMIs with ordinary ``+``, ``-``, ``@`` and
:func:`bmat` and never see scalar indices.

Example
-------
>>> prob = SdpProblem()
>>> P = prob.variable("P", (1, 1), "symmetric")
>>> pos = prob.add_psd(P, strict=True)
>>> lyap = prob.add_nsd(-1.0 * P + P * -1.0, strict=True)  # A'P + PA with A = -1
>>> solve(prob).status
'optimal'
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

STRUCTURES = ("full", "symmetric", "diagonal", "pattern", "scalar")
BACKEND_ENV = "DYNALLOC_SDP_BACKEND"
FEASIBLE_RESIDUAL = -1e-7
CVXOPT_MIN_TOL = 1e-8


class SdpError(RuntimeError):
    """Malformed problem or backend failure."""


class Affine:
    """Matrix-valued affine function ``const + sum_k x_k * coef[k]``.

    ``terms`` maps a variable name to an array of shape ``(k, rows, cols)``
    holding one coefficient matrix per scalar of that variable.
    """

    __array_ufunc__ = None  # make ndarray @ Affine defer to __rmatmul__

    def __init__(self, const, terms=None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.terms = {} if terms is None else terms

    @property
    def shape(self):
        return self.const.shape

    @property
    def T(self) -> "Affine":
        return Affine(self.const.T, {k: np.swapaxes(v, 1, 2) for k, v in self.terms.items()})

    def _combine(self, other, sign):
        if isinstance(other, Affine):
            if other.shape != self.shape:
                raise SdpError(f"shape mismatch {self.shape} vs {other.shape}")
            terms = dict(self.terms)
            for k, v in other.terms.items():
                terms[k] = terms[k] + sign * v if k in terms else sign * v
            return Affine(self.const + sign * other.const, terms)
        other = np.asarray(other, dtype=float)
        if other.ndim == 0:
            if self.shape != (1, 1) and other != 0:
                raise SdpError("only zero can be added to a non-scalar expression")
            other = np.full(self.shape, float(other))
        other = np.atleast_2d(other)
        if other.shape != self.shape:
            raise SdpError(f"shape mismatch {self.shape} vs {other.shape}")
        return Affine(self.const + sign * other, dict(self.terms))

    def __add__(self, other):
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return (-self)._combine(other, 1.0)

    def __neg__(self):
        return Affine(-self.const, {k: -v for k, v in self.terms.items()})

    def __mul__(self, other):
        if isinstance(other, Affine):
            raise SdpError("product of two affine expressions is not affine")
        other = np.asarray(other, dtype=float)
        if other.ndim == 0:
            c = float(other)
            return Affine(c * self.const, {k: c * v for k, v in self.terms.items()})
        if self.shape != (1, 1):
            raise SdpError("only a 1x1 expression can scale a matrix")
        other = np.atleast_2d(other)
        return Affine(self.const[0, 0] * other,
                      {k: v[:, 0, 0][:, None, None] * other for k, v in self.terms.items()})

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, Affine):
            raise SdpError("product of two affine expressions is not affine")
        other = np.atleast_2d(np.asarray(other, dtype=float))
        return Affine(self.const @ other, {k: v @ other for k, v in self.terms.items()})

    def __rmatmul__(self, other):
        other = np.atleast_2d(np.asarray(other, dtype=float))
        return Affine(other @ self.const, {k: other @ v for k, v in self.terms.items()})

    def __getitem__(self, idx):
        const = self.const[idx]
        if const.ndim != 2:
            raise SdpError("indexing must keep two dimensions; use slices")
        return Affine(const, {k: v[(slice(None),) + (idx if isinstance(idx, tuple) else (idx,))]
                              for k, v in self.terms.items()})

    def trace(self) -> "Affine":
        if self.shape[0] != self.shape[1]:
            raise SdpError("trace of a non-square expression")
        return Affine(np.trace(self.const),
                      {k: np.trace(v, axis1=1, axis2=2)[:, None, None] for k, v in self.terms.items()})

    def is_symmetric(self, tol: float = 1e-10) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        scale = 1.0 + np.abs(self.const).max(initial=0.0)
        if np.abs(self.const - self.const.T).max(initial=0.0) > tol * scale:
            return False
        return all(np.abs(v - np.swapaxes(v, 1, 2)).max(initial=0.0) <= tol * (1.0 + np.abs(v).max(initial=0.0))
                   for v in self.terms.values())

    def symmetrized(self) -> "Affine":
        return Affine(0.5 * (self.const + self.const.T),
                      {k: 0.5 * (v + np.swapaxes(v, 1, 2)) for k, v in self.terms.items()})

    def evaluate(self, values: dict) -> np.ndarray:
        """Numeric value given scalar vectors ``values[name]``."""
        out = self.const.copy()
        for k, v in self.terms.items():
            out += np.tensordot(values[k], v, axes=1)
        return out

    def __repr__(self):
        return f"Affine(shape={self.shape}, vars={sorted(self.terms)})"


def bmat(blocks):
    """Block matrix from ndarrays, :class:`Affine` objects, or ``None`` (zero).

    Returns an ndarray if no block is affine.
    """
    rows = len(blocks)
    cols = len(blocks[0])
    heights = [None] * rows
    widths = [None] * cols
    for i, row in enumerate(blocks):
        if len(row) != cols:
            raise SdpError("ragged block structure")
        for j, b in enumerate(row):
            if b is None:
                continue
            shape = b.shape if isinstance(b, Affine) else np.atleast_2d(np.asarray(b)).shape
            if heights[i] is None:
                heights[i] = shape[0]
            elif heights[i] != shape[0]:
                raise SdpError(f"block row {i} has inconsistent heights")
            if widths[j] is None:
                widths[j] = shape[1]
            elif widths[j] != shape[1]:
                raise SdpError(f"block column {j} has inconsistent widths")
    if None in heights or None in widths:
        raise SdpError("every block row and column needs at least one sized block")
    r_off = np.concatenate([[0], np.cumsum(heights)])
    c_off = np.concatenate([[0], np.cumsum(widths)])
    const = np.zeros((r_off[-1], c_off[-1]))
    terms: dict[str, np.ndarray] = {}
    for i, row in enumerate(blocks):
        for j, b in enumerate(row):
            if b is None:
                continue
            rs = slice(r_off[i], r_off[i + 1])
            cs = slice(c_off[j], c_off[j + 1])
            if isinstance(b, Affine):
                const[rs, cs] = b.const
                for k, v in b.terms.items():
                    if k not in terms:
                        terms[k] = np.zeros((v.shape[0], r_off[-1], c_off[-1]))
                    terms[k][:, rs, cs] = v
            else:
                const[rs, cs] = np.atleast_2d(np.asarray(b, dtype=float))
    if not terms and not any(isinstance(b, Affine) for row in blocks for b in row):
        return const
    return Affine(const, terms)


def vstack(items):
    return bmat([[x] for x in items])


def hstack(items):
    return bmat([list(items)])


def sym(X):
    """``He{X} = X + X'`` for arrays and affine expressions alike."""
    return X + X.T


@dataclass
class VariableSpec:
    name: str
    shape: tuple
    structure: str
    index: list  # (row, col) per scalar; symmetric entries list the upper element

    @property
    def size(self) -> int:
        return len(self.index)

    def unpack(self, scalars) -> np.ndarray:
        out = np.zeros(self.shape)
        for v, (i, j) in zip(np.asarray(scalars, dtype=float), self.index):
            out[i, j] = v
            if self.structure == "symmetric":
                out[j, i] = v
        return out

    def pack(self, matrix) -> np.ndarray:
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        return np.array([matrix[i, j] for i, j in self.index])


@dataclass
class Constraint:
    name: str
    expr: Affine
    margin: float = 0.0
    family: str = ""

    @property
    def size(self) -> int:
        return self.expr.shape[0]


@dataclass
class SdpProblem:
    """Collection of matrix variables, PSD constraints and a linear objective.

    Every constraint reads ``expr - margin * I >= 0`` (positive semidefinite).
    """

    variables: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    objective: Affine | None = None
    eps_rel: float = 1e-7

    def variable(self, name: str, shape, structure: str = "full", mask=None) -> Affine:
        if name in self.variables:
            raise SdpError(f"duplicate variable {name!r}")
        if structure not in STRUCTURES:
            raise SdpError(f"unknown structure {structure!r}")
        if structure == "scalar":
            shape = (1, 1)
        shape = tuple(int(s) for s in (shape if np.ndim(shape) else (shape, shape)))
        r, c = shape
        if structure in ("symmetric", "diagonal") and r != c:
            raise SdpError(f"{structure} variable {name!r} must be square")
        if structure in ("full", "scalar"):
            index = [(i, j) for i in range(r) for j in range(c)]
        elif structure == "symmetric":
            index = [(i, j) for i in range(r) for j in range(i, r)]
        elif structure == "diagonal":
            index = [(i, i) for i in range(r)]
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != shape:
                raise SdpError(f"mask for {name!r} must have shape {shape}")
            index = [(i, j) for i in range(r) for j in range(c) if mask[i, j]]
        spec = VariableSpec(name, shape, structure, index)
        self.variables[name] = spec
        coef = np.zeros((spec.size, r, c))
        for k, (i, j) in enumerate(index):
            coef[k, i, j] = 1.0
            if structure == "symmetric":
                coef[k, j, i] = 1.0
        return Affine(np.zeros(shape), {name: coef} if spec.size else {})

    def strict_margin(self, expr: Affine) -> float:
        return self.eps_rel * (1.0 + np.linalg.norm(expr.const, 2))

    def add_psd(self, expr, *, strict: bool = False, margin: float | None = None,
                name: str | None = None, family: str = "") -> Constraint:
        """Require ``expr >= 0`` (``>= eps I`` when strict)."""
        if not isinstance(expr, Affine):
            raise SdpError("constraint has no decision variables")
        if not expr.is_symmetric():
            raise SdpError(f"constraint {name or len(self.constraints)} is not symmetric")
        expr = expr.symmetrized()
        if margin is None:
            margin = self.strict_margin(expr) if strict else 0.0
        con = Constraint(name or f"c{len(self.constraints)}", expr, float(margin), family)
        self.constraints.append(con)
        return con

    def add_nsd(self, expr, **kw) -> Constraint:
        """Require ``expr <= 0`` (``<= -eps I`` when strict)."""
        return self.add_psd(-expr, **kw)

    def minimize(self, expr) -> None:
        if not isinstance(expr, Affine) or expr.shape != (1, 1):
            raise SdpError("objective must be a 1x1 affine expression")
        self.objective = expr

    @property
    def n_scalars(self) -> int:
        return sum(v.size for v in self.variables.values())

    def offsets(self) -> dict:
        off, out = 0, {}
        for name, spec in self.variables.items():
            out[name] = off
            off += spec.size
        return out

    def stacked(self, expr: Affine) -> tuple[np.ndarray, np.ndarray]:
        """Constant and ``(n_scalars, r, c)`` coefficient tensor of ``expr``."""
        coef = np.zeros((self.n_scalars,) + expr.shape)
        offs = self.offsets()
        for k, v in expr.terms.items():
            coef[offs[k]:offs[k] + v.shape[0]] = v
        return expr.const, coef

    def split(self, x) -> dict:
        offs = self.offsets()
        return {k: np.asarray(x[offs[k]:offs[k] + s.size]) for k, s in self.variables.items()}

    def subproblem(self, families) -> "SdpProblem":
        """Feasibility problem keeping only constraints of the given families."""
        keep = set(families)
        return SdpProblem(variables=dict(self.variables),
                          constraints=[c for c in self.constraints if c.family in keep],
                          objective=None, eps_rel=self.eps_rel)

    def dump(self) -> str:
        """Human-readable summary for debugging; not a stable format."""
        lines = [f"variables {self.n_scalars} scalars"]
        for spec in self.variables.values():
            lines.append(f"  {spec.name} {spec.shape[0]}x{spec.shape[1]} {spec.structure} ({spec.size})")
        lines.append(f"constraints {len(self.constraints)}")
        for c in self.constraints:
            lines.append(f"  {c.name} [{c.family}] {c.size}x{c.size} margin={c.margin:.3g}")
        if self.objective is not None:
            lines.append(f"objective over {sorted(self.objective.terms)}")
        return "\n".join(lines)


@dataclass
class SdpSolution:
    status: str
    values: dict
    scalars: dict
    objective: float
    worst_residual: float
    residuals: dict
    diagnostics: dict

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "feasible")

    def value(self, expr):
        if isinstance(expr, Affine):
            return expr.evaluate(self.scalars)
        return np.asarray(expr)


@dataclass
class SolveOptions:
    backend: str | None = None
    tol: float = 1e-9
    max_iter: int = 200
    verbose: bool = False
    # extra backend keyword settings, e.g. {"max_step_fraction": 0.9} for clarabel
    backend_settings: dict = field(default_factory=dict)


def constraint_residuals(problem: SdpProblem, scalars: dict) -> dict:
    """Minimum eigenvalue of ``expr - margin I`` for each constraint."""
    out = {}
    for c in problem.constraints:
        val = c.expr.evaluate(scalars)
        val = 0.5 * (val + val.T)
        out[c.name] = float(np.linalg.eigvalsh(val).min() - c.margin)
    return out


def _svec_index(n):
    # clarabel: upper triangle, column by column, off-diagonals scaled by sqrt(2)
    rows, cols, scale = [], [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
            scale.append(1.0 if i == j else np.sqrt(2.0))
    return np.array(rows), np.array(cols), np.array(scale)


def _solve_clarabel(problem: SdpProblem, opts: SolveOptions):
    import clarabel

    nx = problem.n_scalars
    A_blocks, b_blocks, cones = [], [], []
    lin_A, lin_b = [], []
    for c in problem.constraints:
        const, coef = problem.stacked(c.expr)
        k = c.size
        F0 = const - c.margin * np.eye(k)
        if k == 1:
            lin_A.append(-coef[:, 0, 0])
            lin_b.append(F0[0, 0])
            continue
        r, cl, s = _svec_index(k)
        A_blocks.append(-(coef[:, r, cl] * s).T)
        b_blocks.append(F0[r, cl] * s)
        cones.append(clarabel.PSDTriangleConeT(k))
    mats, rhs, all_cones = [], [], []
    if lin_A:
        mats.append(np.array(lin_A))
        rhs.append(np.array(lin_b))
        all_cones.append(clarabel.NonnegativeConeT(len(lin_A)))
    mats += A_blocks
    rhs += b_blocks
    all_cones += cones
    A = sp.csc_matrix(np.vstack(mats)) if mats else sp.csc_matrix((0, nx))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    q = np.zeros(nx)
    if problem.objective is not None:
        q = problem.stacked(problem.objective)[1][:, 0, 0].copy()
    P = sp.csc_matrix((nx, nx))

    settings = clarabel.DefaultSettings()
    settings.verbose = opts.verbose
    settings.max_iter = opts.max_iter
    settings.tol_gap_abs = opts.tol
    settings.tol_gap_rel = opts.tol
    settings.tol_feas = opts.tol
    settings.max_threads = 1
    for key, val in opts.backend_settings.items():
        if not hasattr(settings, key):
            raise SdpError(f"unknown clarabel setting {key!r}")
        setattr(settings, key, val)
    solver = clarabel.DefaultSolver(P, q, A, b, all_cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    mapping = {
        "Solved": "optimal",
        "AlmostSolved": "feasible",
        "PrimalInfeasible": "infeasible",
        "AlmostPrimalInfeasible": "infeasible",
        "DualInfeasible": "unbounded",
        "AlmostDualInfeasible": "unbounded",
    }
    return mapping.get(status, "numerical-failure"), np.array(sol.x), {
        "backend": "clarabel", "raw_status": status, "iterations": sol.iterations}


def _solve_cvxopt(problem: SdpProblem, opts: SolveOptions):
    try:
        import cvxopt
        from cvxopt import solvers
    except ImportError as exc:  # pragma: no cover - optional backend
        raise SdpError("cvxopt backend requested but cvxopt is not installed") from exc

    nx = problem.n_scalars
    Gl, hl, Gs, hs = [], [], [], []
    for c in problem.constraints:
        const, coef = problem.stacked(c.expr)
        k = c.size
        F0 = const - c.margin * np.eye(k)
        if k == 1:
            Gl.append(-coef[:, 0, 0])
            hl.append(F0[0, 0])
            continue
        # column-major vec of each coefficient matrix
        Gs.append(cvxopt.matrix(-coef.transpose(0, 2, 1).reshape(nx, k * k).T))
        hs.append(cvxopt.matrix(F0))
    q = np.zeros(nx)
    if problem.objective is not None:
        q = problem.stacked(problem.objective)[1][:, 0, 0].copy()
    kwargs = {}
    if Gl:
        kwargs["Gl"] = cvxopt.matrix(np.array(Gl))
        kwargs["hl"] = cvxopt.matrix(np.array(hl))
    # per-call options keep the module-level cvxopt defaults untouched
    # cvxopt breaks down (singular scalings) below about 1e-8
    tol = max(opts.tol, CVXOPT_MIN_TOL)
    kwargs["options"] = {"show_progress": opts.verbose, "abstol": tol,
                         "reltol": tol, "feastol": tol,
                         "maxiters": opts.max_iter, **opts.backend_settings}
    try:
        res = solvers.sdp(cvxopt.matrix(q), Gs=Gs or None, hs=hs or None, **kwargs)
    except (ArithmeticError, ValueError) as exc:
        # cvxopt raises on singular scalings instead of reporting a status
        return "numerical-failure", np.full(nx, np.nan), {
            "backend": "cvxopt", "raw_status": f"exception: {exc!r}"}
    raw = res["status"]
    if raw == "optimal":
        status = "optimal"
    elif raw == "primal infeasible":
        status = "infeasible"
    elif raw == "dual infeasible":
        status = "unbounded"
    else:
        status = "feasible" if res["x"] is not None else "numerical-failure"
    x = np.zeros(nx) if res["x"] is None else np.array(res["x"]).ravel()
    return status, x, {"backend": "cvxopt", "raw_status": raw, "iterations": res.get("iterations"),
                       "tol": tol}


_BACKENDS = {"clarabel": _solve_clarabel, "cvxopt": _solve_cvxopt}


def _cvxopt_available() -> bool:
    try:
        import cvxopt  # noqa: F401
    except ImportError:
        return False
    return True


def solve(problem: SdpProblem, options: SolveOptions | None = None) -> SdpSolution:
    """Solve ``problem`` and re-check every constraint on the returned point.

    A backend claim of success is downgraded to ``numerical-failure`` when
    the worst re-checked residual falls below ``-1e-7``.  Conversely, when
    the backend stops early (numerical trouble, iteration limit) but its last
    iterate satisfies every constraint including the strict margins, the
    point is returned as ``feasible``: it is a valid certificate, merely not
    proven optimal.

    If no backend is pinned (argument or environment) and clarabel ends in
    ``numerical-failure``, the problem is re-solved with cvxopt when that is
    installed; ``diagnostics["attempts"]`` records every try.
    """
    opts = options or SolveOptions()
    pinned = opts.backend or os.environ.get(BACKEND_ENV)
    backend = (pinned or "clarabel").lower()
    if backend not in _BACKENDS:
        raise SdpError(f"unknown SDP backend {backend!r}; choose from {sorted(_BACKENDS)}")
    for name, spec in problem.variables.items():
        used = any(name in c.expr.terms for c in problem.constraints)
        used = used or (problem.objective is not None and name in problem.objective.terms)
        if spec.size and not used:
            raise SdpError(f"variable {name!r} appears in no constraint or objective")

    sol = _solve_once(problem, backend, opts)
    if sol.status == "numerical-failure" and not pinned and _cvxopt_available():
        first = sol
        retry = replace(opts, backend_settings={})
        sol = _solve_once(problem, "cvxopt", retry)
        sol.diagnostics["attempts"] = [first.diagnostics, dict(sol.diagnostics)]
    return sol


def _solve_once(problem: SdpProblem, backend: str, opts: SolveOptions) -> SdpSolution:
    t0 = time.perf_counter()
    status, x, diag = _BACKENDS[backend](problem, opts)
    diag["solve_time"] = time.perf_counter() - t0
    finite = bool(np.all(np.isfinite(x)))
    if not finite:
        status, x = "numerical-failure", np.nan_to_num(x)
    scalars = problem.split(x)
    values = {k: problem.variables[k].unpack(v) for k, v in scalars.items()}
    residuals = {}
    if finite and status in ("optimal", "feasible", "numerical-failure"):
        residuals = constraint_residuals(problem, scalars)
    worst = min(residuals.values()) if residuals else float("nan")
    if status in ("optimal", "feasible") and worst < FEASIBLE_RESIDUAL:
        diag["downgraded_from"] = status
        status = "numerical-failure"
    elif status == "numerical-failure" and residuals and worst >= 0.0:
        diag["upgraded_from"] = status
        status = "feasible"
    obj = float(problem.objective.evaluate(scalars)[0, 0]) if problem.objective is not None else 0.0
    return SdpSolution(status=status, values=values, scalars=scalars, objective=obj,
                       worst_residual=worst, residuals=residuals, diagnostics=diag)
