import numpy as np
import pytest

from dynalloc import satellite as bm
from dynalloc import sdp
from dynalloc.sdp import SdpError, SdpProblem, SolveOptions, constraint_residuals, solve

BACKENDS = ["clarabel", "cvxopt"]


def lyapunov_problem(A):
    A = np.atleast_2d(A)
    n = A.shape[0]
    prob = SdpProblem()
    P = prob.variable("P", n, "symmetric")
    prob.add_psd(P - np.eye(n), name="pos")
    prob.add_nsd(A.T @ P + P @ A, strict=True, name="lyap")
    return prob, P


@pytest.mark.parametrize("backend", BACKENDS)
def test_minimize_scalar_bound(backend):
    prob = SdpProblem()
    x = prob.variable("x", 1, "scalar")
    prob.add_psd(x - 1.0)
    prob.minimize(x)
    sol = solve(prob, SolveOptions(backend=backend))
    assert sol.status == "optimal"
    assert abs(sol.values["x"][0, 0] - 1.0) < 1e-7


@pytest.mark.parametrize("backend", BACKENDS)
def test_scalar_lyapunov(backend):
    prob, P = lyapunov_problem(-1.0)
    sol = solve(prob, SolveOptions(backend=backend))
    assert sol.ok and sol.value(P)[0, 0] > 0
    prob, _ = lyapunov_problem(1.0)
    assert solve(prob, SolveOptions(backend=backend)).status == "infeasible"


@pytest.mark.parametrize("backend", BACKENDS)
def test_satellite_lyapunov(backend):
    A0 = bm.closed_loop().A0
    prob, P = lyapunov_problem(A0)
    sol = solve(prob, SolveOptions(backend=backend))
    assert sol.ok
    Pv = sol.value(P)
    assert np.linalg.eigvalsh(Pv).min() > 0
    assert np.linalg.eigvalsh(A0.T @ Pv + Pv @ A0).max() < 0


@pytest.mark.parametrize("backend", BACKENDS)
def test_residual_round_trip_and_margin(backend):
    A0 = bm.closed_loop().A0
    prob, P = lyapunov_problem(A0)
    prob.minimize(P.trace())
    sol = solve(prob, SolveOptions(backend=backend))
    assert sol.ok and sol.worst_residual >= -1e-7
    Pv = sol.value(P)
    # independent re-evaluation of every block
    lyap = -(A0.T @ Pv + Pv @ A0)
    pos = Pv - np.eye(4)
    margin = {c.name: c.margin for c in prob.constraints}
    assert abs(np.linalg.eigvalsh(lyap).min() - margin["lyap"] - sol.residuals["lyap"]) <= 1e-9
    assert abs(np.linalg.eigvalsh(pos).min() - sol.residuals["pos"]) <= 1e-9
    # still strictly feasible with a tenth of the margin
    assert np.linalg.eigvalsh(lyap).min() >= margin["lyap"] / 10


def test_strict_margin_default():
    prob = SdpProblem()
    x = prob.variable("x", 1, "scalar")
    con = prob.add_nsd(x - 3.0 * np.ones((1, 1)), strict=True)
    assert np.isclose(con.margin, 1e-7 * (1 + 3.0))


def test_structures_and_packing():
    prob = SdpProblem()
    D = prob.variable("D", 3, "diagonal")
    S = prob.variable("S", 2, "symmetric")
    mask = np.array([[False, True], [False, False]])
    Z = prob.variable("Z", (2, 2), "pattern", mask=mask)
    assert prob.variables["D"].size == 3 and prob.variables["S"].size == 3
    assert prob.variables["Z"].size == 1
    vals = {"D": np.array([1.0, 2.0, 3.0]), "S": np.array([1.0, 2.0, 3.0]), "Z": np.array([5.0])}
    assert np.array_equal(D.evaluate(vals), np.diag([1.0, 2.0, 3.0]))
    assert np.array_equal(S.evaluate(vals), [[1.0, 2.0], [2.0, 3.0]])
    assert np.array_equal(Z.evaluate(vals), [[0.0, 5.0], [0.0, 0.0]])
    spec = prob.variables["S"]
    assert np.array_equal(spec.unpack(spec.pack([[1.0, 2.0], [2.0, 3.0]])), [[1.0, 2.0], [2.0, 3.0]])


def test_unused_variable_rejected():
    prob = SdpProblem()
    x = prob.variable("x", 1, "scalar")
    prob.variable("y", 1, "scalar")
    prob.add_psd(x)
    with pytest.raises(SdpError, match="'y'"):
        solve(prob)


def test_non_symmetric_rejected():
    prob = SdpProblem()
    X = prob.variable("X", (2, 2), "full")
    with pytest.raises(SdpError, match="not symmetric"):
        prob.add_psd(X)


def test_unknown_backend():
    prob, _ = lyapunov_problem(-1.0)
    with pytest.raises(SdpError, match="unknown SDP backend"):
        solve(prob, SolveOptions(backend="mosek"))


def test_unknown_backend_setting():
    prob, _ = lyapunov_problem(-1.0)
    with pytest.raises(SdpError):
        solve(prob, SolveOptions(backend="clarabel", backend_settings={"no_such_knob": 1}))


def test_deterministic():
    A0 = bm.closed_loop().A0
    prob, P = lyapunov_problem(A0)
    prob.minimize(P.trace())
    a = solve(prob).values["P"]
    b = solve(prob).values["P"]
    assert np.array_equal(a, b)


def _fake_backend(status, x_value):
    def run(problem, opts):
        return status, np.full(problem.n_scalars, x_value), {"backend": "fake"}
    return run


def test_success_with_violated_point_is_downgraded(monkeypatch):
    monkeypatch.setitem(sdp._BACKENDS, "clarabel", _fake_backend("optimal", 0.5))
    prob = SdpProblem()
    x = prob.variable("x", 1, "scalar")
    prob.add_psd(x - 1.0)
    sol = solve(prob, SolveOptions(backend="clarabel"))
    assert sol.status == "numerical-failure"
    assert sol.diagnostics["downgraded_from"] == "optimal"


def test_failure_with_valid_point_is_upgraded(monkeypatch):
    monkeypatch.setitem(sdp._BACKENDS, "clarabel", _fake_backend("numerical-failure", 2.0))
    prob = SdpProblem()
    x = prob.variable("x", 1, "scalar")
    prob.add_psd(x - 1.0)
    sol = solve(prob, SolveOptions(backend="clarabel"))
    assert sol.status == "feasible" and sol.worst_residual == pytest.approx(1.0)


def test_fallback_to_cvxopt_when_not_pinned(monkeypatch):
    monkeypatch.delenv(sdp.BACKEND_ENV, raising=False)
    monkeypatch.setitem(sdp._BACKENDS, "clarabel", _fake_backend("numerical-failure", np.nan))
    prob = SdpProblem()
    x = prob.variable("x", 1, "scalar")
    prob.add_psd(x - 1.0)
    prob.minimize(x)
    sol = solve(prob)
    assert sol.status == "optimal" and len(sol.diagnostics["attempts"]) == 2
    # a pinned backend is never swapped
    pinned = solve(prob, SolveOptions(backend="clarabel"))
    assert pinned.status == "numerical-failure"


def test_constraint_residuals_helper():
    prob, P = lyapunov_problem(-1.0)
    res = constraint_residuals(prob, {"P": np.array([2.0])})
    assert res["pos"] == pytest.approx(1.0)
    assert res["lyap"] == pytest.approx(4.0 - prob.constraints[1].margin)


def test_dump_mentions_variables():
    prob, _ = lyapunov_problem(-np.eye(2))
    text = prob.dump()
    assert "P 2x2 symmetric (3)" in text and "lyap" in text
