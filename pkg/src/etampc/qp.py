"""Strictly convex quadratic programming.

Problems have the form::

    minimize    1/2 x'Px + q'x
    subject to  Aeq x = beq
                lin <= Ain x <= uin

and are solved with the dual active-set method of Goldfarb and Idnani after
the equality constraints have been eliminated through a nullspace basis.
The factorizations only depend on ``P``, ``Aeq`` and ``Ain``, so a
:class:`QpSolver` can be set up once and re-solved for new vectors, which is
what the receding-horizon controllers do.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import lsq_linear


class ContractError(ValueError):
    """Raised when an input violates a documented precondition."""


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"
    INACCURATE = "inaccurate"


@dataclass(frozen=True)
class QpSettings:
    abs_tol: float = 1e-6
    rel_tol: float = 1e-6
    max_iterations: int = 20000
    deterministic: bool = True

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ContractError("abs_tol and rel_tol must be positive")
        if self.max_iterations < 1:
            raise ContractError("max_iterations must be >= 1")


def _as_matrix(a, n, name):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros((0, n))
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2 or a.shape[1] != n:
        raise ContractError(f"{name} must have {n} columns, got shape {a.shape}")
    return a


def _as_vector(a, m, name, fill=None):
    if a is None:
        if fill is None:
            raise ContractError(f"{name} is required")
        return np.full(m, fill)
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape != (m,):
        raise ContractError(f"{name} must have length {m}, got {a.shape[0]}")
    return a


@dataclass(frozen=True)
class QpProblem:
    """A QP in canonical form. Missing constraint blocks may be passed as ``None``."""

    P: np.ndarray
    q: np.ndarray
    Aeq: np.ndarray | None = None
    beq: np.ndarray | None = None
    Ain: np.ndarray | None = None
    lin: np.ndarray | None = None
    uin: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim == 0:
            P = P.reshape(1, 1)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ContractError(f"P must be square, got shape {P.shape}")
        n = P.shape[0]
        scale = max(1.0, float(np.abs(P).max(initial=0.0)))
        if not np.allclose(P, P.T, rtol=0.0, atol=1e-10 * scale):
            raise ContractError("P must be symmetric")
        q = _as_vector(self.q, n, "q")
        Aeq = _as_matrix(self.Aeq if self.Aeq is not None else [], n, "Aeq")
        beq = _as_vector(self.beq, Aeq.shape[0], "beq", fill=0.0 if Aeq.shape[0] == 0 else None)
        Ain = _as_matrix(self.Ain if self.Ain is not None else [], n, "Ain")
        mi = Ain.shape[0]
        lin = _as_vector(self.lin, mi, "lin", fill=-np.inf)
        uin = _as_vector(self.uin, mi, "uin", fill=np.inf)
        if np.any(lin > uin):
            bad = int(np.flatnonzero(lin > uin)[0])
            raise ContractError(f"lin[{bad}] > uin[{bad}]")
        for name, arr in (("P", P), ("q", q), ("Aeq", Aeq), ("beq", beq), ("Ain", Ain)):
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"{name} contains non-finite entries")
        if np.any(np.isnan(lin)) or np.any(np.isnan(uin)):
            raise ContractError("bounds contain NaN")
        for name, arr in (("P", P), ("q", q), ("Aeq", Aeq), ("beq", beq),
                          ("Ain", Ain), ("lin", lin), ("uin", uin)):
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.q @ x)

    def scaled(self, c: float) -> "QpProblem":
        return QpProblem(c * self.P, c * self.q, self.Aeq, self.beq, self.Ain, self.lin, self.uin)


@dataclass
class KktReport:
    stationarity: float
    primal_feasibility: float
    complementarity: float
    y_eq: np.ndarray
    y_in: np.ndarray

    @property
    def max_residual(self) -> float:
        return max(self.stationarity, self.primal_feasibility, self.complementarity)


@dataclass
class QpSolution:
    x: np.ndarray
    status: Status
    primal_residual: float
    dual_residual: float
    duality_gap: float
    iterations: int
    solve_time: float
    objective: float = float("nan")
    y_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y_in: np.ndarray = field(default_factory=lambda: np.zeros(0))
    active_set: tuple = ()

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def _unchecked(P, q, Aeq, beq, Ain, lin, uin) -> QpProblem:
    # internal fast path: arrays already validated by the owning solver
    prob = object.__new__(QpProblem)
    for name, arr in (("P", P), ("q", q), ("Aeq", Aeq), ("beq", beq),
                      ("Ain", Ain), ("lin", lin), ("uin", uin)):
        object.__setattr__(prob, name, arr)
    return prob


def primal_violation(problem: QpProblem, x) -> float:
    """Largest constraint violation of ``x`` (0 when feasible)."""
    x = np.asarray(x, dtype=float)
    viol = 0.0
    if problem.Aeq.shape[0]:
        viol = float(np.abs(problem.Aeq @ x - problem.beq).max())
    if problem.Ain.shape[0]:
        ax = problem.Ain @ x
        low = np.where(np.isfinite(problem.lin), problem.lin - ax, 0.0)
        up = np.where(np.isfinite(problem.uin), ax - problem.uin, 0.0)
        viol = max(viol, float(low.max()), float(up.max()), 0.0)
    return viol


def _residuals(problem, x, y_eq, y_in):
    grad = problem.P @ x + problem.q
    if problem.Aeq.shape[0]:
        grad = grad + problem.Aeq.T @ y_eq
    comp = 0.0
    if problem.Ain.shape[0]:
        grad = grad + problem.Ain.T @ y_in
        ax = problem.Ain @ x
        # y_in < 0 pairs with the lower bound, y_in > 0 with the upper bound
        gap_low = np.where(y_in < 0, np.abs(ax - np.where(np.isfinite(problem.lin), problem.lin, ax)), 0.0)
        gap_up = np.where(y_in > 0, np.abs(np.where(np.isfinite(problem.uin), problem.uin, ax) - ax), 0.0)
        wrong = np.where((y_in < 0) & ~np.isfinite(problem.lin), np.inf, 0.0)
        wrong += np.where((y_in > 0) & ~np.isfinite(problem.uin), np.inf, 0.0)
        comp = float(np.max(np.abs(y_in) * (gap_low + gap_up) + wrong, initial=0.0))
    return float(np.abs(grad).max(initial=0.0)), primal_violation(problem, x), comp


def check_kkt(problem: QpProblem, x, y_eq=None, y_in=None, active_tol: float = 1e-8) -> KktReport:
    """KKT residuals of ``x``.

    Without multipliers, the best ones consistent with the constraints active
    at ``x`` (within ``active_tol``) are estimated by bounded least squares,
    so an interior point reports the raw gradient norm as its stationarity.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (problem.n,):
        raise ContractError(f"x must have length {problem.n}, got {x.shape[0]}")
    me, mi = problem.Aeq.shape[0], problem.Ain.shape[0]
    if y_eq is None or y_in is None:
        y_eq, y_in = _estimate_multipliers(problem, x, active_tol)
    else:
        y_eq = _as_vector(y_eq, me, "y_eq")
        y_in = _as_vector(y_in, mi, "y_in")
    stat, feas, comp = _residuals(problem, x, y_eq, y_in)
    return KktReport(stat, feas, comp, y_eq, y_in)


def _estimate_multipliers(problem, x, active_tol):
    me, mi = problem.Aeq.shape[0], problem.Ain.shape[0]
    grad = problem.P @ x + problem.q
    cols, lb, ub, owner = [], [], [], []
    for i in range(me):
        cols.append(problem.Aeq[i])
        lb.append(-np.inf)
        ub.append(np.inf)
        owner.append(("eq", i))
    if mi:
        ax = problem.Ain @ x
        with np.errstate(invalid="ignore"):
            at_low = np.isfinite(problem.lin) & (np.abs(ax - problem.lin) <= active_tol * (1.0 + np.abs(problem.lin)))
            at_up = np.isfinite(problem.uin) & (np.abs(problem.uin - ax) <= active_tol * (1.0 + np.abs(problem.uin)))
        for i in np.flatnonzero(at_low | at_up):
            cols.append(problem.Ain[i])
            lb.append(-np.inf if at_low[i] else 0.0)
            ub.append(np.inf if at_up[i] else 0.0)
            owner.append(("in", int(i)))
    y_eq, y_in = np.zeros(me), np.zeros(mi)
    if cols:
        A = np.array(cols).T
        res = lsq_linear(A, -grad, bounds=(np.array(lb), np.array(ub)), method="bvls", tol=1e-14)
        for (kind, i), val in zip(owner, res.x):
            if kind == "eq":
                y_eq[i] = val
            else:
                y_in[i] = val
    return y_eq, y_in


class QpSolver:
    """Reusable solver for a fixed constraint structure ``(P, Aeq, Ain)``.

    Setup eliminates the equalities (``x = x_p + Z y``) and whitens the
    reduced Hessian (``w = L' y``), turning the problem into a Euclidean
    projection of ``w0`` onto the polyhedron ``{w : G w + d in [lin, uin]}``,
    which the dual active-set iteration solves exactly.
    """

    def __init__(self, P, Aeq=None, Ain=None, settings: QpSettings | None = None):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        me = 0 if Aeq is None or np.size(Aeq) == 0 else np.atleast_2d(Aeq).shape[0]
        shell = QpProblem(P, np.zeros(P.shape[0]), Aeq, np.zeros(me) if me else None, Ain)
        self.settings = settings or QpSettings()
        self.P, self.Aeq, self.Ain = shell.P, shell.Aeq, shell.Ain
        self.n = shell.n
        self.me, self.mi = self.Aeq.shape[0], self.Ain.shape[0]

        if self.me:
            U, S, Vt = linalg.svd(self.Aeq, full_matrices=True)
            rank = int(np.sum(S > max(self.Aeq.shape) * np.finfo(float).eps * S[0]))
            self._Ur, self._Sr = U[:, :rank], S[:rank]
            self._Y, Z = Vt[:rank].T, Vt[rank:].T
        else:
            self._Ur, self._Sr = np.zeros((0, 0)), np.zeros(0)
            self._Y, Z = np.zeros((self.n, 0)), np.eye(self.n)
        self.nr = Z.shape[1]
        H = Z.T @ self.P @ Z
        H = 0.5 * (H + H.T)
        try:
            L = linalg.cholesky(H, lower=True) if self.nr else np.zeros((0, 0))
        except linalg.LinAlgError:
            raise ContractError("P is not positive definite on the nullspace of Aeq") from None
        if self.nr and np.min(np.abs(np.diag(L))) < 1e-10 * max(1.0, np.abs(np.diag(L)).max()):
            raise ContractError("P is not positive definite on the nullspace of Aeq")
        Linv = linalg.solve_triangular(L, np.eye(self.nr), lower=True) if self.nr else L
        self._Z = Z
        self._Linv = Linv
        self._ZLt = Z @ Linv.T  # maps w to x - x_p
        self._G = self.Ain @ self._ZLt
        self._PY = self.P @ self._Y

    def _particular(self, beq):
        if not self.me:
            return np.zeros(self.n)
        return self._Y @ ((self._Ur.T @ beq) / self._Sr)

    def _eq_multipliers(self, r):
        # least-squares solution of Aeq' y = -r
        if not self.me:
            return np.zeros(0)
        return -self._Ur @ ((self._Y.T @ r) / self._Sr)

    def solve(self, q, beq=None, lin=None, uin=None, active_set=None,
              feasible_point=None) -> QpSolution:
        """Solve for the given vectors.

        ``active_set`` optionally seeds the working set with constraint ids
        ``(row, side)`` where side is ``-1`` (lower) or ``+1`` (upper); any
        seed leads to the same optimum. ``feasible_point``, if supplied and
        verified, rules out an infeasible verdict.
        """
        t_start = time.perf_counter()
        st = self.settings
        q = _as_vector(q, self.n, "q")
        beq = _as_vector(beq, self.me, "beq", fill=0.0 if self.me == 0 else None)
        lin = _as_vector(lin, self.mi, "lin", fill=-np.inf)
        uin = _as_vector(uin, self.mi, "uin", fill=np.inf)
        if np.any(lin > uin):
            raise ContractError("lin must not exceed uin")
        x_p = self._particular(beq)
        eq_res = float(np.abs(self.Aeq @ x_p - beq).max()) if self.me else 0.0
        eq_tol = st.abs_tol + st.rel_tol * float(np.abs(beq).max(initial=0.0))
        if eq_res > eq_tol:
            return self._finish(Status.INFEASIBLE, x_p, None, [], np.zeros(0), q, beq, lin, uin, 0, t_start)

        c = self._Z.T @ (self.P @ x_p + q)
        w0 = -(self._Linv @ c)
        d = self.Ain @ x_p
        lo = lin - d
        hi = uin - d
        w, active, u, iters, status = self._dual_active_set(w0, lo, hi, active_set)

        if status is Status.INFEASIBLE and feasible_point is not None:
            problem = _unchecked(self.P, q, self.Aeq, beq, self.Ain, lin, uin)
            xf = np.asarray(feasible_point, dtype=float)
            if primal_violation(problem, xf) <= eq_tol:
                return self._finish(Status.INACCURATE, xf, None, [], np.zeros(0), q, beq, lin, uin,
                                    iters, t_start)
        x = x_p + self._ZLt @ w if w is not None else x_p
        return self._finish(status, x, w, active, u, q, beq, lin, uin, iters, t_start)

    def _dual_active_set(self, w0, lo, hi, seed):
        n, mi = self.nr, self.mi
        G = self._G
        max_it = self.settings.max_iterations
        ptol = self.settings.abs_tol * 1e-3
        has_lo = np.isfinite(lo)
        has_hi = np.isfinite(hi)

        Q = np.zeros((n, n))
        R = np.zeros((n, n))
        active: list[tuple[int, int]] = []
        u = np.zeros(0)

        def normal(cid):
            row, side = cid
            return G[row] if side < 0 else -G[row]

        def bound(cid):
            row, side = cid
            return lo[row] if side < 0 else -hi[row]

        def add(vec):
            k = len(active)
            Qk = Q[:, :k]
            h = Qk.T @ vec
            r = vec - Qk @ h
            h2 = Qk.T @ r
            r -= Qk @ h2
            h += h2
            rho = np.linalg.norm(r)
            Q[:, k] = r / rho
            R[:k, k] = h
            R[k, k] = rho

        def rebuild():
            k = len(active)
            Q[:, :k] = 0.0
            R[:k, :k] = 0.0
            if k:
                N = np.column_stack([normal(c) for c in active])
                q_, r_ = np.linalg.qr(N)
                Q[:, :k] = q_
                R[:k, :k] = r_

        def dependent(vec):
            k = len(active)
            Qk = Q[:, :k]
            z = vec - Qk @ (Qk.T @ vec)
            return z @ z <= 1e-20 * max(vec @ vec, 1e-300) or np.linalg.norm(z) <= 1e-10 * np.linalg.norm(vec)

        w = w0.copy()
        if seed:
            for cid in seed:
                row, side = int(cid[0]), int(cid[1])
                if not (0 <= row < mi) or side not in (-1, 1):
                    raise ContractError(f"invalid active-set entry {cid!r}")
                if (side < 0 and not has_lo[row]) or (side > 0 and not has_hi[row]):
                    continue
                cid = (row, side)
                if cid in active or (row, -side) in active:
                    continue
                vec = normal(cid)
                if n == 0 or dependent(vec):
                    continue
                add(vec)
                active.append(cid)
            # equality-constrained projection on the seed, then drop negative multipliers
            while active:
                k = len(active)
                Rk = R[:k, :k]
                b = np.array([bound(c) for c in active])
                N = np.column_stack([normal(c) for c in active])
                rhs = b - N.T @ w0
                mu = linalg.solve_triangular(Rk, linalg.solve_triangular(Rk, rhs, trans="T"))
                if mu.min() >= 0:
                    u = mu
                    w = w0 + N @ mu
                    break
                active.pop(int(np.argmin(mu)))
                rebuild()
            else:
                w = w0.copy()

        iters = 0
        BIG = np.inf
        while True:
            gw = G @ w
            viol_lo = np.where(has_lo, lo - gw, -BIG)
            viol_hi = np.where(has_hi, gw - hi, -BIG)
            i_lo = int(np.argmax(viol_lo)) if mi else 0
            i_hi = int(np.argmax(viol_hi)) if mi else 0
            if mi == 0:
                return w, active, u, iters, Status.OPTIMAL
            v_lo, v_hi = viol_lo[i_lo], viol_hi[i_hi]
            if max(v_lo, v_hi) <= ptol * (1.0 + max(abs(lo[i_lo]) if v_lo >= v_hi else abs(hi[i_hi]), 0.0)):
                return w, active, u, iters, Status.OPTIMAL
            p = (i_lo, -1) if v_lo >= v_hi else (i_hi, 1)
            npv = normal(p)
            bp = bound(p)
            u_plus = 0.0
            while True:
                iters += 1
                if iters > max_it:
                    return w, active, u, iters - 1, Status.MAX_ITERATIONS
                k = len(active)
                if k:
                    Qk = Q[:, :k]
                    h = Qk.T @ npv
                    z = npv - Qk @ h
                    r = linalg.solve_triangular(R[:k, :k], h)
                else:
                    z = npv
                    r = np.zeros(0)
                t1, drop = np.inf, -1
                if k:
                    pos = r > 1e-12 * max(1.0, np.abs(r).max())
                    if np.any(pos):
                        ratios = np.full(k, np.inf)
                        ratios[pos] = u[pos] / r[pos]
                        drop = int(np.argmin(ratios))
                        t1 = ratios[drop]
                zn = z @ npv
                if zn <= 1e-14 * (npv @ npv) or np.linalg.norm(z) <= 1e-9 * np.linalg.norm(npv):
                    t2 = np.inf
                else:
                    t2 = (bp - npv @ w) / zn
                    t2 = max(t2, 0.0)
                t = min(t1, t2)
                if not np.isfinite(t):
                    return w, active, u, iters, Status.INFEASIBLE
                if not np.isfinite(t2):
                    u = u - t * r
                    u_plus += t
                    active.pop(drop)
                    u = np.delete(u, drop)
                    rebuild()
                    continue
                w = w + t * z
                u = u - t * r
                u_plus += t
                if t2 <= t1:
                    add(npv)
                    active.append(p)
                    u = np.append(u, u_plus)
                    break
                active.pop(drop)
                u = np.delete(u, drop)
                rebuild()

    def _finish(self, status, x, w, active, u, q, beq, lin, uin, iters, t_start):
        problem = _unchecked(self.P, q, self.Aeq, beq, self.Ain, lin, uin)
        y_in = np.zeros(self.mi)
        for (row, side), val in zip(active, u):
            y_in[row] += side * val
        grad = self.P @ x + q + self.Ain.T @ y_in
        y_eq = self._eq_multipliers(grad)
        stat, feas, comp = _residuals(problem, x, y_eq, y_in)
        if status is Status.OPTIMAL:
            st = self.settings
            ax = self.Ain @ x if self.mi else np.zeros(0)
            p_scale = max(float(np.abs(ax).max(initial=0.0)),
                          float(np.abs(beq).max(initial=0.0)),
                          float(np.abs(np.where(np.isfinite(lin), lin, 0.0)).max(initial=0.0)),
                          float(np.abs(np.where(np.isfinite(uin), uin, 0.0)).max(initial=0.0)))
            d_scale = max(float(np.abs(self.P @ x).max(initial=0.0)), float(np.abs(q).max(initial=0.0)))
            if feas > st.abs_tol + st.rel_tol * p_scale or stat > st.abs_tol + st.rel_tol * d_scale:
                status = Status.INACCURATE
        return QpSolution(
            x=x,
            status=status,
            primal_residual=feas,
            dual_residual=stat,
            duality_gap=comp,
            iterations=iters,
            solve_time=time.perf_counter() - t_start,
            objective=problem.objective(x),
            y_eq=y_eq,
            y_in=y_in,
            active_set=tuple(active),
        )


def solve(problem: QpProblem, settings: QpSettings | None = None, active_set=None,
          feasible_point=None) -> QpSolution:
    """One-shot solve; see :meth:`QpSolver.solve`."""
    solver = QpSolver(problem.P, problem.Aeq, problem.Ain, settings)
    return solver.solve(problem.q, problem.beq, problem.lin, problem.uin,
                        active_set=active_set, feasible_point=feasible_point)
