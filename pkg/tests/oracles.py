"""Independent reference implementations used only by the tests."""

import numpy as np


def projected_gradient(P, q, lo, hi, tol=1e-12, max_iter=500_000):
    """Minimise 0.5 x'Px + q'x over the box [lo, hi] by projected gradient.

    Fixed step 1/L with L the largest eigenvalue of P; stops when one step
    moves the iterate by less than ``tol`` in max-norm.
    """
    L = float(np.linalg.eigvalsh(P).max())
    x = np.clip(np.zeros(len(q)), lo, hi)
    for _ in range(max_iter):
        nxt = np.clip(x - (P @ x + q) / L, lo, hi)
        if np.abs(nxt - x).max() < tol:
            return nxt
        x = nxt
    raise RuntimeError("projected gradient did not converge")


def cvxopt_qp(P, q, Aeq=None, beq=None, Ain=None, lin=None, uin=None):
    """Interior-point reference solve through cvxopt (tight tolerances)."""
    from cvxopt import matrix, solvers

    solvers.options.update({"show_progress": False, "abstol": 1e-10, "reltol": 1e-10, "feastol": 1e-10,
                            "maxiters": 200})
    G_rows, h = [], []
    if Ain is not None:
        for i in range(Ain.shape[0]):
            if np.isfinite(uin[i]):
                G_rows.append(Ain[i]); h.append(uin[i])
            if np.isfinite(lin[i]):
                G_rows.append(-Ain[i]); h.append(-lin[i])
    args = [matrix(np.asarray(P, float)), matrix(np.asarray(q, float))]
    if G_rows:
        args += [matrix(np.array(G_rows)), matrix(np.array(h, float))]
    else:
        args += [None, None]
    if Aeq is not None and len(Aeq):
        args += [matrix(np.asarray(Aeq, float)), matrix(np.asarray(beq, float))]
    res = solvers.qp(*args)
    return np.array(res["x"]).ravel(), res["status"]


def random_box_qp(rng, n):
    M = rng.normal(size=(n, n))
    P = M.T @ M + np.eye(n)
    q = rng.normal(scale=5.0, size=n)
    a = rng.uniform(-2.0, 1.0, size=n)
    b = a + rng.uniform(0.1, 3.0, size=n)
    return P, q, a, b


def dense_first_crossing(t, s, w, samples=200_001):
    """Earliest time the linear interpolant of (t, s) reaches ``w``, by dense scanning."""
    tt = np.linspace(t[0], t[-1], samples)
    ss = np.interp(tt, t, s)
    k = int(np.argmax(ss >= w - 1e-12))
    if k == 0:
        return tt[0]
    # refine inside the bracketing sample interval
    t0, t1, s0, s1 = tt[k - 1], tt[k], ss[k - 1], ss[k]
    return t0 + (w - s0) / (s1 - s0) * (t1 - t0)
