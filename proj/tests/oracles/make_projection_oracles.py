"""Frozen oracle instances for l1 and l2 projections intersected with the [0,1] box.

Each instance solves min ||z - x||^2 s.t. ||z - c||_p <= eps, 0 <= z <= 1 with cvxpy, then
polishes the interior-point solution by solving the KKT system on its active set exactly
and checking every KKT condition.
Run: python3 make_projection_oracles.py > projection_oracles.json
"""
import json

import cvxpy as cp
import numpy as np


def solve(x, c, eps, p, box):
    z = cp.Variable(x.size)
    if p == 1:
        t = cp.Variable(x.size)
        cons = [z - c <= t, c - z <= t, cp.sum(t) <= eps]
    else:
        cons = [cp.norm(z - c, 2) <= eps]
    if box:
        cons += [z >= 0, z <= 1]
    prob = cp.Problem(cp.Minimize(cp.sum_squares(z - x)), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-9, tol_gap_rel=1e-9, tol_feas=1e-9)
    if prob.status != cp.OPTIMAL:
        raise RuntimeError(f"solver status {prob.status}")
    return np.asarray(z.value)


def polish(x, c, eps, p, box, z):
    """Exact solution on the active set identified by the solver output z."""
    for tol in (1e-6, 1e-7, 1e-8, 1e-5, 1e-4):
        out = polish_with(x, c, eps, p, box, z, tol)
        if out is not None:
            return out
    raise RuntimeError("active set from the solver fails the KKT check")


def polish_with(x, c, eps, p, box, z, tol):
    v = x - c
    s = np.sign(v)
    a = np.abs(v)
    ub = np.where(v >= 0, 1.0 - c, c) if box else np.full_like(v, np.inf)
    dz = np.abs(z - c)
    if np.sum(np.minimum(a, ub) ** p) <= eps ** p:
        return c + s * np.minimum(a, ub)
    sat = dz >= ub - tol
    zero = ((dz <= tol) if p == 1 else (a == 0.0)) & ~sat
    free = ~sat & ~zero
    if not free.any():
        return None
    if p == 1:
        lam = (a[free].sum() + ub[sat].sum() - eps) / free.sum()
        mag = np.where(sat, ub, np.where(free, a - lam, 0.0))
        ok = (lam >= 0 and np.all(mag[free] > 0) and np.all(mag[free] < ub[free])
              and np.all(a[zero] <= lam + 1e-12) and np.all(a[sat] - lam >= ub[sat] - 1e-12))
    else:
        t = np.sqrt(max(0.0, (eps ** 2 - (ub[sat] ** 2).sum()) / (a[free] ** 2).sum()))
        mag = np.where(sat, ub, np.where(free, t * a, 0.0))
        ok = (0 < t <= 1 and np.all(mag[free] < ub[free]) and np.all(t * a[sat] >= ub[sat] - 1e-12)
              and np.all(a[zero] == 0.0))
    if not ok:
        return None
    out = c + s * mag
    if np.abs(out - z).max() > 1e-4:
        raise RuntimeError("polished solution far from the solver output")
    return out


def main():
    rng = np.random.default_rng(20240601)
    out = []
    for i in range(160):
        p = 1 if i < 120 else 2
        d = int(rng.integers(5, 21))
        box = bool(i % 4 != 3)
        c = rng.uniform(0.0, 1.0, d)
        scale = rng.choice([0.05, 0.3, 1.0])
        x = c + rng.normal(0.0, scale, d)
        dist = np.linalg.norm(x - c, p)
        eps = float(dist * rng.uniform(0.05, 0.9)) if i % 10 else float(dist * 1.5)
        z = polish(x, c, eps, p, box, solve(x, c, eps, p, box))
        out.append({"p": p, "box": box, "point": x.tolist(), "center": c.tolist(), "epsilon": eps,
                    "projection": z.tolist()})
    print(json.dumps({"instances": out}))


if __name__ == "__main__":
    main()
