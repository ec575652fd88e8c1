"""Optimal-transport distances, solvers and the combined training loss.

Two solvers share the ``TransportPlan`` result type:

* :func:`exact_ot` solves the transportation LP (HiGHS via scipy).
* :func:`sinkhorn` runs log-domain Sinkhorn scaling on the entropic problem
  ``min <pi, C> + eps * sum(pi * (log pi - 1))``.

Gradients with respect to support points hold the plan fixed
(:func:`ot_grad`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .nn_core import tensor as T
from .nn_core.tensor import Tensor

METRICS = ("sq_euclidean", "euclidean", "cosine")
EXACT_MAX_CELLS = 4096


@dataclass
class TransportPlan:
    plan: np.ndarray
    cost: float  # <plan, C>
    reg_value: float | None = None  # entropic objective at the returned potentials
    eps: float | None = None
    n_iter: int = 0
    violation: float = 0.0
    converged: bool = True


def _validate_masses(mu, name, tol=1e-9):
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim != 1 or mu.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-D mass vector")
    if np.any(mu < 0) or not np.all(np.isfinite(mu)):
        raise ValueError(f"{name} has negative or non-finite mass")
    if abs(mu.sum() - 1.0) > tol:
        raise ValueError(f"{name} masses sum to {mu.sum()!r}, expected 1")
    return mu


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def cost_matrix(X, Y, metric: str = "sq_euclidean") -> np.ndarray:
    """Pairwise costs over the last axis; leading batch axes broadcast."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[-1] != Y.shape[-1]:
        raise ValueError(f"width mismatch: {X.shape[-1]} vs {Y.shape[-1]}")
    if metric in ("sq_euclidean", "euclidean"):
        diff = X[..., :, None, :] - Y[..., None, :, :]
        sq = np.einsum("...k,...k->...", diff, diff)
        return sq if metric == "sq_euclidean" else np.sqrt(sq)
    if metric == "cosine":
        nx = np.linalg.norm(X, axis=-1)[..., :, None]
        ny = np.linalg.norm(Y, axis=-1)[..., None, :]
        dots = X @ np.swapaxes(Y, -1, -2)
        denom = nx * ny
        cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
        return np.clip(1.0 - cos, 0.0, 2.0)
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def exact_ot(mu, nu, C) -> TransportPlan:
    """Optimal plan of the transportation LP."""
    mu = _validate_masses(mu, "mu")
    nu = _validate_masses(nu, "nu")
    C = np.asarray(C, dtype=np.float64)
    n, m = mu.size, nu.size
    if C.shape != (n, m):
        raise ValueError(f"cost shape {C.shape} does not match ({n}, {m})")
    if n * m > EXACT_MAX_CELLS:
        raise ValueError(f"exact OT limited to {EXACT_MAX_CELLS} cells, got {n * m}")
    if n == 1 or m == 1:
        plan = np.outer(mu, nu)
        return TransportPlan(plan, float(np.sum(plan * C)))
    rows = np.kron(np.eye(n), np.ones(m))
    cols = np.kron(np.ones(n), np.eye(m))
    # one column constraint is implied by the others
    A = np.vstack([rows, cols[:-1]])
    b = np.concatenate([mu, nu[:-1]])
    res = linprog(C.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        raise ValueError(f"transport LP failed: {res.message}")
    plan = np.clip(res.x.reshape(n, m), 0.0, None)
    return TransportPlan(plan, float(np.sum(plan * C)))


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    mx = a.max(axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(mx, axis) + np.log(np.exp(a - mx).sum(axis=axis))


# above this C/eps the kernel exp(-C/eps) risks underflow and the log-domain loop is used
SCALING_MAX_RATIO = 300.0


def _log_domain(mu, nu, C, eps, max_iters, tol, trace):
    e3 = eps[:, None, None]
    with np.errstate(divide="ignore"):
        log_mu, log_nu = np.log(mu), np.log(nu)
    f = np.zeros_like(mu)
    g = np.zeros_like(nu)
    history = []
    active = np.ones(mu.shape[0], bool)
    n_iter = np.zeros(mu.shape[0], int)
    viol = np.full(mu.shape[0], np.inf)
    # row log-sums for the next f-update double as the row-marginal check
    a = _lse((g[:, None, :] - C) / e3, axis=2)
    for it in range(1, max_iters + 1):
        f = np.where(active[:, None], eps[:, None] * (log_mu - a), f)
        g_new = eps[:, None] * (log_nu - _lse((f[:, :, None] - C) / e3, axis=1))
        g = np.where(active[:, None], g_new, g)
        a = _lse((g[:, None, :] - C) / e3, axis=2)
        with np.errstate(invalid="ignore"):
            rows = np.exp(f / eps[:, None] + a)
        viol = np.abs(np.where(mu > 0, rows, 0.0) - mu).sum(axis=1)
        n_iter = np.where(active, it, n_iter)
        if trace:
            history.append(np.sum(np.exp((f[:, :, None] + g[:, None, :] - C) / e3) * C,
                                  axis=(1, 2)))
        active = active & (viol > tol)
        if not active.any():
            break
    return np.exp((f[:, :, None] + g[:, None, :] - C) / e3), f, g, n_iter, viol, history


def _scaling_domain(mu, nu, C, eps, max_iters, tol, trace):
    """Same iterates as the log-domain loop, carried as u = exp(f/eps), v = exp(g/eps)."""
    K = np.exp(-C / eps[:, None, None])
    if K.shape[0] == 1 and not trace:
        return _scaling_single(mu, nu, C, K, eps, max_iters, tol)
    Kt = np.swapaxes(K, 1, 2)
    v = np.ones_like(nu)
    u = np.zeros_like(mu)
    history = []
    active = np.ones(mu.shape[0], bool)
    n_iter = np.zeros(mu.shape[0], int)
    viol = np.full(mu.shape[0], np.inf)
    Kv = (K @ v[:, :, None])[:, :, 0]
    for it in range(1, max_iters + 1):
        if active.all():
            u = mu / Kv
            v = nu / (Kt @ u[:, :, None])[:, :, 0]
        else:
            u = np.where(active[:, None], mu / Kv, u)
            v = np.where(active[:, None], nu / (Kt @ u[:, :, None])[:, :, 0], v)
        Kv = (K @ v[:, :, None])[:, :, 0]
        viol = np.abs(u * Kv - mu).sum(axis=1)
        n_iter = np.where(active, it, n_iter)
        if trace:
            history.append(np.einsum("bi,bij,bj->b", u, K * C, v))
        active = active & (viol > tol)
        if not active.any():
            break
    P = u[:, :, None] * K * v[:, None, :]
    with np.errstate(divide="ignore"):
        f, g = eps[:, None] * np.log(u), eps[:, None] * np.log(v)
    return P, f, g, n_iter, viol, history


def _scaling_single(mu, nu, C, K, eps, max_iters, tol):
    # plain matrix-vector loop; batched matmul overhead dominates for one small problem
    k, kt, a, b = K[0], np.ascontiguousarray(K[0].T), mu[0], nu[0]
    v = np.ones_like(b)
    u = np.zeros_like(a)
    kv = k @ v
    viol, n_iter = np.inf, 0
    for n_iter in range(1, max_iters + 1):
        u = a / kv
        v = b / (kt @ u)
        kv = k @ v
        viol = np.abs(u * kv - a).sum()
        if viol <= tol:
            break
    P = (u[:, None] * k * v[None, :])[None]
    with np.errstate(divide="ignore"):
        f, g = eps[0] * np.log(u)[None], eps[0] * np.log(v)[None]
    return P, f, g, np.array([n_iter]), np.array([viol]), []


def sinkhorn_batch(mu, nu, C, eps, max_iters: int = 500, tol: float = 1e-6,
                   trace: bool = False):
    """Sinkhorn scaling over a batch of problems.

    ``mu`` (B, n), ``nu`` (B, m), ``C`` (B, n, m), ``eps`` scalar or (B,).
    Zero masses act as padding. Iterates until every row-marginal L1
    violation is <= ``tol`` or ``max_iters`` sweeps. Runs on the scaling
    vectors when ``C/eps`` is moderate and in the log domain otherwise;
    both produce the same iterates. Returns a list of ``TransportPlan``;
    with ``trace`` also the per-sweep costs (iters, B).
    """
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    B = C.shape[0]
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), (B,)).copy()
    if np.any(eps <= 0):
        raise ValueError("eps must be positive")
    valid = (mu[:, :, None] > 0) & (nu[:, None, :] > 0)
    ratio = np.max(np.where(valid, C, 0.0) / eps[:, None, None], initial=0.0)
    solver = _scaling_domain if ratio <= SCALING_MAX_RATIO else _log_domain
    P, f, g, n_iter, viol, history = solver(mu, nu, C, eps, max_iters, tol, trace)
    out = []
    for b in range(B):
        fm = np.sum(np.where(mu[b] > 0, f[b], 0.0) * mu[b])
        gn = np.sum(np.where(nu[b] > 0, g[b], 0.0) * nu[b])
        out.append(TransportPlan(
            plan=P[b], cost=float(np.sum(P[b] * C[b])),
            reg_value=float(fm + gn - eps[b] * P[b].sum()), eps=float(eps[b]),
            n_iter=int(n_iter[b]), violation=float(viol[b]), converged=bool(viol[b] <= tol)))
    if trace:
        return out, np.array(history)
    return out


def sinkhorn(mu, nu, C, eps: float, max_iters: int = 500, tol: float = 1e-6) -> TransportPlan:
    """Entropic OT plan. Non-convergence is reported on the result, not raised."""
    mu = _validate_masses(mu, "mu")
    nu = _validate_masses(nu, "nu")
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (mu.size, nu.size):
        raise ValueError("cost shape does not match masses")
    if not eps > 0:
        raise ValueError("eps must be positive")
    return sinkhorn_batch(mu[None], nu[None], C[None], eps, max_iters, tol)[0]


def cost_grad(X, Y, metric: str = "sq_euclidean") -> np.ndarray:
    """``dC[i, j] / dx_i`` as an (n, m, d) array."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    diff = X[:, None, :] - Y[None, :, :]
    if metric == "sq_euclidean":
        return 2.0 * diff
    if metric == "euclidean":
        dist = np.linalg.norm(diff, axis=-1, keepdims=True)
        return np.divide(diff, dist, out=np.zeros_like(diff), where=dist > 0)
    if metric == "cosine":
        nx = np.linalg.norm(X, axis=-1)[:, None, None]
        ny = np.linalg.norm(Y, axis=-1)[None, :, None]
        dots = (X @ Y.T)[:, :, None]
        denom = nx * ny
        safe = np.where(denom > 0, denom, 1.0)
        g = -(Y[None, :, :] / safe - dots * X[:, None, :] / (safe * np.where(nx > 0, nx, 1.0) ** 2))
        return np.where(denom > 0, g, 0.0)
    raise ValueError(f"unknown metric {metric!r}")


def ot_grad(plan, X, Y, metric: str = "sq_euclidean") -> np.ndarray:
    """Gradient of ``<plan, C(X, Y)>`` in ``X`` with the plan held fixed."""
    P = plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if P.shape != (X.shape[0], Y.shape[0]):
        raise ValueError("plan shape does not match point sets")
    return np.einsum("ij,ijk->ik", P, cost_grad(X, Y, metric))


@dataclass
class OTSettings:
    metric: str = "sq_euclidean"
    eps_scale: float = 0.05  # eps = eps_scale * mean(C)
    max_iters: int = 500
    tol: float = 1e-6


def ot_term(L_gen: Tensor, L_gt: list[np.ndarray], settings: OTSettings | None = None):
    """Mean over the batch of OT distances between uniform row distributions.

    ``L_gen`` is (B, m, d); ``L_gt[b]`` is (m_b, d). Backward uses the
    envelope gradient. Returns ``(tensor, plans)``.
    """
    s = settings or OTSettings()
    B, m, d = L_gen.shape
    m_gt = max(y.shape[0] for y in L_gt)
    Y = np.zeros((B, m_gt, d))
    nu = np.zeros((B, m_gt))
    for b, y in enumerate(L_gt):
        Y[b, : y.shape[0]] = y
        nu[b, : y.shape[0]] = 1.0 / y.shape[0]
    mu = np.full((B, m), 1.0 / m)
    C = cost_matrix(L_gen.data, Y, s.metric)
    valid = np.broadcast_to(nu[:, None, :] > 0, C.shape)
    mean_c = np.array([C[b][valid[b]].mean() for b in range(B)])
    eps = s.eps_scale * np.where(mean_c > 0, mean_c, 1.0)
    plans = sinkhorn_batch(mu, nu, C, eps, s.max_iters, s.tol)
    value = np.mean([p.cost for p in plans])

    def back(g):
        grads = np.stack([ot_grad(p.plan[:, : y.shape[0]], L_gen.data[b], y, s.metric)
                          for b, (p, y) in enumerate(zip(plans, L_gt))])
        return (g * grads / B,)

    return T.make(np.asarray(value), (L_gen,), back), plans


@dataclass
class LossParts:
    total: float
    ce: float
    ot: float
    grad_logits: np.ndarray
    grad_gen: np.ndarray


def combined_loss(logits, targets, L_gen, L_gt, lambda_ot: float = 1.0,
                  settings: OTSettings | None = None, pad_id: int = 0) -> LossParts:
    """Token cross-entropy (PAD masked) plus ``lambda_ot`` times the OT distance.

    Single instance: ``logits`` (m, V), ``targets`` (m,), ``L_gen`` (m, d),
    ``L_gt`` (k, d).
    """
    if lambda_ot < 0:
        raise ValueError("lambda_ot must be >= 0")
    targets = np.asarray(targets)
    if targets.shape[0] != np.shape(logits)[0]:
        raise ValueError("target length must match logit rows")
    lg = Tensor(np.asarray(logits, dtype=np.float64)[None], requires_grad=True)
    gen = Tensor(np.asarray(L_gen, dtype=np.float64)[None], requires_grad=True)
    ce = T.cross_entropy(lg, targets[None], targets[None] != pad_id)
    ot, _ = ot_term(gen, [np.asarray(L_gt, dtype=np.float64)], settings)
    total = T.add(ce, T.mul(ot, lambda_ot))
    total.backward()
    return LossParts(float(total.data), float(ce.data), float(ot.data),
                     lg.grad[0], gen.grad[0])
