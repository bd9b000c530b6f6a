"""Exact discrete transport by the transportation simplex.

Two interchangeable kernels: a compiled one (Cython, ``_transport_ext``)
and the pure-Python one below.  The compiled kernel is picked at import when
it is available; ``set_backend`` switches explicitly.

Start: north-west corner.  Pricing: Dantzig (most negative reduced cost),
switching to Bland's smallest-index rule for both the entering and leaving
cell after any degenerate pivot, which rules out cycling.
"""
from __future__ import annotations

import numpy as np

from .errors import MaxIterations

try:  # pragma: no cover - depends on the build
    from . import _transport_ext as _ext
except ImportError:  # pragma: no cover
    _ext = None

BACKEND = "compiled" if _ext is not None else "python"


def available_backends() -> list:
    return ["python"] + (["compiled"] if _ext is not None else [])


def set_backend(name: str) -> None:
    global BACKEND
    if name not in ("python", "compiled"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "compiled" and _ext is None:
        raise ImportError("compiled transport kernel is not built")
    BACKEND = name


def get_backend() -> str:
    return BACKEND


def _prepare(a, b, C):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    C = np.asarray(C, dtype=float)
    if C.shape != (a.size, b.size):
        raise ValueError(f"cost matrix shape {C.shape} does not match masses {a.size}x{b.size}")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("masses must be nonnegative")
    ia, ib = np.flatnonzero(a > 0), np.flatnonzero(b > 0)
    a2, b2 = a[ia], b[ib]
    a2 = a2 / a2.sum()
    b2 = b2 / b2.sum()
    return a2, b2, np.ascontiguousarray(C[np.ix_(ia, ib)]), ia, ib, C.shape


def _nw_corner(a, b):
    m, n = a.size, b.size
    ra, rb = a.copy(), b.copy()
    bi, bj, flow = [], [], []
    i = j = 0
    while True:
        q = min(ra[i], rb[j])
        bi.append(i); bj.append(j); flow.append(q)
        row_done = ra[i] <= rb[j]
        ra[i] -= q
        rb[j] -= q
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif row_done:
            i += 1
        else:
            j += 1
    return bi, bj, flow


def _tree_walk(m, n, bi, bj, start_row, target_col=None):
    """BFS over the basis tree.  Nodes 0..m-1 are rows, m..m+n-1 columns.

    Returns (parent node, parent edge) arrays, stopping early on target_col.
    """
    adj = [[] for _ in range(m + n)]
    for k in range(len(bi)):
        adj[bi[k]].append((m + bj[k], k))
        adj[m + bj[k]].append((bi[k], k))
    par = [-2] * (m + n)
    pedge = [-1] * (m + n)
    par[start_row] = -1
    queue = [start_row]
    head = 0
    goal = None if target_col is None else m + target_col
    while head < len(queue):
        u = queue[head]
        head += 1
        if u == goal:
            break
        for v, k in adj[u]:
            if par[v] == -2:
                par[v] = u
                pedge[v] = k
                queue.append(v)
    return par, pedge, queue


def transport_python(a, b, C, eps=None, max_iter=None):
    """Returns (optimal cost, flow matrix, pivot count) on prepared inputs."""
    m, n = a.size, b.size
    if eps is None:
        eps = 1e-12 * (1.0 + float(np.abs(C).max(initial=0.0)))
    if max_iter is None:
        max_iter = 50 * (m + n) * max(m, n) + 1000
    bi, bj, flow = _nw_corner(a, b)
    degenerate = False
    it = 0
    while True:
        # potentials: u_i + v_j = C_ij on basic cells
        u = np.zeros(m)
        v = np.zeros(n)
        par, pedge, order = _tree_walk(m, n, bi, bj, 0)
        for node in order[1:]:
            k = pedge[node]
            if node < m:
                u[node] = C[bi[k], bj[k]] - v[bj[k]]
            else:
                v[node - m] = C[bi[k], bj[k]] - u[bi[k]]
        red = C - u[:, None] - v[None, :]
        if degenerate:
            neg = np.flatnonzero(red.ravel() < -eps)
            if neg.size == 0:
                break
            e = int(neg[0])
        else:
            e = int(np.argmin(red))
            if red.flat[e] >= -eps:
                break
        it += 1
        if it > max_iter:
            raise MaxIterations("transportation simplex exceeded its pivot budget")
        ie, je = divmod(e, n)
        # path in the tree from row ie to column je
        par, pedge, _ = _tree_walk(m, n, bi, bj, ie, je)
        path = []
        node = m + je
        while node != ie:
            path.append(pedge[node])
            node = par[node]
        path.reverse()  # edges from row ie toward column je
        minus = path[0::2]
        theta = min(flow[k] for k in minus)
        leave = min((k for k in minus if flow[k] <= theta), key=lambda k: bi[k] * n + bj[k])
        for pos, k in enumerate(path):
            flow[k] += -theta if pos % 2 == 0 else theta
        degenerate = theta <= eps
        bi[leave], bj[leave], flow[leave] = ie, je, theta
    F = np.zeros((m, n))
    for k in range(len(bi)):
        F[bi[k], bj[k]] += max(flow[k], 0.0)
    return float((F * C).sum()), F, it


def transport(a, b, C, return_plan: bool = False, backend: str | None = None):
    """Minimal-cost coupling of masses a and b under cost C."""
    a2, b2, C2, ia, ib, shape = _prepare(a, b, C)
    be = backend or BACKEND
    if be == "compiled":
        if _ext is None:
            raise ImportError("compiled transport kernel is not built")
        cost, F, _ = _ext.transport_simplex(a2, b2, C2)
    else:
        cost, F, _ = transport_python(a2, b2, C2)
    if not return_plan:
        return cost
    full = np.zeros(shape)
    full[np.ix_(ia, ib)] = F
    return cost, full
