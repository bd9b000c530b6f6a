# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled transportation simplex; same pivoting rules as the Python kernel."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


cdef void _build_adj(int m, int n, int nb, long[::1] bi, long[::1] bj,
                     long[::1] deg, long[::1] start, long[::1] nbr, long[::1] nedge):
    cdef int k, u, w
    cdef int N = m + n
    for u in range(N + 1):
        deg[u] = 0
    for k in range(nb):
        deg[bi[k]] += 1
        deg[m + bj[k]] += 1
    start[0] = 0
    for u in range(N):
        start[u + 1] = start[u] + deg[u]
        deg[u] = start[u]
    for k in range(nb):
        u = bi[k]
        w = m + bj[k]
        nbr[deg[u]] = w
        nedge[deg[u]] = k
        deg[u] += 1
        nbr[deg[w]] = u
        nedge[deg[w]] = k
        deg[w] += 1


cdef int _bfs(int N, int src, int goal, long[::1] start, long[::1] nbr, long[::1] nedge,
              long[::1] par, long[::1] pedge, long[::1] queue):
    cdef int head = 0, tail = 1, u, v, p
    for u in range(N):
        par[u] = -2
    par[src] = -1
    queue[0] = src
    while head < tail:
        u = queue[head]
        head += 1
        if u == goal:
            break
        for p in range(start[u], start[u + 1]):
            v = nbr[p]
            if par[v] == -2:
                par[v] = u
                pedge[v] = nedge[p]
                queue[tail] = v
                tail += 1
    return tail


def transport_simplex(double[::1] a, double[::1] b, double[:, ::1] C, double eps=-1.0,
                      long max_iter=-1):
    cdef int m = a.shape[0], n = b.shape[0]
    cdef int N = m + n, nb = m + n - 1
    cdef int i, j, k, t, pos, node, ie = 0, je = 0, leave, npath, tail
    cdef double q, theta, best, r, cmax = 0.0
    cdef bint degenerate = False, row_done, found
    cdef long it = 0
    for i in range(m):
        for j in range(n):
            if fabs(C[i, j]) > cmax:
                cmax = fabs(C[i, j])
    if eps < 0:
        eps = 1e-12 * (1.0 + cmax)
    if max_iter < 0:
        max_iter = 50 * (m + n) * (m if m > n else n) + 1000

    bi_a = np.zeros(nb, dtype=np.int64)
    bj_a = np.zeros(nb, dtype=np.int64)
    fl_a = np.zeros(nb, dtype=np.float64)
    cdef long[::1] bi = bi_a
    cdef long[::1] bj = bj_a
    cdef double[::1] flow = fl_a
    ra_a = np.array(a, dtype=np.float64)
    rb_a = np.array(b, dtype=np.float64)
    cdef double[::1] ra = ra_a
    cdef double[::1] rb = rb_a

    # north-west corner
    i = 0
    j = 0
    k = 0
    while True:
        q = ra[i] if ra[i] < rb[j] else rb[j]
        bi[k] = i
        bj[k] = j
        flow[k] = q
        k += 1
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

    cdef long[::1] deg = np.zeros(N + 1, dtype=np.int64)
    cdef long[::1] start = np.zeros(N + 1, dtype=np.int64)
    cdef long[::1] nbr = np.zeros(2 * nb, dtype=np.int64)
    cdef long[::1] nedge = np.zeros(2 * nb, dtype=np.int64)
    cdef long[::1] par = np.zeros(N, dtype=np.int64)
    cdef long[::1] pedge = np.zeros(N, dtype=np.int64)
    cdef long[::1] queue = np.zeros(N, dtype=np.int64)
    cdef long[::1] path = np.zeros(N, dtype=np.int64)
    cdef double[::1] u = np.zeros(m)
    cdef double[::1] v = np.zeros(n)

    while True:
        _build_adj(m, n, nb, bi, bj, deg, start, nbr, nedge)
        tail = _bfs(N, 0, -1, start, nbr, nedge, par, pedge, queue)
        u[0] = 0.0
        for t in range(1, tail):
            node = queue[t]
            k = pedge[node]
            if node < m:
                u[node] = C[bi[k], bj[k]] - v[bj[k]]
            else:
                v[node - m] = C[bi[k], bj[k]] - u[bi[k]]
        found = False
        best = -eps
        for i in range(m):
            for j in range(n):
                r = C[i, j] - u[i] - v[j]
                if degenerate:
                    if r < -eps:
                        ie = i
                        je = j
                        found = True
                        break
                elif r < best:
                    best = r
                    ie = i
                    je = j
                    found = True
            if degenerate and found:
                break
        if not found:
            break
        it += 1
        if it > max_iter:
            raise RuntimeError("transportation simplex exceeded its pivot budget")
        _bfs(N, ie, m + je, start, nbr, nedge, par, pedge, queue)
        npath = 0
        node = m + je
        while node != ie:
            path[npath] = pedge[node]
            npath += 1
            node = par[node]
        # path runs column je -> row ie; reverse so position 0 touches row ie
        for t in range(npath // 2):
            k = path[t]
            path[t] = path[npath - 1 - t]
            path[npath - 1 - t] = k
        theta = flow[path[0]]
        for pos in range(0, npath, 2):
            if flow[path[pos]] < theta:
                theta = flow[path[pos]]
        leave = -1
        for pos in range(0, npath, 2):
            k = path[pos]
            if flow[k] <= theta:
                if leave < 0 or bi[k] * n + bj[k] < bi[leave] * n + bj[leave]:
                    leave = k
        for pos in range(npath):
            k = path[pos]
            if pos % 2 == 0:
                flow[k] -= theta
            else:
                flow[k] += theta
        degenerate = theta <= eps
        bi[leave] = ie
        bj[leave] = je
        flow[leave] = theta

    F_a = np.zeros((m, n))
    cdef double[:, ::1] F = F_a
    cdef double cost = 0.0
    for k in range(nb):
        if flow[k] > 0:
            F[bi[k], bj[k]] += flow[k]
    for i in range(m):
        for j in range(n):
            cost += F[i, j] * C[i, j]
    return cost, F_a, it
