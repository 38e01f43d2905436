"""Compiled kernels shared by the Eikonal and coupled-mode fast marching solvers."""
import math

import numba
import numpy as np

INF = np.inf


@numba.njit(cache=True, nogil=True)
def eikonal_update(a, b, C, dx, dy):
    """Largest admissible root of ((u-a)+/dx)^2 + ((u-b)+/dy)^2 = C^2."""
    if a == INF and b == INF:
        return INF
    if b == INF:
        return a + C * dx
    if a == INF:
        return b + C * dy
    p = 1.0 / (dx * dx)
    q = 1.0 / (dy * dy)
    m = min(a, b)
    al = a - m
    be = b - m
    lin = al * p + be * q
    disc = lin * lin - (p + q) * (al * al * p + be * be * q - C * C)
    if disc >= 0.0:
        u = m + (lin + math.sqrt(disc)) / (p + q)
        if u >= max(a, b):
            return u
    return min(a + C * dx, b + C * dy)


@numba.njit(cache=True, nogil=True)
def coupled_update(a, b, c0, beta, v, dx, dy):
    """Root of ((u-a)+/dx)^2 + ((u-b)+/dy)^2 = (c0 + beta*(v - u))^2.

    Returns ``(u, stalled)``. The left side is nondecreasing and the right
    side nonincreasing in ``u``, so the admissible root is unique whenever the
    right side is nonnegative at the smallest neighbor; otherwise the update
    stalls at that neighbor.
    """
    if a > b:
        a, b = b, a
        dx, dy = dy, dx
    if a == INF:
        return INF, False
    c = c0 + beta * v
    cm = c - beta * a
    if cm < 0.0:
        return a, True
    u1 = a + dx * cm / (1.0 + beta * dx)
    if b == INF or u1 <= b:
        return u1, False
    # two-sided: w = u - a on (b - a, cm/beta]
    p = 1.0 / (dx * dx)
    q = 1.0 / (dy * dy)
    d = b - a
    A = p + q - beta * beta
    B = 2.0 * (beta * cm - d * q)
    C = d * d * q - cm * cm
    disc = max(B * B - 4.0 * A * C, 0.0)
    sq = math.sqrt(disc)
    if B > 0.0:
        w = -2.0 * C / (B + sq)
    elif A != 0.0:
        w = (-B + sq) / (2.0 * A)
    else:
        w = -C / B
    if w < d:
        w = d
    if beta > 0.0 and w > cm / beta:
        w = cm / beta
    return a + w, False


@numba.njit(cache=True, nogil=True)
def _less(k1, t1, k2, t2):
    return k1 < k2 or (k1 == k2 and t1 < t2)


@numba.njit(cache=True, nogil=True)
def _push(keys, ids, ties, size, key, node, tie):
    pos = size
    while pos > 0:
        parent = (pos - 1) >> 1
        if _less(key, tie, keys[parent], ties[parent]):
            keys[pos] = keys[parent]
            ids[pos] = ids[parent]
            ties[pos] = ties[parent]
            pos = parent
        else:
            break
    keys[pos] = key
    ids[pos] = node
    ties[pos] = tie
    return size + 1


@numba.njit(cache=True, nogil=True)
def _pop(keys, ids, ties, size):
    key, node = keys[0], ids[0]
    size -= 1
    lk, li, lt = keys[size], ids[size], ties[size]
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and _less(keys[child + 1], ties[child + 1], keys[child], ties[child]):
            child += 1
        if _less(keys[child], ties[child], lk, lt):
            keys[pos] = keys[child]
            ids[pos] = ids[child]
            ties[pos] = ties[child]
            pos = child
        else:
            break
    if size > 0:
        keys[pos] = lk
        ids[pos] = li
        ties[pos] = lt
    return key, node, size


@numba.njit(cache=True, nogil=True)
def march(c0, beta, v, bnodes, bvals, dx, dy, coupled, tie):
    """Fast marching sweep.

    ``c0``, ``beta``, ``v`` are ``(ny, nx)`` arrays (``beta``/``v`` ignored
    unless ``coupled``). Boundary nodes keep their values. ``tie`` ranks nodes
    with equal keys. Returns ``(u, accept_order, stalled)`` flattened.
    """
    ny, nx = c0.shape
    n = nx * ny
    c0f = c0.ravel()
    betaf = beta.ravel()
    vf = v.ravel()
    u = np.full(n, INF)
    accepted = np.zeros(n, dtype=np.bool_)
    fixed = np.zeros(n, dtype=np.bool_)
    stalled = np.zeros(n, dtype=np.bool_)
    order = np.empty(n, dtype=np.int64)
    cap = 4 * n + bnodes.size + 1
    keys = np.empty(cap)
    ids = np.empty(cap, dtype=np.int64)
    ties = np.empty(cap, dtype=np.int64)
    size = 0
    for k in range(bnodes.size):
        node = bnodes[k]
        u[node] = bvals[k]
        fixed[node] = True
        size = _push(keys, ids, ties, size, bvals[k], node, tie[node])
    nacc = 0
    while size > 0:
        key, node, size = _pop(keys, ids, ties, size)
        if accepted[node]:
            continue
        accepted[node] = True
        order[nacc] = node
        nacc += 1
        i = node % nx
        j = node // nx
        for s in range(4):
            if s == 0:
                ni, nj = i - 1, j
            elif s == 1:
                ni, nj = i + 1, j
            elif s == 2:
                ni, nj = i, j - 1
            else:
                ni, nj = i, j + 1
            if ni < 0 or ni >= nx or nj < 0 or nj >= ny:
                continue
            nb = nj * nx + ni
            if accepted[nb] or fixed[nb]:
                continue
            a = INF
            if ni > 0 and accepted[nb - 1]:
                a = u[nb - 1]
            if ni < nx - 1 and accepted[nb + 1]:
                a = min(a, u[nb + 1])
            b = INF
            if nj > 0 and accepted[nb - nx]:
                b = u[nb - nx]
            if nj < ny - 1 and accepted[nb + nx]:
                b = min(b, u[nb + nx])
            st = False
            if coupled:
                new, st = coupled_update(a, b, c0f[nb], betaf[nb], vf[nb], dx, dy)
            else:
                new = eikonal_update(a, b, c0f[nb], dx, dy)
            if new < u[nb]:
                u[nb] = new
                stalled[nb] = st
                size = _push(keys, ids, ties, size, new, nb, tie[nb])
    return u, order[:nacc], stalled
