"""Array kernels for ADMM, Chu-Liu/Edmonds, exhaustive enumeration and the LSTM.

Every ``*_loop`` function is written in the numba-compatible subset and
compiled through :func:`hodep._accel.njit`; the ``*_numpy`` twins are the
vectorised fallbacks used when numba is switched off.
"""
import numpy as np

from hodep._accel import njit


# ---------------------------------------------------------------------------
# ADMM
# ---------------------------------------------------------------------------

@njit
def _project_hull(p0, p1, patterns):
    """Euclidean projection of (p0, p1) onto the convex hull of binary ``patterns`` (K x 2)."""
    k = patterns.shape[0]
    best0 = patterns[0, 0]
    best1 = patterns[0, 1]
    best = (p0 - best0) ** 2 + (p1 - best1) ** 2
    for a in range(k):
        ax = patterns[a, 0]
        ay = patterns[a, 1]
        d = (p0 - ax) ** 2 + (p1 - ay) ** 2
        if d < best:
            best, best0, best1 = d, ax, ay
        for b in range(a + 1, k):
            bx = patterns[b, 0]
            by = patterns[b, 1]
            ex = bx - ax
            ey = by - ay
            ee = ex * ex + ey * ey
            if ee == 0.0:
                continue
            t = ((p0 - ax) * ex + (p1 - ay) * ey) / ee
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            qx = ax + t * ex
            qy = ay + t * ey
            d = (p0 - qx) ** 2 + (p1 - qy) ** 2
            if d < best:
                best, best0, best1 = d, qx, qy
            for c in range(b + 1, k):
                cx = patterns[c, 0]
                cy = patterns[c, 1]
                det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
                if det == 0.0:
                    continue
                w0 = ((by - cy) * (p0 - cx) + (cx - bx) * (p1 - cy)) / det
                w1 = ((cy - ay) * (p0 - cx) + (ax - cx) * (p1 - cy)) / det
                w2 = 1.0 - w0 - w1
                if w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0:
                    return p0, p1
    return best0, best1


@njit
def admm_loop(theta, slave_arcs, delta, u0, rho, eta0, eps_primal, eps_dual,
              max_iters, patterns, use_patterns, trace):
    """Consensus ADMM over two-arc slaves.

    ``trace[t]`` receives (primal, dual, objective, max |sum_s lambda_s(r)|).
    Returns z, u, lam, iterations, primal, dual, converged.
    """
    n_slaves = theta.shape[0]
    width = theta.shape[1]
    n_arcs = u0.shape[0]
    u = u0.copy()
    z = np.empty((n_slaves, width))
    lam = np.zeros((n_slaves, width))
    for s in range(n_slaves):
        for k in range(width):
            z[s, k] = u[slave_arcs[s, k]]
    norm = np.sqrt(max(n_slaves * width, 1))
    primal = np.inf
    dual = np.inf
    converged = False
    iters = 0
    lam_sum = np.zeros(n_arcs)
    u_new = np.zeros(n_arcs)
    for t in range(max_iters):
        # slave solves read iteration-t values only
        for s in range(n_slaves):
            if use_patterns:
                p0 = (theta[s, 0] + lam[s, 0] + rho * u[slave_arcs[s, 0]]) / rho
                p1 = (theta[s, 1] + lam[s, 1] + rho * u[slave_arcs[s, 1]]) / rho
                q0, q1 = _project_hull(p0, p1, patterns)
                z[s, 0] = q0
                z[s, 1] = q1
            else:
                for k in range(width):
                    v = (theta[s, k] + lam[s, k] + rho * u[slave_arcs[s, k]]) / rho
                    if v < 0.0:
                        v = 0.0
                    elif v > 1.0:
                        v = 1.0
                    z[s, k] = v
        u_new[:] = 0.0
        for s in range(n_slaves):
            for k in range(width):
                u_new[slave_arcs[s, k]] += z[s, k]
        for r in range(n_arcs):
            u_new[r] /= delta[r]
        eta = eta0 / np.sqrt(t + 1.0)
        pr = 0.0
        obj = 0.0
        lam_sum[:] = 0.0
        for s in range(n_slaves):
            for k in range(width):
                r = slave_arcs[s, k]
                diff = z[s, k] - u_new[r]
                pr += diff * diff
                lam[s, k] -= eta * diff
                lam_sum[r] += lam[s, k]
                obj += theta[s, k] * z[s, k]
        du = 0.0
        dev = 0.0
        for r in range(n_arcs):
            du += delta[r] * (u_new[r] - u[r]) ** 2
            if abs(lam_sum[r]) > dev:
                dev = abs(lam_sum[r])
            u[r] = u_new[r]
        primal = np.sqrt(pr) / norm
        dual = rho * np.sqrt(du) / norm
        trace[t, 0] = primal
        trace[t, 1] = dual
        trace[t, 2] = obj
        trace[t, 3] = dev
        iters = t + 1
        if primal < eps_primal and dual < eps_dual:
            converged = True
            break
    return z, u, lam, iters, primal, dual, converged


def admm_numpy(theta, slave_arcs, delta, u0, rho, eta0, eps_primal, eps_dual,
               max_iters, patterns, use_patterns, trace):
    """Vectorised twin of :func:`admm_loop`."""
    n_arcs = u0.shape[0]
    u = u0.copy()
    z = u[slave_arcs].copy()
    lam = np.zeros_like(theta)
    norm = np.sqrt(max(theta.size, 1))
    flat_arcs = slave_arcs.ravel()
    primal = dual = np.inf
    converged = False
    iters = 0
    for t in range(max_iters):
        target = (theta + lam + rho * u[slave_arcs]) / rho
        if use_patterns:
            for s in range(theta.shape[0]):
                z[s] = _project_hull.py_func(target[s, 0], target[s, 1], patterns)
        else:
            z = np.clip(target, 0.0, 1.0)
        u_new = np.bincount(flat_arcs, weights=z.ravel(), minlength=n_arcs) / delta
        diff = z - u_new[slave_arcs]
        lam = lam - eta0 / np.sqrt(t + 1.0) * diff
        lam_sum = np.bincount(flat_arcs, weights=lam.ravel(), minlength=n_arcs)
        primal = np.sqrt(np.sum(diff ** 2)) / norm
        dual = rho * np.sqrt(np.sum(delta * (u_new - u) ** 2)) / norm
        u = u_new
        trace[t] = primal, dual, np.sum(theta * z), np.max(np.abs(lam_sum), initial=0.0)
        iters = t + 1
        if primal < eps_primal and dual < eps_dual:
            converged = True
            break
    return z, u, lam, iters, primal, dual, converged


# ---------------------------------------------------------------------------
# Chu-Liu/Edmonds
# ---------------------------------------------------------------------------

@njit
def _find_cycle(parents, current, cycle_buf):
    """Write one cycle of the greedy graph into ``cycle_buf``; return its length (0 if none)."""
    n = parents.shape[0]
    added = np.zeros(n, dtype=np.bool_)
    added[0] = True
    on_walk = np.zeros(n, dtype=np.bool_)
    for i in range(1, n):
        if added[i] or not current[i]:
            continue
        on_walk[:] = False
        on_walk[i] = True
        added[i] = True
        node = i
        found = True
        while not on_walk[parents[node]]:
            node = parents[node]
            if added[node]:
                found = False
                break
            added[node] = True
            on_walk[node] = True
        if found:
            start = parents[node]
            length = 0
            cycle_buf[length] = start
            length += 1
            nxt = parents[start]
            while nxt != start:
                cycle_buf[length] = nxt
                length += 1
                nxt = parents[nxt]
            return length
    return 0


@njit
def chu_liu_edmonds(weights):
    """Maximum arborescence rooted at node 0 of a dense (N x N) ``weights[head, dep]`` matrix.

    Returns heads of length N with ``heads[0] == -1``.
    """
    n = weights.shape[0]
    score = weights.copy()
    for i in range(n):
        score[i, i] = -np.inf
        score[i, 0] = -np.inf
    old_in = np.empty((n, n), dtype=np.int64)
    old_out = np.empty((n, n), dtype=np.int64)
    for a in range(n):
        for b in range(n):
            old_in[a, b] = a
            old_out[a, b] = b
    current = np.ones(n, dtype=np.bool_)
    # rep_owner[x] = current node whose contracted set holds original node x
    rep_owner = np.arange(n)
    # per-contraction stack
    stack_cycles = np.empty((n, n), dtype=np.int64)
    stack_len = np.zeros(n, dtype=np.int64)
    stack_parents = np.empty((n, n), dtype=np.int64)
    stack_owner = np.empty((n, n), dtype=np.int64)
    depth = 0
    parents = np.full(n, -1, dtype=np.int64)
    cycle_buf = np.empty(n, dtype=np.int64)
    final = np.full(n, -2, dtype=np.int64)

    while True:
        parents[:] = -1
        for d in range(1, n):
            if not current[d]:
                continue
            best = -np.inf
            arg = -1
            for h in range(n):
                if h == d or not current[h]:
                    continue
                if score[h, d] > best or arg == -1:
                    best = score[h, d]
                    arg = h
            parents[d] = arg
        clen = _find_cycle(parents, current, cycle_buf)
        if clen == 0:
            final[0] = -1
            for d in range(1, n):
                if not current[d]:
                    continue
                p = parents[d]
                final[old_out[p, d]] = old_in[p, d]
            break
        cycle = cycle_buf[:clen]
        cyc_weight = 0.0
        for c in cycle:
            cyc_weight += score[parents[c], c]
        in_cycle = np.zeros(n, dtype=np.bool_)
        for c in cycle:
            in_cycle[c] = True
        rep = cycle[0]
        for node in range(n):
            if not current[node] or in_cycle[node]:
                continue
            out_w = -np.inf
            out_src = -1
            in_w = -np.inf
            in_dst = -1
            for c in cycle:
                if score[c, node] > out_w or out_src == -1:
                    out_w = score[c, node]
                    out_src = c
                w = cyc_weight + score[node, c] - score[parents[c], c]
                if w > in_w or in_dst == -1:
                    in_w = w
                    in_dst = c
            score[rep, node] = out_w
            old_in[rep, node] = old_in[out_src, node]
            old_out[rep, node] = old_out[out_src, node]
            score[node, rep] = in_w
            old_in[node, rep] = old_in[node, in_dst]
            old_out[node, rep] = old_out[node, in_dst]
        stack_cycles[depth, :clen] = cycle
        stack_len[depth] = clen
        stack_parents[depth] = parents
        stack_owner[depth] = rep_owner
        depth += 1
        for c in cycle[1:]:
            current[c] = False
        for x in range(n):
            if in_cycle[rep_owner[x]]:
                rep_owner[x] = rep

    for level in range(depth - 1, -1, -1):
        clen = stack_len[level]
        cycle = stack_cycles[level, :clen]
        par = stack_parents[level]
        owner = stack_owner[level]
        key = -1
        for x in range(n):
            if final[x] != -2:
                for c in cycle:
                    if owner[x] == c:
                        key = c
                        break
            if key != -1:
                break
        prev = par[key]
        while prev != key:
            final[old_out[par[prev], prev]] = old_in[par[prev], prev]
            prev = par[prev]
    return final


# ---------------------------------------------------------------------------
# Exhaustive enumeration over binary pairwise models
# ---------------------------------------------------------------------------

@njit
def enumerate_loop(unary_log, pair_vars, pair_log):
    """Log-score of every assignment of V binary variables (bit v of the index is y_v)."""
    n_vars = unary_log.shape[0]
    n_states = 1 << n_vars
    out = np.empty(n_states)
    for a in range(n_states):
        total = 0.0
        for v in range(n_vars):
            total += unary_log[v, (a >> v) & 1]
        for f in range(pair_vars.shape[0]):
            total += pair_log[f, (a >> pair_vars[f, 0]) & 1, (a >> pair_vars[f, 1]) & 1]
        out[a] = total
    return out


def enumerate_numpy(unary_log, pair_vars, pair_log):
    n_vars = unary_log.shape[0]
    bits = (np.arange(1 << n_vars)[:, None] >> np.arange(n_vars)) & 1
    out = unary_log[np.arange(n_vars), bits].sum(axis=1)
    for f in range(pair_vars.shape[0]):
        out += pair_log[f, bits[:, pair_vars[f, 0]], bits[:, pair_vars[f, 1]]]
    return out


# ---------------------------------------------------------------------------
# LSTM recurrence (one direction)
# ---------------------------------------------------------------------------

@njit
def lstm_forward(x, w, b, reverse):
    """Run one LSTM direction over rows of ``x``; gates stacked as (i, f, g, o).

    Returns hidden states, cell states and post-activation gates, all indexed by
    sentence position regardless of direction.
    """
    n, d_in = x.shape
    hid = b.shape[0] // 4
    hs = np.zeros((n, hid))
    cs = np.zeros((n, hid))
    gates = np.zeros((n, 4 * hid))
    h = np.zeros(hid)
    c = np.zeros(hid)
    xh = np.empty(d_in + hid)
    for step in range(n):
        t = n - 1 - step if reverse else step
        xh[:d_in] = x[t]
        xh[d_in:] = h
        z = np.dot(w, xh) + b
        ig = 1.0 / (1.0 + np.exp(-z[:hid]))
        fg = 1.0 / (1.0 + np.exp(-z[hid:2 * hid]))
        gg = np.tanh(z[2 * hid:3 * hid])
        og = 1.0 / (1.0 + np.exp(-z[3 * hid:]))
        c = fg * c + ig * gg
        h = og * np.tanh(c)
        hs[t] = h
        cs[t] = c
        gates[t, :hid] = ig
        gates[t, hid:2 * hid] = fg
        gates[t, 2 * hid:3 * hid] = gg
        gates[t, 3 * hid:] = og
    return hs, cs, gates


@njit
def lstm_backward(x, w, hs, cs, gates, d_hs, reverse):
    """Backpropagation through time for :func:`lstm_forward`; returns (dx, dw, db)."""
    n, d_in = x.shape
    hid = hs.shape[1]
    dx = np.zeros((n, d_in))
    dw = np.zeros(w.shape)
    db = np.zeros(4 * hid)
    dh_next = np.zeros(hid)
    dc_next = np.zeros(hid)
    xh = np.empty(d_in + hid)
    dz = np.empty(4 * hid)
    for step in range(n - 1, -1, -1):
        t = n - 1 - step if reverse else step
        if step == 0:
            h_prev = np.zeros(hid)
            c_prev = np.zeros(hid)
        else:
            p = t + 1 if reverse else t - 1
            h_prev = hs[p]
            c_prev = cs[p]
        ig = gates[t, :hid]
        fg = gates[t, hid:2 * hid]
        gg = gates[t, 2 * hid:3 * hid]
        og = gates[t, 3 * hid:]
        tc = np.tanh(cs[t])
        dh = d_hs[t] + dh_next
        dc = dh * og * (1.0 - tc * tc) + dc_next
        dz[:hid] = dc * gg * ig * (1.0 - ig)
        dz[hid:2 * hid] = dc * c_prev * fg * (1.0 - fg)
        dz[2 * hid:3 * hid] = dc * ig * (1.0 - gg * gg)
        dz[3 * hid:] = dh * tc * og * (1.0 - og)
        dc_next = dc * fg
        xh[:d_in] = x[t]
        xh[d_in:] = h_prev
        dw += np.outer(dz, xh)
        db += dz
        dxh = np.dot(w.T, dz)
        dx[t] += dxh[:d_in]
        dh_next = dxh[d_in:]
    return dx, dw, db
