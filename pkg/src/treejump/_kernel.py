"""Compiled particle filter over franchise seatings.

For categorical labels the predictive and seating laws of a restaurant
depend only on, per label, the number of customers and the number of
clusters carrying that label; individual cluster sizes never matter.
Particles therefore store these two count tables per group.

Random numbers come from a counter-based hash of (seed, step, particle,
draw), so results do not depend on evaluation order.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_RESAMPLE_TAG = 1 << 20


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def _uniform(seed, step, particle, draw):
    z = _mix(seed + np.uint64(step) * _GOLDEN)
    z = _mix(z + np.uint64(particle) * _GOLDEN)
    z = _mix(z + np.uint64(draw) * _GOLDEN)
    return np.float64(z >> _S11) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def prune_groups(parent, jumps):
    """Group index per node, parent group and incoming jump count per group."""
    n = parent.shape[0]
    group_of = np.zeros(n, np.int64)
    tops = np.zeros(n, np.int64)
    n_groups = 1
    for i in range(1, n):
        if jumps[i - 1] > 0:
            group_of[i] = n_groups
            tops[n_groups] = i
            n_groups += 1
        else:
            group_of[i] = group_of[parent[i]]
    group_parent = np.full(n_groups, -1, np.int64)
    group_jumps = np.zeros(n_groups, np.int64)
    for g in range(1, n_groups):
        group_parent[g] = group_of[parent[tops[g]]]
        group_jumps[g] = jumps[tops[g] - 1]
    return group_of, group_parent, group_jumps


@njit(cache=True)
def observation_order(group_of, group_parent, obs_ptr, obs_val):
    """Breadth-first over groups (children by increasing id), then node id,
    then observation index."""
    n_groups = group_parent.shape[0]
    n = group_of.shape[0]
    child_count = np.zeros(n_groups + 1, np.int64)
    for g in range(1, n_groups):
        child_count[group_parent[g] + 1] += 1
    child_ptr = np.cumsum(child_count)
    fill = child_ptr[:-1].copy()
    kids = np.zeros(max(n_groups - 1, 1), np.int64)
    for g in range(1, n_groups):
        p = group_parent[g]
        kids[fill[p]] = g
        fill[p] += 1
    member_count = np.zeros(n_groups + 1, np.int64)
    for i in range(n):
        member_count[group_of[i] + 1] += 1
    member_ptr = np.cumsum(member_count)
    mfill = member_ptr[:-1].copy()
    members = np.zeros(n, np.int64)
    for i in range(n):
        g = group_of[i]
        members[mfill[g]] = i
        mfill[g] += 1
    queue = np.zeros(n_groups, np.int64)
    head, tail = 0, 1
    total = obs_ptr[n]
    order_group = np.zeros(total, np.int64)
    order_value = np.zeros(total, np.int64)
    t = 0
    while head < tail:
        g = queue[head]
        head += 1
        for k in range(child_ptr[g], child_ptr[g + 1]):
            queue[tail] = kids[k]
            tail += 1
        for m in range(member_ptr[g], member_ptr[g + 1]):
            i = members[m]
            for j in range(obs_ptr[i], obs_ptr[i + 1]):
                order_group[t] = g
                order_value[t] = obs_val[j]
                t += 1
    return order_group, order_value


@njit(cache=True)
def _resample(state, out, cdf, total, idx, spacing, seed, step):
    """Multinomial resampling of rows of ``state`` into ``out``.

    Sorted uniforms come from normalised cumulative exponential spacings,
    so ancestors are found with a single merge pass.
    """
    S, W = state.shape
    acc = 0.0
    for s in range(S + 1):
        acc -= np.log(1.0 - _uniform(seed, step, s, _RESAMPLE_TAG))
        spacing[s] = acc
    scale = total / acc
    a = 0
    for s in range(S):
        u = spacing[s] * scale
        while a < S - 1 and cdf[a] <= u:
            a += 1
        idx[s] = a
    for s in range(S):
        a = idx[s]
        for k in range(W):
            out[s, k] = state[a, k]


@njit(cache=True)
def smc_log_likelihood(order_group, order_value, group_parent, discounts, base,
                       n_particles, seed, ess_threshold):
    """Log of the particle estimate of p(X | jumps).

    The incremental weight of a particle is the predictive probability of
    the incoming observation, after which the observation is seated from
    its exact conditional.  With ``ess_threshold <= 0`` particles are
    resampled multinomially after every step; otherwise only when the
    effective sample size drops below ``ess_threshold * n_particles``.
    """
    S = n_particles
    G = group_parent.shape[0]
    V = base.shape[0]
    T = order_group.shape[0]
    seed = np.uint64(seed)
    # one row per particle: customers[g, v], clusters[g, v], customers[g], clusters[g]
    off_tabs = G * V
    off_ncust = 2 * G * V
    off_ntabs = 2 * G * V + G
    W = 2 * G * V + 2 * G
    state = np.zeros((S, W), np.int32)
    spare = np.empty((S, W), np.int32)
    w = np.empty(S)
    logw = np.zeros(S)
    cdf = np.empty(S)
    idx = np.empty(S, np.int64)
    spacing = np.empty(S + 1)
    path = np.empty(G, np.int64)
    plev = np.empty(G + 1)
    loglik = 0.0
    for t in range(T):
        g = order_group[t]
        v = order_value[t]
        depth = 0
        h = g
        while h >= 0:
            path[depth] = h
            depth += 1
            h = group_parent[h]
        for s in range(S):
            row = state[s]
            p = base[v]
            plev[depth] = p
            for lev in range(depth - 1, -1, -1):
                h = path[lev]
                n = row[off_ncust + h]
                if n > 0:
                    d = discounts[h]
                    p = (row[h * V + v] - row[off_tabs + h * V + v] * d
                         + row[off_ntabs + h] * d * p) / n
                plev[lev] = p
            w[s] = p
            if p <= 0.0:
                continue
            for lev in range(depth):
                h = path[lev]
                n = row[off_ncust + h]
                row[h * V + v] += 1
                row[off_ncust + h] += 1
                if n > 0:
                    d = discounts[h]
                    join = (row[h * V + v] - 1 - row[off_tabs + h * V + v] * d) / (n * plev[lev])
                    if _uniform(seed, t, s, lev) < join:
                        break
                row[off_tabs + h * V + v] += 1
                row[off_ntabs + h] += 1
        if ess_threshold <= 0.0:
            acc = 0.0
            for s in range(S):
                acc += w[s]
                cdf[s] = acc
            if acc <= 0.0:
                return -np.inf
            loglik += np.log(acc / S)
            if t == T - 1:
                break
            _resample(state, spare, cdf, acc, idx, spacing, seed, t)
            state, spare = spare, state
            continue
        # running weights are kept relative to their maximum
        mxp = -np.inf
        for s in range(S):
            if logw[s] > mxp:
                mxp = logw[s]
        den = 0.0
        for s in range(S):
            if logw[s] > -np.inf:
                den += np.exp(logw[s] - mxp)
        mx = -np.inf
        for s in range(S):
            if w[s] > 0.0 and logw[s] > -np.inf:
                logw[s] += np.log(w[s])
            else:
                logw[s] = -np.inf
            if logw[s] > mx:
                mx = logw[s]
        if mx == -np.inf:
            return -np.inf
        num = 0.0
        for s in range(S):
            if logw[s] > -np.inf:
                num += np.exp(logw[s] - mx)
        loglik += np.log(num) + mx - np.log(den) - mxp
        if t == T - 1:
            break
        if ess_threshold > 0.0:
            sq = 0.0
            for s in range(S):
                if logw[s] > -np.inf:
                    sq += np.exp(2.0 * (logw[s] - mx))
            if num * num / sq >= ess_threshold * S:
                continue
        acc = 0.0
        for s in range(S):
            if logw[s] > -np.inf:
                acc += np.exp(logw[s] - mx)
            cdf[s] = acc
        _resample(state, spare, cdf, acc, idx, spacing, seed, t)
        state, spare = spare, state
        for s in range(S):
            logw[s] = 0.0
    return loglik


@njit(cache=True)
def log_likelihood_for_jumps(parent, jumps, obs_ptr, obs_val, discount, base,
                             n_particles, seed, ess_threshold):
    group_of, group_parent, group_jumps = prune_groups(parent, jumps)
    order_group, order_value = observation_order(group_of, group_parent, obs_ptr, obs_val)
    discounts = np.empty(group_parent.shape[0])
    discounts[0] = discount
    for g in range(1, group_parent.shape[0]):
        discounts[g] = discount ** group_jumps[g]
    return smc_log_likelihood(order_group, order_value, group_parent, discounts, base,
                              n_particles, seed, ess_threshold)
