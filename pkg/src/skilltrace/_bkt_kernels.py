"""Hot BKT likelihood kernel: numba @njit with a pure-numpy fallback.

Sequences are grouped into unique correctness patterns with counts before
they reach the kernel, so the cost is O(K * patterns * steps) for K
candidate parameter tuples instead of O(K * students * steps).
"""

import numpy as np

from ._accel import NUMBA_ENABLED, njit_or_none


def grid_loglik_numpy(patterns, lengths, counts, p0, pt, pg, ps):
    """Total log-likelihood of the grouped patterns under each candidate.

    patterns: (P, T_max) int8, padded with -1; lengths: (P,); counts: (P,).
    p0, pt, pg, ps: (K,) candidate parameter vectors. Returns (K,).
    """
    n_cand = p0.shape[0]
    t_max = patterns.shape[1]
    out = np.empty(n_cand)
    for k in range(n_cand):
        L = np.full(patterns.shape[0], p0[k])
        ll = np.zeros(patterns.shape[0])
        g, s, trans = pg[k], ps[k], pt[k]
        for t in range(t_max):
            active = t < lengths
            obs = patterns[:, t] == 1
            pc = L * (1.0 - s) + (1.0 - L) * g
            with np.errstate(divide="ignore", invalid="ignore"):
                step_ll = np.where(obs, np.log(pc), np.log1p(-pc))
                post = np.where(obs, L * (1.0 - s) / pc, L * s / (1.0 - pc))
            ll += np.where(active, step_ll, 0.0)
            L = np.where(active, post + (1.0 - post) * trans, L)
        out[k] = float(np.dot(counts, ll))
    return out


def _grid_loglik_scalar(patterns, lengths, counts, p0, pt, pg, ps):
    n_cand = p0.shape[0]
    n_pat = patterns.shape[0]
    out = np.empty(n_cand)
    for k in range(n_cand):
        g = pg[k]
        s = ps[k]
        trans = pt[k]
        total = 0.0
        for i in range(n_pat):
            L = p0[k]
            ll = 0.0
            for t in range(lengths[i]):
                pc = L * (1.0 - s) + (1.0 - L) * g
                if patterns[i, t] == 1:
                    ll += np.log(pc)
                    post = L * (1.0 - s) / pc
                else:
                    ll += np.log(1.0 - pc)
                    post = L * s / (1.0 - pc)
                L = post + (1.0 - post) * trans
            total += counts[i] * ll
        out[k] = total
    return out


if NUMBA_ENABLED:
    from numba import prange

    _jit = njit_or_none(parallel=True, fastmath=False, cache=True)

    def _grid_loglik_numba_impl(patterns, lengths, counts, p0, pt, pg, ps):
        n_cand = p0.shape[0]
        n_pat = patterns.shape[0]
        out = np.empty(n_cand)
        for k in prange(n_cand):
            g = pg[k]
            s = ps[k]
            trans = pt[k]
            total = 0.0
            for i in range(n_pat):
                L = p0[k]
                ll = 0.0
                for t in range(lengths[i]):
                    pc = L * (1.0 - s) + (1.0 - L) * g
                    if patterns[i, t] == 1:
                        ll += np.log(pc)
                        post = L * (1.0 - s) / pc
                    else:
                        ll += np.log(1.0 - pc)
                        post = L * s / (1.0 - pc)
                    L = post + (1.0 - post) * trans
                total += counts[i] * ll
            out[k] = total
        return out

    grid_loglik_numba = _jit(_grid_loglik_numba_impl)
    grid_loglik = grid_loglik_numba
else:
    grid_loglik_numba = None
    grid_loglik = grid_loglik_numpy


def group_patterns(sequences):
    """Collapse correctness sequences into (patterns, lengths, counts) arrays."""
    groups = {}
    for seq in sequences:
        key = tuple(bool(x) for x in seq)
        if key:
            groups[key] = groups.get(key, 0) + 1
    if not groups:
        raise ValueError("no nonempty sequences")
    keys = sorted(groups)
    t_max = max(len(k) for k in keys)
    patterns = np.full((len(keys), t_max), -1, dtype=np.int8)
    lengths = np.empty(len(keys), dtype=np.int64)
    counts = np.empty(len(keys), dtype=np.float64)
    for i, key in enumerate(keys):
        patterns[i, : len(key)] = np.asarray(key, dtype=np.int8)
        lengths[i] = len(key)
        counts[i] = groups[key]
    return patterns, lengths, counts
