"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Each loop runs over vertices and is vectorised across samples (or leaf
configurations); the arithmetic matches the compiled code term by term.
"""
import numpy as np

RESCALE_BELOW = 1e-200
GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniforms(key, first_sample, n_samples, n_vertices):
    counter = (np.arange(first_sample, first_sample + n_samples, dtype=np.uint64)[:, None]
               * np.uint64(n_vertices) + np.arange(n_vertices, dtype=np.uint64)[None, :])
    z = _mix64(np.uint64(key) + (counter + np.uint64(1)) * GAMMA)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def sample_magnetizations(parent, child_start, child_count, eps_plus, eps_minus,
                          pi_plus, root_state, key, first_sample, n_samples):
    n = len(parent)
    u = uniforms(key, first_sample, n_samples, n).T.copy()
    pi_minus = 1.0 - pi_plus
    state = np.empty((n, n_samples), dtype=bool)  # True means '+'
    if root_state == 0:
        state[0] = u[0] < pi_plus
    else:
        state[0] = root_state == 1
    for v in range(1, n):
        thresh = np.where(state[parent[v]], 1.0 - eps_plus[v], 1.0 - eps_minus[v])
        state[v] = u[v] < thresh
    r = [None] * n
    for v in range(n - 1, -1, -1):
        if child_count[v] == 0:
            r[v] = state[v].astype(np.float64)
            continue
        ap = np.ones(n_samples)
        am = np.ones(n_samples)
        for c in range(child_start[v], child_start[v] + child_count[v]):
            rc = r[c]
            mp = (1.0 - eps_plus[c]) * rc + eps_plus[c] * (1.0 - rc)
            mm = (1.0 - eps_minus[c]) * rc + eps_minus[c] * (1.0 - rc)
            ap = ap * mp
            am = am * mm
            tot = ap + am
            small = tot < RESCALE_BELOW
            if small.any():
                ap = np.where(small, ap / tot, ap)
                am = np.where(small, am / tot, am)
            r[c] = None
        r[v] = ap / (ap + am)
    post = pi_plus * r[0] / (pi_plus * r[0] + pi_minus * (1.0 - r[0]))
    return (post - pi_plus) / pi_minus


def _chunk_likelihoods(child_start, child_count, eps_plus, eps_minus, leaves, configs, n):
    lp = [None] * n
    lm = [None] * n
    for k, leaf in enumerate(leaves):
        minus = ((configs >> k) & 1).astype(bool)
        lp[leaf] = np.where(minus, 0.0, 1.0)
        lm[leaf] = np.where(minus, 1.0, 0.0)
    for v in range(n - 1, -1, -1):
        if child_count[v] == 0:
            continue
        ap = 1.0
        am = 1.0
        for c in range(child_start[v], child_start[v] + child_count[v]):
            ap = ap * ((1.0 - eps_plus[c]) * lp[c] + eps_plus[c] * lm[c])
            am = am * ((1.0 - eps_minus[c]) * lp[c] + eps_minus[c] * lm[c])
            lp[c] = lm[c] = None
        lp[v] = ap
        lm[v] = am
    return lp[0], lm[0]


def enumerate_configs(parent, child_start, child_count, eps_plus, eps_minus,
                      pi_plus, leaves, chunk_bits=16):
    n = len(parent)
    n_leaves = len(leaves)
    pi_minus = 1.0 - pi_plus
    total = 1 << n_leaves
    chunk = 1 << min(chunk_bits, n_leaves)
    acc_v, acc_p = [], []
    for start in range(0, total, chunk):
        configs = np.arange(start, start + chunk, dtype=np.int64)
        lp, lm = _chunk_likelihoods(child_start, child_count, eps_plus, eps_minus,
                                    leaves, configs, n)
        p = pi_plus * lp + pi_minus * lm
        keep = p > 0.0
        p = p[keep]
        post = pi_plus * lp[keep] / p
        x = (post - pi_plus) / pi_minus
        uniq, inv = np.unique(x, return_inverse=True)
        acc_v.append(uniq)
        acc_p.append(np.bincount(inv.ravel(), weights=p, minlength=len(uniq)))
    values = np.concatenate(acc_v)
    probs = np.concatenate(acc_p)
    uniq, inv = np.unique(values, return_inverse=True)
    return uniq, np.bincount(inv.ravel(), weights=probs, minlength=len(uniq))
