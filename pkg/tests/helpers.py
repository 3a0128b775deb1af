"""Shared test oracles."""
import itertools

import numpy as np


def central_diff(fn, params, step=1e-5):
    """Central finite differences of scalar fn() w.r.t. each array in `params` (edited in place)."""
    out = {}
    for k, arr in params.items():
        g = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            orig = arr[i]
            arr[i] = orig + step
            up = fn()
            arr[i] = orig - step
            down = fn()
            arr[i] = orig
            g[i] = (up - down) / (2 * step)
        out[k] = g
    return out


def rel(a, b):
    a = np.concatenate([np.ravel(a[k]) for k in sorted(b)]) if isinstance(a, dict) else np.ravel(a)
    b = np.concatenate([np.ravel(b[k]) for k in sorted(b)]) if isinstance(b, dict) else np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def all_bits(n):
    """Every binary vector of length n, as rows."""
    return np.array(list(itertools.product([0.0, 1.0], repeat=n))).reshape(-1, n)


def randomize(params, rng, scale=1.0):
    for p in params.values():
        p[...] = rng.normal(0.0, scale, size=p.shape)


# criterion id -> (passed, detail); printed in the terminal summary
ACCEPTANCE = {}


def record(cid, passed, detail):
    ACCEPTANCE[cid] = (bool(passed), detail)
    print(f"{'PASS' if passed else 'FAIL'} {cid}: {detail}")
    return bool(passed)
