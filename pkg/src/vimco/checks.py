"""Oracle check suite and exact variance probes on built-in toy instances.

Each check is one row: (name, expected, actual, abs_err, rel_err, pass).  For
vector quantities `expected`/`actual` hold 2-norms and the errors are taken
on the difference vector.
"""
from dataclasses import dataclass

import numpy as np

from . import oracle as O
from .core import make_rng
from .estimators import learning_signal
from .objective import LEARNED, SampleSet

REPORT_COLUMNS = ("name", "expected", "actual", "abs_err", "rel_err", "pass")
# largest latent width per K that keeps the tuple count (and the runtime) small
SUITE_BITS = {1: 8, 2: 6, 3: 4, 4: 3, 5: 3, 6: 2, 7: 2, 8: 2}
FIXED_BASELINES = (0.3, -0.1)


@dataclass
class Check:
    name: str
    expected: float
    actual: float
    abs_err: float
    rel_err: float
    passed: bool

    def row(self):
        return [self.name, repr(self.expected), repr(self.actual), repr(self.abs_err),
                repr(self.rel_err), "1" if self.passed else "0"]


def vector_check(name, actual, expected, rtol):
    actual, expected = np.asarray(actual, float), np.asarray(expected, float)
    err = float(np.linalg.norm(actual - expected))
    rel = O.rel_err(actual, expected)
    return Check(name, float(np.linalg.norm(expected)), float(np.linalg.norm(actual)), err, float(rel),
                 bool(rel <= rtol))


def scalar_check(name, actual, expected, atol):
    err = abs(actual - expected)
    rel = err / abs(expected) if expected else err
    return Check(name, float(expected), float(actual), float(err), float(rel), bool(err <= atol))


def order_check(name, lower, upper, slack=1e-9):
    """Passes when lower <= upper + slack; the error is the violation size."""
    gap = upper - lower
    return Check(name, float(lower), float(upper), float(max(0.0, -gap)), float(max(0.0, -gap)),
                 bool(gap >= -slack))


def bits_for(K, budget=O.TUPLE_BUDGET):
    d = SUITE_BITS.get(K, 1)
    while d > 1 and float(2**d) ** K > budget:
        d -= 1
    if float(2**d) ** K > budget:
        raise O.BudgetError(f"no latent width keeps 2^d tuples of size {K} within {budget}")
    return d


def suite_instance(seed, i, K, budget=O.TUPLE_BUDGET):
    kind = O.TOY_KINDS[i % len(O.TOY_KINDS)]
    d = bits_for(K, budget)
    if d < 2:
        return O.toy_instance(make_rng(seed, i, K), kind, latent_sizes=(1,), max_bits=1)
    return O.toy_instance(make_rng(seed, i, K), kind, max_bits=d)


def instance_checks(inst, K, tag, budget=O.TUPLE_BUDGET, fd=True):
    m, q, x, c, mode = inst.model, inst.proposal, inst.x, inst.context, inst.mode
    t = O.exact_tables(m, q, x, mode, c)
    O._check_tuples(t.H, K, budget)
    out = []
    log_px = O.exact_log_likelihood(m, x, c)
    LK = O.bound_from_tables(t, K, budget)
    if K > 1:
        out.append(order_check(f"{tag}.bound_monotone", O.bound_from_tables(t, K - 1, budget), LK))
    out.append(order_check(f"{tag}.bound_below_loglik", LK, log_px))
    theta, psi = O.gradient_from_tables(t, K, budget)
    kinds = ("naive", "nvil", "vimco") if K > 1 else ("naive", "nvil")
    for kind in kinds:
        mean = O.moments_from_tables(kind, t, K, FIXED_BASELINES if kind == "nvil" else None, budget=budget).mean
        out.append(vector_check(f"{tag}.{kind}_mean_vs_exact_theta", mean, theta, 1e-6))
    out.append(vector_check(f"{tag}.model_mean_vs_exact_psi", O.moments_from_tables("model", t, K, budget=budget).mean,
                            psi, 1e-6))
    if fd:
        g = O.exact_bound_grad(m, q, x, K, mode, c, check=False, budget=budget)
        f = lambda: O.exact_bound(m, q, x, K, mode, c, budget)
        th_fd = O._fd_gradient(f, q.params, t.theta_shapes, O.FD_STEP)
        ps_fd = O._fd_gradient(f, {k: m.params[k] for k in t.psi_shapes}, t.psi_shapes, O.FD_STEP)
        out.append(vector_check(f"{tag}.theta_grad_vs_finite_diff", g.theta, th_fd, 1e-5))
        out.append(vector_check(f"{tag}.psi_grad_vs_finite_diff", g.psi, ps_fd, 1e-5))
    post = O.PosteriorProposal(m, x, c)
    out.append(scalar_check(f"{tag}.posterior_bound_equals_loglik",
                            O.exact_bound(m, post, x, K, LEARNED, c, budget), log_px, 1e-9))
    return out


def oracle_suite(seed=0, instances=20, ks=(2, 3, 5), budget=O.TUPLE_BUDGET, fd=True):
    for K in ks:
        if K < 1:
            raise ValueError("K must be at least 1")
        bits_for(K, budget)
    checks = []
    for i in range(instances):
        for K in ks:
            inst = suite_instance(seed, i, K, budget)
            checks += instance_checks(inst, K, f"inst{i:02d}.{inst.kind}.K{K}", budget, fd)
    return checks


def exact_signal_rms(kind, t, K, baselines=None, mean_kind="geometric", budget=O.TUPLE_BUDGET):
    """sqrt(E[mean_j a_j^2]) of the learning signal over all K-tuples."""
    O._check_tuples(t.H, K, budget)
    b, b_x = baselines if baselines is not None else (0.0, 0.0)
    total = 0.0
    for idx in O.tuple_chunks(t.H, K):
        q = np.exp(t.logq[idx].sum(axis=1))
        s = SampleSet(logf=t.logf[idx], h={}, x=np.zeros(0))
        a = learning_signal(kind, s, mean_kind=mean_kind, b=b, b_x=b_x)
        total += float(q @ np.mean(a * a, axis=-1))
    return float(np.sqrt(total))


def variance_probe(seed=0, instances=5, ks=(2, 5, 10), kinds=("naive", "nvil", "vimco", "rws-wake"),
                   budget=O.TUPLE_BUDGET):
    """Rows (instance, kind, K, summed gradient variance, signal RMS), exact.

    NVIL uses the best constant baseline b = L^K, which it can only approach.
    """
    rows = []
    for i in range(instances):
        for K in ks:
            inst = suite_instance(seed, i, K, budget)
            t = O.exact_tables(inst.model, inst.proposal, inst.x, inst.mode, inst.context)
            LK = O.bound_from_tables(t, K, budget)
            for kind in kinds:
                if kind == "vimco" and K < 2:
                    continue
                base = (LK, 0.0) if kind == "nvil" else None
                mom = O.moments_from_tables(kind, t, K, base, budget=budget)
                rms = exact_signal_rms(kind, t, K, base, budget=budget)
                rows.append((i, inst.kind, kind, K, mom.total_var, rms))
    return rows
