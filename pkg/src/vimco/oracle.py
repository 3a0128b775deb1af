"""Brute-force ground truth for small models.

Everything here enumerates: all 2^d latent configurations of a model, and all
|H|^K sample tuples of a K-sample objective.  Per-configuration quantities
(log Q, log f and their per-configuration gradients) are tabulated once, after
which tuple sums reduce to indexing into the tables.

Limits are enforced up front: ``|H| <= CONFIG_BUDGET`` and
``|H|^K <= TUPLE_BUDGET``.  Nothing is subsampled.
"""
from dataclasses import dataclass, field

import numpy as np

from . import estimators as est
from .core import log_sum_exp, softmax_from_logs
from .objective import LEARNED, PRIOR, SampleSet
from .sbn import PriorProposal, SbnModel, SbnProposal, flatten, unflatten

TUPLE_BUDGET = 10**6
CONFIG_BUDGET = 2**20
FD_STEP = 1e-5


class BudgetError(ValueError):
    pass


class CrossCheckError(AssertionError):
    """Analytic and finite-difference gradients disagree: an implementation bug."""


def rel_err(actual, expected):
    actual, expected = np.asarray(actual, float), np.asarray(expected, float)
    scale = np.linalg.norm(expected)
    diff = np.linalg.norm(actual - expected)
    return diff / scale if scale > 0 else diff


def enumerate_configs(sizes, budget=CONFIG_BUDGET):
    """All joint settings of the given layers as a dict of (2^d, size) arrays."""
    d = sum(sizes.values())
    if 2**d > budget:
        raise BudgetError(f"2^{d} latent configurations exceed the budget of {budget}")
    codes = np.arange(2**d)
    bits = ((codes[:, None] >> np.arange(d)[::-1]) & 1).astype(np.float64)
    out, i = {}, 0
    for name, size in sizes.items():
        out[name] = bits[:, i:i + size]
        i += size
    return out


def _latent_sizes(model):
    return {n: model.net.sizes[n] for n in model.latent_names}


def exact_log_likelihood(model, x, context=None, budget=CONFIG_BUDGET):
    configs = enumerate_configs(_latent_sizes(model), budget)
    H = len(next(iter(configs.values())))
    xr = np.repeat(np.atleast_2d(x), H, axis=0)
    cr = None if context is None else np.repeat(np.atleast_2d(context), H, axis=0)
    return float(log_sum_exp(model.log_joint(xr, configs, cr)))


class PosteriorProposal:
    """The exact posterior P(h|x, c) of a small model, usable as a proposal.

    It has no parameters; with it the importance estimator has zero variance.
    """

    def __init__(self, model, x, context=None, budget=CONFIG_BUDGET):
        self.model = model
        self.latent_names = model.latent_names
        self.latent_sizes = model.latent_sizes
        self.net = model.net
        self.x = np.asarray(x, dtype=np.float64)
        self.context = None if context is None else np.asarray(context, dtype=np.float64)
        sizes = _latent_sizes(model)
        self._configs = enumerate_configs(sizes, budget)
        self._bits = np.concatenate([self._configs[n] for n in self.latent_names], axis=1)
        H = len(self._bits)
        cr = None if context is None else np.repeat(np.atleast_2d(context), H, axis=0)
        lj = model.log_joint(np.repeat(np.atleast_2d(x), H, axis=0), self._configs, cr)
        self.table = lj - log_sum_exp(lj)
        self._cdf = np.cumsum(np.exp(self.table))
        self._pow = 2 ** np.arange(self._bits.shape[1])[::-1]
        self.params = {}

    @property
    def total_latent_bits(self):
        return self._bits.shape[1]

    def param_shapes(self):
        return {}

    def _codes(self, h):
        hv, single = self.model._stack(h)
        bits = np.concatenate([hv[n] for n in self.latent_names], axis=1)
        return (bits @ self._pow).astype(int), single

    def sample(self, x, rng=None, context=None, u=None):
        single = np.asarray(x).ndim == 1
        n = 1 if single else np.asarray(x).shape[0]
        if u is None:
            u = rng.random((n, self.total_latent_bits))
        idx = np.searchsorted(self._cdf, u[:, 0] * self._cdf[-1], side="right")
        idx = np.minimum(idx, len(self._cdf) - 1)
        hv = {name: self._configs[name][idx] for name in self.latent_names}
        hs = tuple(hv[name] for name in self.latent_names)
        logq = self.table[idx]
        if single:
            return tuple(v[0] for v in hs), float(logq[0])
        return hs, logq

    def log_q(self, x, h, context=None):
        codes, single = self._codes(h)
        lq = self.table[codes]
        return float(lq[0]) if single else lq

    def grad_log_q(self, x, h, context=None, weights=None):
        return {}

    def per_sample_grad(self, x, h, context=None):
        codes, _ = self._codes(h)
        return np.zeros((len(codes), 0))


@dataclass
class Tables:
    """Per-configuration log Q, log f and gradient rows for one observation."""
    logq: np.ndarray
    logf: np.ndarray
    gq: np.ndarray = None          # dlog Q/dtheta, (H, Dtheta)
    gf_theta: np.ndarray = None    # dlog f/dtheta, None when identically zero
    gf_psi: np.ndarray = None      # dlog f/dpsi, (H, Dpsi)
    theta_shapes: dict = field(default_factory=dict)
    psi_shapes: dict = field(default_factory=dict)

    @property
    def H(self):
        return len(self.logq)

    def permuted(self, perm):
        take = lambda a: None if a is None else a[perm]
        return Tables(self.logq[perm], self.logf[perm], take(self.gq), take(self.gf_theta),
                      take(self.gf_psi), self.theta_shapes, self.psi_shapes)


def psi_part(mode):
    """Model parameters treated as psi: everything, or only the observation layer
    when the prior doubles as the proposal (its parameters are then theta)."""
    return "all" if mode == LEARNED else "obs"


def exact_tables(model, proposal, x, mode=LEARNED, context=None, grads=True, budget=CONFIG_BUDGET):
    if mode not in (LEARNED, PRIOR):
        raise ValueError(f"unknown mode {mode!r}")
    configs = enumerate_configs(_latent_sizes(model), budget)
    H = len(next(iter(configs.values())))
    xr = np.repeat(np.atleast_2d(x), H, axis=0)
    cr = None if context is None else np.repeat(np.atleast_2d(context), H, axis=0)
    logq = proposal.log_q(xr, configs, cr)
    if mode == LEARNED:
        logf = model.log_joint(xr, configs, cr) - logq
    else:
        logf = model.log_likelihood(xr, configs, cr)
    t = Tables(logq=np.asarray(logq), logf=np.asarray(logf),
               theta_shapes=dict(proposal.param_shapes()),
               psi_shapes={k: model.params[k].shape for k in model.param_names(psi_part(mode))})
    if grads:
        t.gq = proposal.per_sample_grad(xr, configs, cr)
        t.gf_theta = -t.gq if mode == LEARNED else None
        t.gf_psi = model.per_sample_grad(xr, configs, cr, part=psi_part(mode))
    return t


def _check_tuples(H, K, budget):
    if K < 1:
        raise ValueError("K must be at least 1")
    if float(H) ** K > budget:
        raise BudgetError(f"{H}^{K} sample tuples exceed the budget of {budget}")


def tuple_chunks(H, K, chunk=1 << 15):
    """Index arrays (n, K) covering all H^K tuples in lexicographic order."""
    total = H**K
    powers = H ** np.arange(K - 1, -1, -1)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total))
        yield (codes[:, None] // powers) % H


def _chunk_size(K, D):
    return max(256, int(4e6 // max(1, K * max(D, 1))))


def bound_from_tables(t, K, budget=TUPLE_BUDGET):
    _check_tuples(t.H, K, budget)
    parts = []
    for idx in tuple_chunks(t.H, K):
        q = np.exp(t.logq[idx].sum(axis=1))
        parts.append(q @ (log_sum_exp(t.logf[idx]) - np.log(K)))
    return float(np.sum(parts))


def gradient_from_tables(t, K, budget=TUPLE_BUDGET):
    """Exact dL^K/dtheta and dL^K/dpsi from the product-rule expansion:

        sum over tuples Q(h^{1:K}) [ L(h^{1:K}) sum_j dlog Q(h^j)
                                     + sum_j w_j dlog f(h^j) ].

    The tuple sums are collapsed onto configurations first, so the gradient
    rows are only touched once.
    """
    _check_tuples(t.H, K, budget)
    cq = np.zeros(t.H)
    cf = np.zeros(t.H)
    for idx in tuple_chunks(t.H, K):
        l = t.logf[idx]
        q = np.exp(t.logq[idx].sum(axis=1))
        L = log_sum_exp(l) - np.log(K)
        w = softmax_from_logs(l)
        cq += np.bincount(idx.ravel(), weights=np.repeat(q * L, K), minlength=t.H)
        cf += np.bincount(idx.ravel(), weights=(q[:, None] * w).ravel(), minlength=t.H)
    theta = cq @ t.gq
    if t.gf_theta is not None:
        theta = theta + cf @ t.gf_theta
    return theta, cf @ t.gf_psi


@dataclass
class Moments:
    mean: np.ndarray
    var: np.ndarray

    @property
    def total_var(self):
        return float(self.var.sum())


def _estimates(kind, t, idx, K, baselines, mean_kind):
    s = SampleSet(logf=t.logf[idx], h={}, x=np.zeros(0))
    if kind == "model":
        return est.model_grad(s, t.gf_psi[idx])
    dq = t.gq[idx]
    df = None if t.gf_theta is None else t.gf_theta[idx]
    if kind == "naive":
        return est.naive_grad(s, dq, df)
    if kind == "nvil":
        b, b_x = baselines if baselines is not None else (0.0, 0.0)
        return est.nvil_grad(s, dq, df, b=b, b_x=b_x)
    if kind == "vimco":
        return est.vimco_grad(s, dq, df, mean_kind=mean_kind)
    if kind == "rws-wake":
        return est.rws_wake_grad(s, dq)
    raise ValueError(f"estimator {kind!r} has no tuple moments")


def moments_from_tables(kind, t, K, baselines=None, mean_kind="geometric", budget=TUPLE_BUDGET):
    """Exact mean and per-coordinate variance of one estimator over all tuples.

    Calls the estimator functions themselves on each chunk of tuples, so the
    moments describe exactly what training would use.
    """
    _check_tuples(t.H, K, budget)
    D = t.gf_psi.shape[1] if kind == "model" else t.gq.shape[1]
    chunk = _chunk_size(K, D)
    mean = np.zeros(D)
    for idx in tuple_chunks(t.H, K, chunk):
        q = np.exp(t.logq[idx].sum(axis=1))
        mean += q @ _estimates(kind, t, idx, K, baselines, mean_kind)
    var = np.zeros(D)
    for idx in tuple_chunks(t.H, K, chunk):
        q = np.exp(t.logq[idx].sum(axis=1))
        e = _estimates(kind, t, idx, K, baselines, mean_kind) - mean
        var += q @ (e * e)
    return Moments(mean, var)


def _flat_params(params, shapes):
    return flatten(params, shapes) if shapes else np.zeros(0)


def _fd_gradient(fn, params, shapes, step):
    """Central differences of fn() w.r.t. the arrays in `params` (edited in place)."""
    x0 = _flat_params(params, shapes)
    g = np.zeros_like(x0)
    views = unflatten(np.arange(x0.size), shapes)
    for k, pos in views.items():
        arr = params[k]
        for flat_i, i in zip(np.ndindex(arr.shape), pos.ravel()):
            orig = arr[flat_i]
            arr[flat_i] = orig + step
            up = fn()
            arr[flat_i] = orig - step
            down = fn()
            arr[flat_i] = orig
            g[i] = (up - down) / (2 * step)
    return g


@dataclass
class BoundGradient:
    theta: np.ndarray
    psi: np.ndarray
    theta_fd: np.ndarray = None
    psi_fd: np.ndarray = None

    @property
    def theta_err(self):
        return rel_err(self.theta, self.theta_fd)

    @property
    def psi_err(self):
        return rel_err(self.psi, self.psi_fd)


def exact_bound(model, proposal, x, K, mode=LEARNED, context=None, budget=TUPLE_BUDGET):
    t = exact_tables(model, proposal, x, mode, context, grads=False)
    return bound_from_tables(t, K, budget)


def exact_bound_grad(model, proposal, x, K, mode=LEARNED, context=None, check=True,
                     step=FD_STEP, rtol=1e-5, budget=TUPLE_BUDGET):
    """Exact gradient of L^K, cross-checked against finite differences.

    Raises CrossCheckError when `check` is on and the two disagree by more
    than `rtol` (relative, in the 2-norm).
    """
    t = exact_tables(model, proposal, x, mode, context)
    theta, psi = gradient_from_tables(t, K, budget)
    out = BoundGradient(theta, psi)
    if check:
        f = lambda: exact_bound(model, proposal, x, K, mode, context, budget)
        out.theta_fd = _fd_gradient(f, proposal.params, t.theta_shapes, step)
        psi_params = {k: model.params[k] for k in t.psi_shapes}
        out.psi_fd = _fd_gradient(f, psi_params, t.psi_shapes, step)
        if out.theta_err > rtol or out.psi_err > rtol:
            raise CrossCheckError(
                f"analytic vs finite-difference gradient: theta rel err {out.theta_err:.3g}, "
                f"psi rel err {out.psi_err:.3g}")
    return out


def estimator_moments(kind, model, proposal, x, K, mode=LEARNED, context=None, baselines=None,
                      mean_kind="geometric", budget=TUPLE_BUDGET):
    t = exact_tables(model, proposal, x, mode, context)
    return moments_from_tables(kind, t, K, baselines, mean_kind, budget)


def posterior_from_tables(t):
    """Exact P(h|x) per configuration; log f + log Q = log P(x, h) in both modes."""
    return softmax_from_logs(t.logf + t.logq)


def wake_target(model, proposal, x, mode=LEARNED, context=None):
    """E_{P(h|x)}[dlog Q(h|x)/dtheta], the direction wake updates approach as K grows.

    It is the negative theta-gradient of KL(P(h|x) || Q(h|x)).
    """
    t = exact_tables(model, proposal, x, mode, context)
    return posterior_from_tables(t) @ t.gq


@dataclass
class OracleReport:
    log_px: float
    bound: float
    grad_theta: np.ndarray
    grad_psi: np.ndarray
    moments: dict
    n_configs: int
    n_tuples: int


def oracle_report(model, proposal, x, K, mode=LEARNED, context=None, kinds=("naive", "nvil", "vimco"),
                  baselines=None, budget=TUPLE_BUDGET):
    t = exact_tables(model, proposal, x, mode, context)
    _check_tuples(t.H, K, budget)
    theta, psi = gradient_from_tables(t, K, budget)
    moments = {k: moments_from_tables(k, t, K, baselines if k == "nvil" else None, budget=budget)
               for k in kinds}
    moments["model"] = moments_from_tables("model", t, K, budget=budget)
    return OracleReport(
        log_px=exact_log_likelihood(model, x, context), bound=bound_from_tables(t, K, budget),
        grad_theta=theta, grad_psi=psi, moments=moments, n_configs=t.H, n_tuples=t.H**K)


@dataclass
class Instance:
    model: SbnModel
    proposal: object
    x: np.ndarray
    context: np.ndarray
    mode: str
    kind: str


TOY_KINDS = ("generative", "sop-learned", "sop-prior")


def toy_instance(rng, kind="generative", latent_sizes=None, max_bits=10, obs_size=None,
                 context_size=3, scale=1.0):
    """A random small model/proposal pair with a random observation.

    Parameters are drawn from N(0, scale^2) so that posteriors are far from
    uniform.  Layer sizes are random unless given; total latent bits never
    exceed `max_bits` and the observation has at most 6 bits.
    """
    if latent_sizes is None:
        total = int(rng.integers(2, max_bits + 1))
        if total >= 2 and rng.random() < 0.5:
            top = int(rng.integers(1, total))
            latent_sizes = (top, total - top)
        else:
            latent_sizes = (total,)
    if sum(latent_sizes) > max_bits:
        raise ValueError("too many latent bits for a toy instance")
    if obs_size is None:
        obs_size = int(rng.integers(2, 7))
    ctx = context_size if kind != "generative" else 0
    model = SbnModel(latent_sizes, obs_size, ctx)
    for p in model.params.values():
        p[...] = rng.normal(0.0, scale, size=p.shape)
    if kind == "sop-prior":
        proposal = PriorProposal(model)
        mode = PRIOR
    else:
        proposal = SbnProposal(latent_sizes, obs_size, ctx)
        for p in proposal.params.values():
            p[...] = rng.normal(0.0, scale, size=p.shape)
        mode = LEARNED
    x = (rng.random(obs_size) < 0.5).astype(np.float64)
    context = (rng.random(ctx) < 0.5).astype(np.float64) if ctx else None
    return Instance(model, proposal, x, context, mode, kind)
