"""Minibatch training with Adam, validation-based model selection, signal
RMS monitoring, and the bound / NLL evaluators."""
import csv
import io
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import checkpoint
from .baselines import NvilBaseline
from .core import EVAL, INIT, SAMPLE, SHUFFLE, log_sum_exp, make_rng
from .estimators import estimate, rws_sleep_grad
from .objective import LEARNED, MEAN_KINDS, PRIOR, bound, local_signals, score_samples
from .optim import Adam
from .sbn import PriorProposal, SbnModel, SbnProposal

MODES = ("generative", "sop-learned", "sop-prior")
ESTIMATORS = ("naive", "nvil", "vimco", "rws-wake", "rws-sleep")
METRIC_COLUMNS = ("step", "epoch", "split", "metric", "value", "K", "estimator", "lr", "seed")
SLEEP_KEY = 1 << 20


@dataclass
class TrainConfig:
    estimator: str = "vimco"
    k: int = 5
    lr: float = 1e-3
    batch_size: int = 24
    epochs: int = 1
    max_steps: int = 0          # 0: run every epoch to the end
    seed: int = 0
    mean_kind: str = "geometric"
    mode: str = "generative"
    latent_sizes: tuple = (200,)
    sweep: tuple = ()
    eval_every: int = 0         # steps between validation evaluations; 0: once per epoch
    eval_k: int = 0             # 0: the training K
    eval_cases: int = 0         # 0: the whole validation split
    log_every: int = 10
    rws_sleep: bool = False     # add the sleep update to rws-wake
    init_std: float = 0.01
    init_obs_bias: bool = True
    baseline_hidden: int = 100
    baseline_alpha: float = 0.9
    rms_decay: float = 0.99

    def __post_init__(self):
        self.latent_sizes = tuple(int(s) for s in np.atleast_1d(self.latent_sizes))
        self.sweep = tuple(float(v) for v in np.atleast_1d(self.sweep)) if len(self.sweep) else ()

    def validate(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mean_kind not in MEAN_KINDS:
            raise ValueError(f"unknown mean_kind {self.mean_kind!r}")
        if self.k < 1:
            raise ValueError("K must be at least 1")
        if self.estimator == "vimco" and self.k < 2:
            raise ValueError("VIMCO needs K >= 2: the leave-one-out baselines are undefined for one sample")
        if self.batch_size < 1:
            raise ValueError("minibatch size must be at least 1")
        if self.epochs < 1 and self.max_steps < 1:
            raise ValueError("nothing to run: epochs and max_steps are both zero")
        if not self.latent_sizes or min(self.latent_sizes) < 1:
            raise ValueError("latent layer sizes must be positive")
        if self.estimator.startswith("rws") and self.mode == "sop-prior":
            raise ValueError("wake-sleep updates need a learned proposal")
        if self.lr <= 0 or any(v <= 0 for v in self.sweep):
            raise ValueError("learning rates must be positive")
        return self

    @property
    def score_mode(self):
        return PRIOR if self.mode == "sop-prior" else LEARNED

    @property
    def sop(self):
        return self.mode != "generative"

    def resolved(self):
        """Flat key = value lines, in field order."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            out.append(f"train.{f.name} = {v}")
        return "\n".join(out) + "\n"


class SignalMonitor:
    """EMA of the per-update RMS of the learning signal; the first value seeds it."""

    def __init__(self, decay=0.99):
        self.decay = decay
        self.value = None

    def update(self, signal):
        rms = float(np.sqrt(np.mean(np.square(signal))))
        self.value = rms if self.value is None else self.decay * self.value + (1 - self.decay) * rms
        return rms


@dataclass
class TrainResult:
    config: TrainConfig
    model: SbnModel
    proposal: object
    baseline: NvilBaseline
    metrics: list
    best_valid: float = -np.inf
    best_step: int = -1
    best_state: dict = field(default_factory=dict)
    steps: int = 0

    def metrics_csv(self):
        return metrics_to_csv(self.metrics)


def metrics_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([r[c] for c in METRIC_COLUMNS])
    return buf.getvalue()


def build(config, obs_size, context_size, obs_mean=None, ctx_mean=None):
    """Fresh model / proposal / NVIL state for a config."""
    rng = make_rng(config.seed, INIT)
    model = SbnModel(config.latent_sizes, obs_size, context_size)
    model.init_params(rng, config.init_std, obs_mean if config.init_obs_bias else None)
    if config.mode == "sop-prior":
        proposal = PriorProposal(model)
    else:
        proposal = SbnProposal(config.latent_sizes, obs_size, context_size, obs_mean, ctx_mean)
        proposal.init_params(rng, config.init_std)
    baseline = NvilBaseline(obs_size + context_size, config.baseline_hidden, config.baseline_alpha,
                            config.lr, rng)
    return model, proposal, baseline


def _baseline_input(x, c, x_mean, c_mean):
    xin = x - x_mean
    return xin if c is None else np.concatenate([c - c_mean, xin], axis=1)


def state_tensors(model, proposal, baseline=None, opts=None):
    out = {f"model.{k}": v for k, v in model.params.items()}
    if isinstance(proposal, SbnProposal):
        out.update({f"proposal.{k}": v for k, v in proposal.params.items()})
        out["proposal.x_mean"] = proposal.x_mean
        out["proposal.c_mean"] = proposal.c_mean
    if baseline is not None:
        out.update(baseline.state("baseline"))
    for name, opt in (opts or {}).items():
        out.update(opt.state(f"adam.{name}"))
    return {k: np.array(v, dtype=np.float64, copy=True) for k, v in out.items()}


def train(config, dataset, progress=None):
    """Train per `config`; returns the final state plus the best-validation snapshot."""
    config.validate()
    x_tr, c_tr = dataset.view("train", config.sop)
    x_va, c_va = dataset.view("valid", config.sop)
    if config.eval_cases:
        x_va = x_va[:config.eval_cases]
        c_va = None if c_va is None else c_va[:config.eval_cases]
    x_mean = x_tr.mean(axis=0)
    c_mean = None if c_tr is None else c_tr.mean(axis=0)
    ctx_size = 0 if c_tr is None else c_tr.shape[1]
    model, proposal, baseline = build(config, x_tr.shape[1], ctx_size, x_mean, c_mean)
    c_mean0 = np.zeros(0) if c_mean is None else c_mean
    fhat = None
    if config.estimator == "vimco" and config.mean_kind == "learned":
        fhat = NvilBaseline(x_tr.shape[1] + ctx_size, config.baseline_hidden, config.baseline_alpha,
                            config.lr, make_rng(config.seed, INIT, 1))
    opts = {"model": Adam(config.lr), "proposal": Adam(config.lr)}
    psi_keys = model.param_names("obs" if config.mode == "sop-prior" else "all")
    monitor = SignalMonitor(config.rms_decay)
    eval_k = config.eval_k or config.k
    res = TrainResult(config, model, proposal, baseline, [])
    kind = "rws-wake" if config.estimator == "rws-sleep" else config.estimator

    def row(step, epoch, split, metric, value, K=config.k):
        res.metrics.append(dict(step=step, epoch=epoch, split=split, metric=metric, value=repr(float(value)),
                                K=K, estimator=config.estimator, lr=repr(config.lr), seed=config.seed))

    def evaluate(step, epoch):
        v = eval_bound(model, proposal, x_va, eval_k, c_va, config.seed, config.score_mode)
        row(step, epoch, "valid", "bound", v, eval_k)
        if v > res.best_valid:
            res.best_valid, res.best_step = v, step
            res.best_state = state_tensors(model, proposal, baseline, opts)
        if progress:
            progress(step, epoch, v)

    n = x_tr.shape[0]
    B = config.batch_size
    step = 0
    evaluated_at = -1
    for epoch in range(config.epochs or 10**9):
        perm = make_rng(config.seed, SHUFFLE, epoch).permutation(n)
        for bi, start in enumerate(range(0, n, B)):
            idx = perm[start:start + B]
            x = x_tr[idx]
            c = None if c_tr is None else c_tr[idx]
            rngs = [make_rng(config.seed, SAMPLE, epoch, bi, j) for j in range(len(idx))]
            s = score_samples(model, proposal, x, config.k, mode=config.score_mode, context=c, rngs=rngs)
            L = bound(s)
            kw = {}
            signal = None
            if kind == "nvil":
                xin = _baseline_input(x, c, x_mean, c_mean0)
                kw = dict(zip(("b", "b_x", "scale"), baseline.terms(xin)))
                signal, _ = baseline.update(xin, L)
            elif kind == "vimco":
                kw = {"mean_kind": config.mean_kind}
                if fhat is not None:
                    xin = _baseline_input(x, c, x_mean, c_mean0)
                    kw["log_fhat"] = fhat.b + fhat.predict(xin)
                    fhat.update(xin, s.logf.mean(axis=-1))
                signal = local_signals(s, config.mean_kind, kw.get("log_fhat"))
            elif kind == "naive":
                signal = L
            g = estimate(kind, s, model, proposal, **kw).scaled(1.0 / len(idx))
            theta = g.theta
            if config.estimator == "rws-sleep" or config.rws_sleep:
                sleep = rws_sleep_grad(model, proposal, make_rng(config.seed, SAMPLE, epoch, bi, SLEEP_KEY),
                                       context=c, n=len(idx))
                theta = sleep if config.estimator == "rws-sleep" else {k: theta[k] + sleep[k] for k in theta}
            opts["proposal"].step(proposal.params, theta)
            opts["model"].step(model.params, {k: g.psi[k] for k in psi_keys})
            step += 1
            if signal is not None:
                monitor.update(signal)
            if step % config.log_every == 0:
                row(step, epoch, "train", "bound", L.mean())
                if monitor.value is not None:
                    row(step, epoch, "train", "signal_rms", monitor.value)
            if config.eval_every and step % config.eval_every == 0:
                evaluate(step, epoch)
                evaluated_at = step
            if config.max_steps and step >= config.max_steps:
                break
        if not config.eval_every and evaluated_at != step:
            evaluate(step, epoch)
            evaluated_at = step
        if config.max_steps and step >= config.max_steps:
            break
    if evaluated_at != step:
        evaluate(step, epoch)
    res.steps = step
    return res


def _case_rngs(seed, draw, cases):
    return [make_rng(seed, EVAL, draw, int(i)) for i in cases]


def eval_bound(model, proposal, x, K, context=None, seed=0, mode=LEARNED, draws=1, chunk=None):
    """Mean K-sample bound over the cases of a split, averaged over `draws` sample sets."""
    x = np.atleast_2d(x)
    n = x.shape[0]
    chunk = chunk or max(1, 20000 // K)
    total = 0.0
    for d in range(draws):
        for start in range(0, n, chunk):
            sl = slice(start, min(n, start + chunk))
            c = None if context is None else np.atleast_2d(context)[sl]
            s = score_samples(model, proposal, x[sl], K, mode=mode, context=c,
                              rngs=_case_rngs(seed, d, range(sl.start, sl.stop)))
            total += float(bound(s).sum())
    return total / (n * draws)


def eval_nll(model, proposal, x, S, context=None, seed=0, mode=LEARNED, chunk_rows=20000):
    """Mean of -(log sum_s f(x, h^s) - log S) over cases: an upper bound estimate of the NLL.

    Case i always uses the stream (seed, EVAL, 0, i), so a larger S extends
    the sample set of a smaller one.
    """
    if S < 1:
        raise ValueError("S must be at least 1")
    x = np.atleast_2d(x)
    n = x.shape[0]
    out = np.empty(n)
    per = max(1, chunk_rows // S)
    for start in range(0, n, per):
        sl = slice(start, min(n, start + per))
        c = None if context is None else np.atleast_2d(context)[sl]
        s = score_samples(model, proposal, x[sl], S, mode=mode, context=c,
                          rngs=_case_rngs(seed, 0, range(sl.start, sl.stop)))
        out[sl] = -(log_sum_exp(s.logf) - np.log(S))
    return float(out.mean())


def save_state(path, tensors, config, meta=None):
    m = {"mode": config.mode, "latent_sizes": ",".join(map(str, config.latent_sizes)),
         "estimator": config.estimator, "k": config.k, "lr": repr(config.lr), "seed": config.seed}
    m.update(meta or {})
    checkpoint.save(path, tensors, m)


def load_model(path):
    """(model, proposal, meta) from a checkpoint written by `save_state`."""
    tensors, meta = checkpoint.load(path)
    latent = tuple(int(v) for v in meta["latent_sizes"].split(","))
    obs_size = tensors["model.x.b"].shape[0]
    ctx = tensors["model.h0.W_c"].shape[1] if "model.h0.W_c" in tensors else 0
    model = SbnModel(latent, obs_size, ctx)
    model.net.set_params({k[6:]: v for k, v in tensors.items() if k.startswith("model.")})
    if meta["mode"] == "sop-prior":
        proposal = PriorProposal(model)
    else:
        proposal = SbnProposal(latent, obs_size, ctx, tensors["proposal.x_mean"],
                               tensors["proposal.c_mean"])
        proposal.net.set_params({k[9:]: v for k, v in tensors.items()
                                 if k.startswith("proposal.") and not k.endswith("_mean")})
    return model, proposal, meta


def config_dict(config):
    return asdict(config)
