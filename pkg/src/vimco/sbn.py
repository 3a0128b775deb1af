"""Sigmoid belief networks: generative models, proposals, exact log-probs.

A network is an ordered list of Bernoulli layers.  Each layer's logits are an
affine function of earlier layers and/or external inputs (observation `x`,
context `c`).  Parameters live in a flat dict keyed ``"<layer>.b"`` and
``"<layer>.W_<source>"`` so optimizers, checkpoints and the oracle can treat
every network the same way.

Values are passed around as dicts mapping names to ``(N, size)`` float arrays
of 0/1 bits (or real-valued inputs).  Public model methods also accept a single
case as 1-d arrays and then return scalars.
"""
from dataclasses import dataclass

import numpy as np

from .core import bernoulli_from_uniform, bernoulli_log_prob, sigmoid

# Only applied when sampling; log-prob and gradient paths see raw logits.
LOGIT_CLIP = 30.0


@dataclass(frozen=True)
class LayerSpec:
    name: str
    size: int
    inputs: tuple = ()


class BernoulliNet:
    def __init__(self, layers, input_sizes=None, params=None):
        self.layers = tuple(layers)
        self.input_sizes = dict(input_sizes or {})
        self.sizes = dict(self.input_sizes)
        for spec in self.layers:
            for src in spec.inputs:
                if src not in self.sizes:
                    raise ValueError(f"layer {spec.name!r} reads {src!r} before it exists")
            if spec.name in self.sizes:
                raise ValueError(f"duplicate layer name {spec.name!r}")
            self.sizes[spec.name] = spec.size
        self.params = {k: np.zeros(s) for k, s in self.param_shapes().items()}
        if params is not None:
            self.set_params(params)

    def _select(self, layers):
        if layers is None:
            return self.layers
        return tuple(s for s in self.layers if s.name in layers)

    def param_shapes(self, layers=None):
        shapes = {}
        for spec in self._select(layers):
            shapes[f"{spec.name}.b"] = (spec.size,)
            for src in spec.inputs:
                shapes[f"{spec.name}.W_{src}"] = (spec.size, self.sizes[src])
        return shapes

    def set_params(self, params):
        """Copy values into the existing arrays (other views stay valid)."""
        for k, v in params.items():
            if k not in self.params:
                raise KeyError(f"unknown parameter {k!r}")
            v = np.asarray(v, dtype=np.float64)
            if v.shape != self.params[k].shape:
                raise ValueError(f"{k}: expected shape {self.params[k].shape}, got {v.shape}")
            self.params[k][...] = v

    def _check(self, values, names):
        n = None
        for name in names:
            if name not in values:
                raise ValueError(f"missing value for {name!r}")
            v = values[name]
            if v.ndim != 2 or v.shape[1] != self.sizes[name]:
                raise ValueError(f"{name!r}: expected (N, {self.sizes[name]}), got {v.shape}")
            if n is None:
                n = v.shape[0]
            elif v.shape[0] != n:
                raise ValueError("inconsistent number of rows")
        return n

    def logits(self, spec, values, n):
        a = np.broadcast_to(self.params[f"{spec.name}.b"], (n, spec.size))
        for src in spec.inputs:
            a = a + values[src] @ self.params[f"{spec.name}.W_{src}"].T
        return a

    def _needed(self, specs, with_outputs=True):
        names = []
        for spec in specs:
            names.extend(spec.inputs)
            if with_outputs:
                names.append(spec.name)
        return list(dict.fromkeys(names))

    def log_prob(self, values, layers=None):
        specs = self._select(layers)
        n = self._check(values, self._needed(specs))
        total = np.zeros(n)
        for spec in specs:
            lp = bernoulli_log_prob(values[spec.name], self.logits(spec, values, n))
            total += lp.sum(axis=1)
        return total

    def _deltas(self, values, specs):
        n = self._check(values, self._needed(specs))
        return n, {s.name: values[s.name] - sigmoid(self.logits(s, values, n)) for s in specs}

    def grad_log_prob(self, values, weights=None, layers=None):
        """sum_n weights[n] * d log p(row n) / d params, as a dict."""
        specs = self._select(layers)
        n, deltas = self._deltas(values, specs)
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
        grads = {}
        for spec in specs:
            d = deltas[spec.name] * w[:, None]
            grads[f"{spec.name}.b"] = d.sum(axis=0)
            for src in spec.inputs:
                grads[f"{spec.name}.W_{src}"] = d.T @ values[src]
        return grads

    def per_sample_grad(self, values, layers=None):
        """Row-wise gradients flattened in `param_shapes` order, shape (N, D)."""
        specs = self._select(layers)
        n, deltas = self._deltas(values, specs)
        blocks = []
        for spec in specs:
            d = deltas[spec.name]
            blocks.append(d)
            for src in spec.inputs:
                blocks.append(np.einsum("ni,nj->nij", d, values[src]).reshape(n, -1))
        return np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0))

    def sample(self, values, uniforms, layers=None):
        """Ancestral sampling of the selected layers; returns an extended dict."""
        out = dict(values)
        specs = self._select(layers)
        n = uniforms[specs[0].name].shape[0]
        for spec in specs:
            a = np.clip(self.logits(spec, out, n), -LOGIT_CLIP, LOGIT_CLIP)
            out[spec.name] = bernoulli_from_uniform(sigmoid(a), uniforms[spec.name])
        return out

    def means(self, name, values):
        spec = next(s for s in self.layers if s.name == name)
        n = self._check(values, list(spec.inputs)) if spec.inputs else _rows(values)
        return sigmoid(self.logits(spec, values, n))


def _rows(values):
    for v in values.values():
        return v.shape[0]
    return 1


def flatten(params, shapes):
    return np.concatenate([np.asarray(params[k], dtype=np.float64).ravel() for k in shapes])


def unflatten(vec, shapes):
    out, i = {}, 0
    for k, s in shapes.items():
        size = int(np.prod(s))
        out[k] = vec[i:i + size].reshape(s)
        i += size
    return out


def draw_uniforms(rng, n, sizes):
    """Uniforms for ancestral sampling of layers with the given sizes, in order."""
    return rng.random((n, sum(sizes.values())))


def split_uniforms(u, sizes):
    out, i = {}, 0
    for name, size in sizes.items():
        out[name] = u[:, i:i + size]
        i += size
    return out


def _as_rows(a, size, what):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != size:
        raise ValueError(f"{what}: expected length-{size} rows, got shape {a.shape}")
    return a


class _LatentStackMixin:
    latent_names = ()

    def latent_sizes_dict(self):
        return {n: self.net.sizes[n] for n in self.latent_names}

    @property
    def total_latent_bits(self):
        return sum(self.net.sizes[n] for n in self.latent_names)

    def _stack(self, h):
        """Accept a sequence (top layer first) or a dict of latent arrays."""
        if isinstance(h, dict):
            items = [h[n] for n in self.latent_names]
        else:
            items = list(h)
            if len(items) != len(self.latent_names):
                raise ValueError(f"expected {len(self.latent_names)} latent layers, got {len(items)}")
        single = np.asarray(items[0]).ndim == 1
        return {n: _as_rows(v, self.net.sizes[n], n) for n, v in zip(self.latent_names, items)}, single

    def _unstack(self, values, single):
        hs = tuple(values[n] for n in self.latent_names)
        return tuple(v[0] for v in hs) if single else hs


class SbnModel(_LatentStackMixin):
    """P(x, h | c): top-down chain h0 -> h1 -> ... -> x.

    With ``context_size > 0`` every layer, including the observation layer,
    also receives the context through its own weight block.
    """

    def __init__(self, latent_sizes, obs_size, context_size=0):
        latent_sizes = tuple(int(s) for s in latent_sizes)
        if not latent_sizes:
            raise ValueError("need at least one latent layer")
        self.latent_sizes = latent_sizes
        self.obs_size = int(obs_size)
        self.context_size = int(context_size)
        self.latent_names = tuple(f"h{i}" for i in range(len(latent_sizes)))
        ctx = ("c",) if context_size else ()
        layers = [LayerSpec("h0", latent_sizes[0], ctx)]
        for i in range(1, len(latent_sizes)):
            layers.append(LayerSpec(self.latent_names[i], latent_sizes[i], (self.latent_names[i - 1],) + ctx))
        layers.append(LayerSpec("x", self.obs_size, (self.latent_names[-1],) + ctx))
        self.net = BernoulliNet(layers, {"c": self.context_size} if context_size else {})

    @property
    def conditional(self):
        return self.context_size > 0

    @property
    def params(self):
        return self.net.params

    def param_names(self, part="all"):
        layers = {"all": None, "prior": self.latent_names, "obs": ("x",)}[part]
        return list(self.net.param_shapes(layers))

    def init_params(self, rng, std=0.01, obs_mean=None):
        """Gaussian weights, zero biases; optionally obs bias = logit(mean)."""
        for k, p in self.params.items():
            p[...] = 0.0 if k.endswith(".b") else rng.normal(0.0, std, size=p.shape)
        if obs_mean is not None:
            m = np.clip(np.asarray(obs_mean, dtype=np.float64), 1e-3, 1 - 1e-3)
            self.params["x.b"][...] = np.log(m) - np.log1p(-m)
        return self

    def _context(self, context, n):
        if self.conditional:
            if context is None:
                raise ValueError("conditional model needs a context")
            c = _as_rows(context, self.context_size, "context")
            if c.shape[0] == 1 and n > 1:
                c = np.repeat(c, n, axis=0)
            return {"c": c}
        if context is not None:
            raise ValueError("unconditional model does not take a context")
        return {}

    def _values(self, x, h, context):
        values, single = self._stack(h)
        n = values[self.latent_names[0]].shape[0]
        if x is not None:
            values["x"] = _as_rows(x, self.obs_size, "x")
            single = single and np.asarray(x).ndim == 1
        values.update(self._context(context, n))
        return values, single

    def _out(self, v, single):
        return float(v[0]) if single else v

    def log_joint(self, x, h, context=None):
        values, single = self._values(x, h, context)
        return self._out(self.net.log_prob(values), single)

    def log_prior(self, h, context=None):
        values, single = self._values(None, h, context)
        return self._out(self.net.log_prob(values, self.latent_names), single)

    def log_likelihood(self, x, h, context=None):
        values, single = self._values(x, h, context)
        return self._out(self.net.log_prob(values, ("x",)), single)

    def grad_log_joint(self, x, h, context=None, weights=None, part="all"):
        layers = {"all": None, "prior": self.latent_names, "obs": ("x",)}[part]
        values, _ = self._values(x, h, context)
        return self.net.grad_log_prob(values, weights, layers)

    def per_sample_grad(self, x, h, context=None, part="all"):
        layers = {"all": None, "prior": self.latent_names, "obs": ("x",)}[part]
        values, _ = self._values(x, h, context)
        return self.net.per_sample_grad(values, layers)

    def sample_prior(self, rng=None, context=None, n=None, u=None):
        """Ancestral sample of h plus the Bernoulli means of x given h.

        Returns ``(h, x_probs)`` with h a tuple ordered from the top layer.
        """
        single = n is None and (context is None or np.asarray(context).ndim == 1)
        if n is None:
            n = 1 if context is None else _as_rows(context, self.context_size, "context").shape[0]
        values = self._context(context, n)
        sizes = self.latent_sizes_dict()
        if u is None:
            u = draw_uniforms(rng, n, sizes)
        values = self.net.sample(values, split_uniforms(u, sizes), self.latent_names)
        probs = self.net.means("x", values)
        return self._unstack(values, single), (probs[0] if single else probs)

    def sample_joint(self, rng=None, context=None, n=None, u=None):
        """Draw (x, h) from the model; used by the sleep update."""
        single = n is None and (context is None or np.asarray(context).ndim == 1)
        if n is None:
            n = 1 if context is None else _as_rows(context, self.context_size, "context").shape[0]
        values = self._context(context, n)
        sizes = {**self.latent_sizes_dict(), "x": self.obs_size}
        if u is None:
            u = draw_uniforms(rng, n, sizes)
        values = self.net.sample(values, split_uniforms(u, sizes))
        x = values["x"][0] if single else values["x"]
        return x, self._unstack(values, single)


class SbnProposal(_LatentStackMixin):
    """Q(h | x[, c]) as a Bernoulli chain.

    Unconditional models get the mirrored bottom-up chain x -> h_{n-1} -> ... -> h0.
    With a context the proposal copies the conditional prior's structure
    (c feeds every layer) and the last latent layer also reads x.  Inputs are
    centered with `x_mean` / `c_mean` before entering the network.
    """

    def __init__(self, latent_sizes, obs_size, context_size=0, x_mean=None, c_mean=None):
        latent_sizes = tuple(int(s) for s in latent_sizes)
        self.latent_sizes = latent_sizes
        self.obs_size = int(obs_size)
        self.context_size = int(context_size)
        names = tuple(f"h{i}" for i in range(len(latent_sizes)))
        self.latent_names = names
        n = len(names)
        if not context_size:
            layers = [LayerSpec(names[-1], latent_sizes[-1], ("x",))]
            for i in reversed(range(n - 1)):
                layers.append(LayerSpec(names[i], latent_sizes[i], (names[i + 1],)))
            inputs = {"x": self.obs_size}
        else:
            layers = []
            for i in range(n):
                src = (names[i - 1],) if i else ()
                src = src + ("c",) + (("x",) if i == n - 1 else ())
                layers.append(LayerSpec(names[i], latent_sizes[i], src))
            inputs = {"c": self.context_size, "x": self.obs_size}
        self.net = BernoulliNet(layers, inputs)
        self.x_mean = np.zeros(self.obs_size) if x_mean is None else np.asarray(x_mean, dtype=np.float64)
        self.c_mean = np.zeros(self.context_size) if c_mean is None else np.asarray(c_mean, dtype=np.float64)

    @property
    def params(self):
        return self.net.params

    def param_shapes(self):
        return self.net.param_shapes()

    def init_params(self, rng, std=0.01):
        for k, p in self.params.items():
            p[...] = 0.0 if k.endswith(".b") else rng.normal(0.0, std, size=p.shape)
        return self

    def _inputs(self, x, context):
        xs = _as_rows(x, self.obs_size, "x")
        values = {"x": xs - self.x_mean}
        if self.context_size:
            if context is None:
                raise ValueError("this proposal needs a context")
            c = _as_rows(context, self.context_size, "context")
            if c.shape[0] != xs.shape[0]:
                c = np.broadcast_to(c, (xs.shape[0], self.context_size))
            values["c"] = c - self.c_mean
        elif context is not None:
            raise ValueError("this proposal does not take a context")
        return values

    def _values(self, x, h, context):
        hv, single = self._stack(h)
        n = hv[self.latent_names[0]].shape[0]
        xs = _as_rows(x, self.obs_size, "x")
        if xs.shape[0] != n:
            xs = np.broadcast_to(xs, (n, self.obs_size))
        values = self._inputs(xs, context)
        values.update(hv)
        return values, single

    def sample(self, x, rng=None, context=None, u=None):
        """Draw h ~ Q(h|x); returns ``(h, log Q(h|x))``."""
        single = np.asarray(x).ndim == 1
        values = self._inputs(x, context)
        n = values["x"].shape[0]
        sizes = {s.name: s.size for s in self.net.layers}
        if u is None:
            u = draw_uniforms(rng, n, sizes)
        values = self.net.sample(values, split_uniforms(u, sizes))
        logq = self.net.log_prob(values)
        return self._unstack(values, single), (float(logq[0]) if single else logq)

    def log_q(self, x, h, context=None):
        values, single = self._values(x, h, context)
        lq = self.net.log_prob(values)
        return float(lq[0]) if single else lq

    def grad_log_q(self, x, h, context=None, weights=None):
        values, _ = self._values(x, h, context)
        return self.net.grad_log_prob(values, weights)

    def per_sample_grad(self, x, h, context=None):
        values, _ = self._values(x, h, context)
        return self.net.per_sample_grad(values)


class PriorProposal(_LatentStackMixin):
    """Uses the model prior P(h|c) as the proposal (the classic SOP setup).

    `params` exposes the model's latent-layer arrays themselves, so updating
    them updates the model.
    """

    def __init__(self, model):
        self.model = model
        self.net = model.net
        self.latent_names = model.latent_names
        self.latent_sizes = model.latent_sizes

    @property
    def params(self):
        return {k: self.model.params[k] for k in self.model.param_names("prior")}

    def param_shapes(self):
        return self.model.net.param_shapes(self.model.latent_names)

    def sample(self, x, rng=None, context=None, u=None):
        single = np.asarray(x).ndim == 1
        n = _as_rows(x, self.model.obs_size, "x").shape[0]
        if context is not None and np.asarray(context).ndim == 2 and np.asarray(context).shape[0] != n:
            raise ValueError("context and x disagree on the number of rows")
        h, _ = self.model.sample_prior(rng, context=context, n=n, u=u)
        if single:
            h = tuple(v[0] for v in h)
        return h, self.model.log_prior(h, context)

    def log_q(self, x, h, context=None):
        return self.model.log_prior(h, context)

    def grad_log_q(self, x, h, context=None, weights=None):
        return self.model.grad_log_joint(None, h, context, weights, part="prior")

    def per_sample_grad(self, x, h, context=None):
        return self.model.per_sample_grad(None, h, context, part="prior")
