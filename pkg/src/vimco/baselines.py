"""NVIL variance reduction: constant baseline, input-dependent baseline
network, and variance normalisation of the centered learning signal."""
import numpy as np

from .optim import Adam


class BaselineNet:
    """x -> w2 . tanh(W1 x + b1) + b2.

    The output layer starts at zero, so a fresh network predicts 0 for every
    input while the small random hidden weights still let it learn.
    """

    def __init__(self, n_in, n_hidden=100, rng=None, std=0.01):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_in = n_in
        self.params = {
            "W1": rng.normal(0.0, std, size=(n_hidden, n_in)),
            "b1": np.zeros(n_hidden),
            "w2": np.zeros(n_hidden),
            "b2": np.zeros(()),
        }

    def _hidden(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_in:
            raise ValueError(f"expected inputs of length {self.n_in}, got {x.shape[1]}")
        return x, np.tanh(x @ self.params["W1"].T + self.params["b1"])

    def predict(self, x):
        _, a = self._hidden(x)
        return a @ self.params["w2"] + self.params["b2"]

    def loss_and_grad(self, x, target):
        """0.5 * mean((target - predict(x))^2) and its gradient (descent direction)."""
        x, a = self._hidden(x)
        target = np.asarray(target, dtype=np.float64).reshape(-1)
        r = target - (a @ self.params["w2"] + self.params["b2"])
        n = len(r)
        loss = 0.5 * np.mean(r * r)
        d_out = -r / n
        d_pre = np.outer(d_out, self.params["w2"]) * (1.0 - a * a)
        grads = {
            "W1": d_pre.T @ x,
            "b1": d_pre.sum(axis=0),
            "w2": a.T @ d_out,
            "b2": np.array(d_out.sum()),
        }
        return loss, grads


class NvilBaseline:
    """Running state for the NVIL learning signal L - b(x) - b.

    `terms` reads the current (b, b(x), scale) without touching the state;
    `update` then folds the minibatch in.  Keeping the two apart means the
    baselines applied to a minibatch never depend on that minibatch's samples.
    """

    def __init__(self, n_in, n_hidden=100, alpha=0.9, lr=1e-3, rng=None):
        self.net = BaselineNet(n_in, n_hidden, rng)
        self.alpha = alpha
        self.b = 0.0
        self.v = 0.0
        self.opt = Adam(lr)

    def predict(self, x):
        return self.net.predict(x)

    def scale(self):
        return max(1.0, float(np.sqrt(self.v)))

    def terms(self, x):
        return self.b, self.predict(x), self.scale()

    def update(self, x, signal):
        """Returns (centered, normalized) signals computed with the pre-update state."""
        signal = np.asarray(signal, dtype=np.float64).reshape(-1)
        b, bx, scale = self.terms(x)
        centered = signal - bx - b
        normalized = centered / scale
        a = self.alpha
        resid_x = signal - bx
        self.b = a * self.b + (1 - a) * float(np.mean(resid_x))
        self.v = a * self.v + (1 - a) * float(np.var(resid_x))
        _, grads = self.net.loss_and_grad(x, signal - b)
        self.opt.step(self.net.params, grads, ascent=False)
        return centered, normalized

    def state(self, prefix="baseline"):
        out = {f"{prefix}.net.{k}": v for k, v in self.net.params.items()}
        out[f"{prefix}.b"] = np.array(self.b)
        out[f"{prefix}.v"] = np.array(self.v)
        out.update(self.opt.state(f"{prefix}.adam"))
        return out

    def load_state(self, tensors, prefix="baseline"):
        for k in self.net.params:
            self.net.params[k] = np.array(tensors[f"{prefix}.net.{k}"])
        self.b = float(tensors[f"{prefix}.b"])
        self.v = float(tensors[f"{prefix}.v"])
        self.opt.load_state(tensors, f"{prefix}.adam")
