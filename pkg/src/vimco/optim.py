import numpy as np


class Adam:
    """Adam over a dict of arrays, updated in place.

    One instance per parameter group, since the step count drives the bias
    correction.  ``ascent=True`` moves along the gradient (the estimators
    return ascent directions on the bound).
    """

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads, lr=None, ascent=True):
        lr = self.lr if lr is None else lr
        for k, g in grads.items():
            if k not in params:
                raise KeyError(f"gradient for unknown parameter {k!r}")
            if np.shape(g) != params[k].shape:
                raise ValueError(f"{k}: gradient shape {np.shape(g)} != parameter shape {params[k].shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        sign = 1.0 if ascent else -1.0
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] *= self.beta1
            self.m[k] += (1.0 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1.0 - self.beta2) * (g * g)
            params[k] += sign * (lr / bc1) * self.m[k] / (np.sqrt(self.v[k] / bc2) + self.eps)

    def state(self, prefix):
        out = {f"{prefix}.m.{k}": v for k, v in self.m.items()}
        out.update({f"{prefix}.v.{k}": v for k, v in self.v.items()})
        out[f"{prefix}.t"] = np.array(float(self.t))
        return out

    def load_state(self, tensors, prefix):
        self.t = int(tensors.get(f"{prefix}.t", 0))
        for key, v in tensors.items():
            if key.startswith(f"{prefix}.m."):
                self.m[key[len(prefix) + 3:]] = np.array(v)
            elif key.startswith(f"{prefix}.v."):
                self.v[key[len(prefix) + 3:]] = np.array(v)
