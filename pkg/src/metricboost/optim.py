"""SGD with momentum and ADAM, operating on named parameter dicts in place."""

import numpy as np

from .errors import InvalidArgument, NumericFailure

KINDS = ("sgd_momentum", "adam")


class Optimizer:
    """Single-owner update rule; moment buffers are keyed by parameter name.

    sgd_momentum:  v <- mu v + g;  p <- p - lr v
    adam:          bias-corrected moments, p <- p - lr m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(self, kind="adam", lr=1e-3, momentum=0.9,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        if kind not in KINDS:
            raise InvalidArgument(f"unknown optimizer kind {kind!r}")
        if lr <= 0:
            raise InvalidArgument("lr must be > 0")
        self.kind = kind
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.buffers = {}

    def step(self, params, grads):
        """One update over matching name -> array dicts; arrays mutate in place.

        All gradients are checked before any state is touched: a NaN/Inf
        gradient refuses the whole step and leaves parameters and buffers
        exactly as they were.
        """
        if set(params) != set(grads):
            raise InvalidArgument("params and grads must have identical keys")
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericFailure(f"non-finite gradient for {name!r}; step refused")
        self.t += 1
        if self.kind == "sgd_momentum":
            for name in params:
                vel = self.buffers.setdefault(name, {"vel": np.zeros_like(params[name])})["vel"]
                vel *= self.momentum
                vel += grads[name]
                params[name] -= self.lr * vel
        else:
            c1 = 1.0 - self.beta1 ** self.t
            c2 = 1.0 - self.beta2 ** self.t
            for name in params:
                buf = self.buffers.setdefault(
                    name,
                    {"m": np.zeros_like(params[name]), "v": np.zeros_like(params[name])},
                )
                m, v = buf["m"], buf["v"]
                m *= self.beta1
                m += (1.0 - self.beta1) * grads[name]
                v *= self.beta2
                v += (1.0 - self.beta2) * grads[name] ** 2
                params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        return {
            "kind": self.kind,
            "lr": self.lr,
            "momentum": self.momentum,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "buffers": {
                name: {k: arr.copy() for k, arr in buf.items()}
                for name, buf in self.buffers.items()
            },
        }

    @classmethod
    def from_state_dict(cls, state):
        opt = cls(
            kind=state["kind"], lr=state["lr"], momentum=state["momentum"],
            beta1=state["beta1"], beta2=state["beta2"], eps=state["eps"],
        )
        opt.t = int(state["t"])
        opt.buffers = {
            name: {k: np.array(arr, dtype=np.float64) for k, arr in buf.items()}
            for name, buf in state["buffers"].items()
        }
        return opt
