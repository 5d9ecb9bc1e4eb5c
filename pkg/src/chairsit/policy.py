"""Policy and value networks.

Every controller is a 2x64 tanh MLP. Subtask controllers use a Gaussian head
with fixed per-dim stddev over the 21 PD targets. The meta controller uses a
mixed head: a categorical over the subtask repertoire plus a 2-d Gaussian
walk-target offset whose log-density only counts when the walk subtask was
picked. The value function is a separate identical body with a scalar head.

Gradients are computed analytically (plain backprop through the tanh MLP);
the test suite checks them against central finite differences. Checkpoints
are a JSON manifest plus raw little-endian float32 arrays in declared order.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .features import layout_hash

HIDDEN = 64
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class HeadSpec:
    kind: str                      # gaussian | categorical | mixed
    dim: int = 0                   # gaussian action dim (mixed: target dim)
    n_classes: int = 0
    sigma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    walk_class: int = 0            # mixed: class whose target density counts
    labels: tuple = ()             # optional class labels (mixed/categorical)

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.kind == "gaussian":
            if self.dim <= 0 or len(self.sigma) != self.dim:
                raise ValueError("gaussian head needs dim and matching sigma")
        elif self.kind == "categorical":
            if self.n_classes < 2:
                raise ValueError("categorical head needs >= 2 classes")
        elif self.kind == "mixed":
            if self.n_classes < 2 or self.dim <= 0 or len(self.sigma) != self.dim:
                raise ValueError("mixed head needs classes, dim and sigma")
        else:
            raise ValueError(f"unknown head kind {self.kind!r}")
        if np.any(self.sigma <= 0) and len(self.sigma):
            raise ValueError("sigma must be positive")

    @property
    def out_dim(self) -> int:
        if self.kind == "gaussian":
            return self.dim
        if self.kind == "categorical":
            return self.n_classes
        return self.n_classes + self.dim

    @property
    def action_dim(self) -> int:
        """Width of the stored action vector in rollout buffers."""
        if self.kind == "gaussian":
            return self.dim
        if self.kind == "categorical":
            return 1
        return 1 + self.dim

    def to_json(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "n_classes": self.n_classes,
                "sigma": self.sigma.tolist(), "walk_class": self.walk_class,
                "labels": list(self.labels)}

    @staticmethod
    def from_json(d: dict) -> "HeadSpec":
        return HeadSpec(kind=d["kind"], dim=d["dim"], n_classes=d["n_classes"],
                        sigma=np.asarray(d["sigma"]), walk_class=d["walk_class"],
                        labels=tuple(d.get("labels", ())))


@dataclass
class ActionSample:
    action: np.ndarray
    log_prob: float
    aux: int | None = None         # chosen class for categorical/mixed heads


def gaussian_head(dim: int, sigma: float) -> HeadSpec:
    return HeadSpec(kind="gaussian", dim=dim, sigma=np.full(dim, float(sigma)))


def _orthogonal(rng: np.random.Generator, shape, gain: float, dtype) -> np.ndarray:
    a = rng.standard_normal(shape)
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    w = u if u.shape == shape else vt
    return (gain * w).astype(dtype)


class PolicyNet:
    """MLP policy + separate MLP value function over one observation space."""

    def __init__(self, obs_dim: int, head: HeadSpec,
                 rng: np.random.Generator | None = None,
                 dtype=np.float32, stage: str = "init"):
        self.obs_dim = obs_dim
        self.head = head
        self.dtype = np.dtype(dtype)
        self.stage = stage
        rng = rng or np.random.default_rng(0)
        g = math.sqrt(2.0)
        p = {}
        p["p_w1"] = _orthogonal(rng, (obs_dim, HIDDEN), g, self.dtype)
        p["p_b1"] = np.zeros(HIDDEN, self.dtype)
        p["p_w2"] = _orthogonal(rng, (HIDDEN, HIDDEN), g, self.dtype)
        p["p_b2"] = np.zeros(HIDDEN, self.dtype)
        p["p_w3"] = _orthogonal(rng, (HIDDEN, head.out_dim), 0.01, self.dtype)
        p["p_b3"] = np.zeros(head.out_dim, self.dtype)
        p["v_w1"] = _orthogonal(rng, (obs_dim, HIDDEN), g, self.dtype)
        p["v_b1"] = np.zeros(HIDDEN, self.dtype)
        p["v_w2"] = _orthogonal(rng, (HIDDEN, HIDDEN), g, self.dtype)
        p["v_b2"] = np.zeros(HIDDEN, self.dtype)
        p["v_w3"] = _orthogonal(rng, (HIDDEN, 1), 1.0, self.dtype)
        p["v_b3"] = np.zeros(1, self.dtype)
        self.params = p
        self.param_order = list(p.keys())
        self._sigma = self.head.sigma.astype(self.dtype)

    # ------------------------------------------------------------------
    # forward passes

    def _mlp(self, x, prefix):
        p = self.params
        h1 = np.tanh(x @ p[f"{prefix}_w1"] + p[f"{prefix}_b1"])
        h2 = np.tanh(h1 @ p[f"{prefix}_w2"] + p[f"{prefix}_b2"])
        out = h2 @ p[f"{prefix}_w3"] + p[f"{prefix}_b3"]
        return h1, h2, out

    def forward(self, s):
        """Head output and value for one observation (or a batch)."""
        x = np.asarray(s, dtype=self.dtype)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.obs_dim:
            raise ValueError(f"expected obs dim {self.obs_dim}, got {x.shape[1]}")
        _, _, out = self._mlp(x, "p")
        _, _, v = self._mlp(x, "v")
        if not (np.all(np.isfinite(out)) and np.all(np.isfinite(v))):
            raise FloatingPointError("non-finite network output")
        if squeeze:
            return out[0], float(v[0, 0])
        return out, v[:, 0]

    def value(self, s) -> float:
        return self.forward(s)[1]

    # ------------------------------------------------------------------
    # distributions

    def _gauss_lp(self, a, mu, sigma):
        z = (a - mu) / sigma
        return float(-0.5 * np.dot(z, z) - np.sum(np.log(sigma))
                     - 0.5 * len(sigma) * LOG_2PI)

    def _log_softmax(self, logits):
        m = logits.max()
        z = logits - m
        return z - math.log(np.exp(z).sum())

    def sample(self, s, rng: np.random.Generator) -> ActionSample:
        return self.sample_and_value(s, rng)[0]

    def sample_and_value(self, s, rng: np.random.Generator):
        """Draw an action and return the value estimate from the same pass."""
        out, v = self.forward(s)
        h = self.head
        if h.kind == "gaussian":
            a = out + self._sigma * rng.standard_normal(h.dim).astype(self.dtype)
            return ActionSample(a, self._gauss_lp(a, out, self._sigma)), v
        if h.kind == "categorical":
            ls = self._log_softmax(out)
            k = int(np.searchsorted(np.cumsum(np.exp(ls)), rng.random()))
            k = min(k, h.n_classes - 1)
            return ActionSample(np.array([k], dtype=self.dtype), float(ls[k]), aux=k), v
        logits, mu = out[:h.n_classes], out[h.n_classes:]
        ls = self._log_softmax(logits)
        k = int(np.searchsorted(np.cumsum(np.exp(ls)), rng.random()))
        k = min(k, h.n_classes - 1)
        tgt = mu + self._sigma * rng.standard_normal(h.dim).astype(self.dtype)
        lp = float(ls[k])
        if k == h.walk_class:
            lp += self._gauss_lp(tgt, mu, self._sigma)
        action = np.concatenate([[k], tgt]).astype(self.dtype)
        return ActionSample(action, lp, aux=k), v

    def log_prob(self, s, action) -> float:
        """Density/mass of a stored action under the current parameters."""
        return float(self.log_prob_batch(np.asarray(s)[None, :],
                                         np.asarray(action)[None, :])[0])

    def log_prob_batch(self, states, actions) -> np.ndarray:
        out, _ = self.forward(states)
        return self._lp_from_out(out, np.asarray(actions, dtype=self.dtype))[0]

    def _lp_from_out(self, out, actions):
        """Batched log-prob plus its gradient w.r.t. the head output."""
        h = self.head
        B = out.shape[0]
        if h.kind == "gaussian":
            z = (actions - out) / self._sigma
            lp = -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(self._sigma)) \
                - 0.5 * h.dim * LOG_2PI
            dlp_dout = z / self._sigma
            return lp, dlp_dout
        if h.kind == "categorical":
            ks = actions[:, 0].astype(int)
            m = out.max(axis=1, keepdims=True)
            z = out - m
            lse = np.log(np.exp(z).sum(axis=1))
            lp = z[np.arange(B), ks] - lse
            soft = np.exp(z - lse[:, None])
            dlp = -soft
            dlp[np.arange(B), ks] += 1.0
            return lp, dlp
        ks = actions[:, 0].astype(int)
        tgt = actions[:, 1:]
        logits, mu = out[:, :h.n_classes], out[:, h.n_classes:]
        m = logits.max(axis=1, keepdims=True)
        z = logits - m
        lse = np.log(np.exp(z).sum(axis=1))
        lp = z[np.arange(B), ks] - lse
        soft = np.exp(z - lse[:, None])
        dlogits = -soft
        dlogits[np.arange(B), ks] += 1.0
        zg = (tgt - mu) / self._sigma
        mask = (ks == h.walk_class).astype(out.dtype)
        lp = lp + mask * (-0.5 * np.sum(zg * zg, axis=1)
                          - np.sum(np.log(self._sigma)) - 0.5 * h.dim * LOG_2PI)
        dmu = mask[:, None] * (zg / self._sigma)
        return lp, np.concatenate([dlogits, dmu], axis=1)

    def deterministic_action(self, s) -> ActionSample:
        out, _ = self.forward(s)
        h = self.head
        if h.kind == "gaussian":
            return ActionSample(out.copy(), self._gauss_lp(out, out, self._sigma))
        if h.kind == "categorical":
            k = int(np.argmax(out))
            return ActionSample(np.array([k], dtype=self.dtype),
                                float(self._log_softmax(out)[k]), aux=k)
        logits, mu = out[:h.n_classes], out[h.n_classes:]
        k = int(np.argmax(logits))
        lp = float(self._log_softmax(logits)[k])
        if k == h.walk_class:
            lp += self._gauss_lp(mu, mu, self._sigma)
        return ActionSample(np.concatenate([[k], mu]).astype(self.dtype), lp, aux=k)

    # ------------------------------------------------------------------
    # gradients

    def forward_cached(self, states):
        x = np.asarray(states, dtype=self.dtype)
        h1p, h2p, out = self._mlp(x, "p")
        h1v, h2v, v = self._mlp(x, "v")
        return {"x": x, "h1p": h1p, "h2p": h2p, "out": out,
                "h1v": h1v, "h2v": h2v, "v": v[:, 0]}

    def backward(self, cache, d_out, d_value):
        """Parameter gradients given d(loss)/d(head output) and d(loss)/d(value)."""
        grads = {}

        def back(prefix, x, h1, h2, d):
            p = self.params
            grads[f"{prefix}_w3"] = h2.T @ d
            grads[f"{prefix}_b3"] = d.sum(axis=0)
            dh2 = d @ p[f"{prefix}_w3"].T
            dz2 = dh2 * (1.0 - h2 * h2)
            grads[f"{prefix}_w2"] = h1.T @ dz2
            grads[f"{prefix}_b2"] = dz2.sum(axis=0)
            dh1 = dz2 @ p[f"{prefix}_w2"].T
            dz1 = dh1 * (1.0 - h1 * h1)
            grads[f"{prefix}_w1"] = x.T @ dz1
            grads[f"{prefix}_b1"] = dz1.sum(axis=0)

        back("p", cache["x"], cache["h1p"], cache["h2p"],
             np.asarray(d_out, dtype=self.dtype))
        dv = np.asarray(d_value, dtype=self.dtype).reshape(-1, 1)
        back("v", cache["x"], cache["h1v"], cache["h2v"], dv)
        return [grads[name] for name in self.param_order]

    # ------------------------------------------------------------------
    # serialization

    def clone(self) -> "PolicyNet":
        other = PolicyNet(self.obs_dim, self.head, dtype=self.dtype, stage=self.stage)
        for k in self.param_order:
            other.params[k] = self.params[k].copy()
        return other

    def save(self, prefix) -> None:
        """Write <prefix>.json (manifest) and <prefix>.bin (raw arrays)."""
        manifest = {
            "obs_dim": self.obs_dim,
            "hidden": HIDDEN,
            "head": self.head.to_json(),
            "sigma": self.head.sigma.tolist(),
            "feature_layout": layout_hash(),
            "stage": self.stage,
            "dtype": self.dtype.name,
            "arrays": [[k, list(self.params[k].shape)] for k in self.param_order],
        }
        with open(f"{prefix}.json", "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
        with open(f"{prefix}.bin", "wb") as f:
            for k in self.param_order:
                f.write(np.ascontiguousarray(self.params[k], dtype="<f4").tobytes())

    @staticmethod
    def load(prefix) -> "PolicyNet":
        with open(f"{prefix}.json", encoding="utf-8") as f:
            manifest = json.load(f)
        if manifest["feature_layout"] != layout_hash():
            raise ValueError(
                "checkpoint was produced under a different feature layout; "
                "refusing to load it")
        head = HeadSpec.from_json(manifest["head"])
        net = PolicyNet(manifest["obs_dim"], head, stage=manifest["stage"],
                        dtype=np.dtype(manifest["dtype"]))
        raw = open(f"{prefix}.bin", "rb").read()
        off = 0
        for name, shape in manifest["arrays"]:
            n = int(np.prod(shape))
            arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shape)
            net.params[name] = arr.astype(net.dtype)
            off += 4 * n
        if off != len(raw):
            raise ValueError("checkpoint binary length does not match manifest")
        return net


class Adam:
    """Standard Adam on a PolicyNet's parameter list."""

    def __init__(self, net: PolicyNet, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.net = net
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(net.params[k]) for k in net.param_order}
        self.v = {k: np.zeros_like(net.params[k]) for k in net.param_order}

    def step(self, grads: list, max_grad_norm: float | None = None) -> float:
        gnorm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
        scale = 1.0
        if max_grad_norm is not None and gnorm > max_grad_norm and gnorm > 0:
            scale = max_grad_norm / gnorm
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, g in zip(self.net.param_order, grads):
            g = g * scale
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mh = self.m[k] / b1c
            vh = self.v[k] / b2c
            self.net.params[k] -= (self.lr * mh / (np.sqrt(vh) + self.eps)).astype(
                self.net.dtype)
        return gnorm
