"""Conditional affine-coupling flow over return vectors.

A stack of coupling layers, each leaving the masked components of its input
untouched and transforming the rest by an input- and condition-dependent
affine map.  The Jacobian of each layer is triangular, so the exact
log-density is the base-normal log-density plus the sum of the scale
outputs.  Masks alternate between consecutive layers so every component is
transformed.

Everything is plain numpy with hand-written reverse-mode gradients; the
gradients are certified against central finite differences in the test
suite before the trainer relies on them.
"""

from __future__ import annotations

import json
import math
import warnings

import numpy as np

from .distributions import ReturnDistribution

CHECKPOINT_VERSION = 1
SCALE_FLOOR = 1e-8


class FlowError(RuntimeError):
    """Non-finite activations/losses or a corrupt checkpoint."""


def one_hot(index: int, dim: int) -> np.ndarray:
    """Encoding of a local joint action as a unit basis vector."""
    if not 0 <= index < dim:
        raise ValueError(f"index {index} out of range for one-hot of size {dim}")
    v = np.zeros(dim)
    v[index] = 1.0
    return v


def alternating_masks(dim: int, n_layers: int) -> np.ndarray:
    """Binary masks (1 = pass-through) alternating so all components transform."""
    if dim < 2:
        raise ValueError("coupling masks need at least 2 components")
    masks = np.zeros((n_layers, dim))
    for layer in range(n_layers):
        for k in range(dim):
            masks[layer, k] = 1.0 if (k + layer) % 2 == 0 else 0.0
    return masks


def _init_mlp(sizes, rng) -> list[list[np.ndarray]]:
    weights = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = rng.normal(scale=1.0 / math.sqrt(fan_in), size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        weights.append([w, b])
    return weights


def _mlp_forward(weights, x):
    hs = [x]
    h = x
    for w, b in weights[:-1]:
        h = np.tanh(h @ w.T + b)
        hs.append(h)
    w, b = weights[-1]
    return h @ w.T + b, hs


def _mlp_backward(weights, hs, d_out):
    grads = [None] * len(weights)
    w, _ = weights[-1]
    grads[-1] = (d_out.T @ hs[-1], d_out.sum(axis=0))
    d = d_out @ w
    for li in range(len(weights) - 2, -1, -1):
        h_out = hs[li + 1]
        d = d * (1.0 - h_out * h_out)
        w, _ = weights[li]
        grads[li] = (d.T @ hs[li], d.sum(axis=0))
        d = d @ w
    return d, grads


class CouplingLayer:
    """One affine coupling step with condition-aware scale and shift networks.

    The scale output is squashed by tanh and multiplied by a learnable
    scalar, keeping exp(s) bounded during training.
    """

    def __init__(self, dim, cond_dim, hidden_units, hidden_layers, mask, rng):
        sizes = [dim + cond_dim] + [hidden_units] * hidden_layers + [dim]
        self.dim = dim
        self.mask = np.asarray(mask, dtype=np.float64)
        self.s_weights = _init_mlp(sizes, rng)
        self.t_weights = _init_mlp(sizes, rng)
        self.s_scale = np.array(1.0)

    def _nets(self, masked_input, cond):
        inp = np.concatenate([masked_input, cond], axis=1)
        inv = 1.0 - self.mask
        s_pre, s_hs = _mlp_forward(self.s_weights, inp)
        s_t = np.tanh(s_pre)
        s = s_t * self.s_scale * inv
        t_pre, t_hs = _mlp_forward(self.t_weights, inp)
        t = t_pre * inv
        return inp, s_hs, s_t, s, t_hs, t

    def forward(self, x, cond, cache=None):
        inv = 1.0 - self.mask
        inp, s_hs, s_t, s, t_hs, t = self._nets(x * self.mask, cond)
        es = np.exp(s)
        y = self.mask * x + inv * (x * es + t)
        log_det = s.sum(axis=1)
        if cache is not None:
            cache.update(x=x, s_hs=s_hs, s_t=s_t, es=es, t_hs=t_hs)
        return y, log_det

    def inverse(self, y, cond):
        inv = 1.0 - self.mask
        _, _, _, s, _, t = self._nets(y * self.mask, cond)
        return self.mask * y + inv * (y - t) * np.exp(-s)

    def backward(self, d_y, d_logdet, cache):
        inv = 1.0 - self.mask
        x, s_t, es = cache["x"], cache["s_t"], cache["es"]

        d_t = d_y * inv
        d_s = d_y * inv * x * es + d_logdet[:, None] * inv
        d_x = d_y * (self.mask + inv * es)

        d_s_scale = np.asarray((d_s * s_t).sum())
        d_s_pre = d_s * self.s_scale * (1.0 - s_t * s_t)
        d_inp_s, s_grads = _mlp_backward(self.s_weights, cache["s_hs"], d_s_pre)
        d_inp_t, t_grads = _mlp_backward(self.t_weights, cache["t_hs"], d_t)

        d_inp = d_inp_s + d_inp_t
        d_x = d_x + d_inp[:, : self.dim] * self.mask
        return d_x, (s_grads, t_grads, d_s_scale)


class Adam:
    """Standard Adam update over the model's named parameter buffers."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params}
        self.v = {name: np.zeros_like(p) for name, p in params}

    def step(self, params, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in params:
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1**self.t)
            v_hat = self.v[name] / (1 - b2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class FlowModel:
    """Stack of conditional coupling layers over normalised return vectors.

    Inputs are shifted/scaled per objective before entering the stack (raw
    power values are ~1e7 W, which no sane network should see); the
    normalisation Jacobian is accounted for in `log_prob`.
    """

    def __init__(self, dim=2, cond_dim=1, n_layers=8, hidden_units=30, hidden_layers=1, seed=0):
        if n_layers < 1:
            raise ValueError("need at least one coupling layer")
        rng = np.random.default_rng(seed)
        masks = alternating_masks(dim, n_layers)
        self.dim = dim
        self.cond_dim = cond_dim
        self.n_layers = n_layers
        self.hidden_units = hidden_units
        self.hidden_layers = hidden_layers
        self.layers = [
            CouplingLayer(dim, cond_dim, hidden_units, hidden_layers, masks[i], rng)
            for i in range(n_layers)
        ]
        self.norm_shift = np.zeros(dim)
        self.norm_scale = np.ones(dim)

    # -- shape plumbing ----------------------------------------------------

    def _prep(self, x, cond):
        x = np.asarray(x, dtype=np.float64)
        cond = np.asarray(cond, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x.reshape(1, -1)
        if cond.ndim == 1:
            cond = np.broadcast_to(cond, (len(x), cond.shape[0]))
        if x.shape[1] != self.dim or cond.shape[1] != self.cond_dim:
            raise FlowError(
                f"expected ({self.dim},)-vectors with ({self.cond_dim},)-conditions, "
                f"got {x.shape} and {cond.shape}"
            )
        return x, cond, single

    def _normalize(self, x):
        return (x - self.norm_shift) / self.norm_scale

    def _denormalize(self, z):
        return z * self.norm_scale + self.norm_shift

    # -- core maps ---------------------------------------------------------

    def forward(self, x, cond):
        """Map returns to latents; log_det is the coupling-stack term only."""
        x, cond, single = self._prep(x, cond)
        h = self._normalize(x)
        log_det = np.zeros(len(h))
        for layer in self.layers:
            h, ld = layer.forward(h, cond)
            log_det = log_det + ld
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(log_det))):
            raise FlowError("non-finite activations in forward pass")
        if single:
            return h[0], float(log_det[0])
        return h, log_det

    def inverse(self, z, cond):
        """Map latents back to (denormalised) returns."""
        z, cond, single = self._prep(z, cond)
        h = z
        for layer in reversed(self.layers):
            h = layer.inverse(h, cond)
        x = self._denormalize(h)
        if not np.all(np.isfinite(x)):
            raise FlowError("non-finite values in inverse pass")
        return x[0] if single else x

    def log_prob(self, x, cond):
        """Exact log-density: base normal at the latent plus all Jacobian terms."""
        x2, cond2, single = self._prep(x, cond)
        z, log_det = self.forward(x2, cond2)
        base = -0.5 * (z * z).sum(axis=1) - 0.5 * self.dim * math.log(2 * math.pi)
        lp = base + log_det - np.log(self.norm_scale).sum()
        return float(lp[0]) if single else lp

    def sample(self, cond, n: int, seed=None) -> ReturnDistribution:
        """Draw n returns for one condition: seeded latents through the inverse map."""
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n, self.dim))
        return ReturnDistribution(self.inverse(z, cond))

    # -- training ----------------------------------------------------------

    def parameters(self):
        out = []
        for li, layer in enumerate(self.layers):
            for ni, (w, b) in enumerate(layer.s_weights):
                out.append((f"layer{li}.s.W{ni}", w))
                out.append((f"layer{li}.s.b{ni}", b))
            for ni, (w, b) in enumerate(layer.t_weights):
                out.append((f"layer{li}.t.W{ni}", w))
                out.append((f"layer{li}.t.b{ni}", b))
            out.append((f"layer{li}.s_scale", layer.s_scale))
        return out

    def nll_and_grads(self, x, cond):
        """Mean negative log-likelihood of the batch and its parameter gradients."""
        x, cond, _ = self._prep(x, cond)
        batch = len(x)

        h = self._normalize(x)
        caches = []
        log_det = np.zeros(batch)
        for layer in self.layers:
            cache = {}
            h, ld = layer.forward(h, cond, cache)
            caches.append(cache)
            log_det = log_det + ld
        z = h

        loss = (
            0.5 * (z * z).sum() / batch
            - log_det.sum() / batch
            + 0.5 * self.dim * math.log(2 * math.pi)
            + np.log(self.norm_scale).sum()
        )
        if not np.isfinite(loss):
            raise FlowError(
                f"non-finite loss {loss}; z range [{np.nanmin(z)}, {np.nanmax(z)}], "
                f"log_det range [{np.nanmin(log_det)}, {np.nanmax(log_det)}]"
            )

        d_h = z / batch
        d_logdet = np.full(batch, -1.0 / batch)
        grads: dict[str, np.ndarray] = {}
        for li in range(self.n_layers - 1, -1, -1):
            d_h, (s_grads, t_grads, d_scale) = self.layers[li].backward(
                d_h, d_logdet, caches[li]
            )
            for ni, (gw, gb) in enumerate(s_grads):
                grads[f"layer{li}.s.W{ni}"] = gw
                grads[f"layer{li}.s.b{ni}"] = gb
            for ni, (gw, gb) in enumerate(t_grads):
                grads[f"layer{li}.t.W{ni}"] = gw
                grads[f"layer{li}.t.b{ni}"] = gb
            grads[f"layer{li}.s_scale"] = d_scale
        return float(loss), grads

    def train_step(self, x, cond, opt: Adam) -> float:
        """One gradient step on mean NLL; returns the pre-step loss."""
        loss, grads = self.nll_and_grads(x, cond)
        opt.step(self.parameters(), grads)
        return loss

    def fit_normalization(self, samples):
        """Set per-objective shift/scale to the sample mean/std (std floored)."""
        arr = np.asarray(samples, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 2:
            raise ValueError("need at least 2 samples to fit normalization")
        shift = arr.mean(axis=0)
        scale = arr.std(axis=0)
        if np.any(scale < SCALE_FLOOR):
            warnings.warn(
                f"degenerate objective std {scale}; flooring at {SCALE_FLOOR}",
                RuntimeWarning,
                stacklevel=2,
            )
            scale = np.maximum(scale, SCALE_FLOOR)
        self.norm_shift = shift
        self.norm_scale = scale
        return shift, scale

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        """Versioned checkpoint with a probe batch for load-time verification."""
        meta = {
            "version": CHECKPOINT_VERSION,
            "dim": self.dim,
            "cond_dim": self.cond_dim,
            "n_layers": self.n_layers,
            "hidden_units": self.hidden_units,
            "hidden_layers": self.hidden_layers,
        }
        rng = np.random.default_rng(12345)
        probe_x = self._denormalize(rng.standard_normal((8, self.dim)))
        probe_cond = np.zeros((8, self.cond_dim))
        probe_cond[np.arange(8), rng.integers(0, self.cond_dim, 8)] = 1.0
        probe_logp = self.log_prob(probe_x, probe_cond)

        arrays = {name: arr for name, arr in self.parameters()}
        arrays["norm_shift"] = self.norm_shift
        arrays["norm_scale"] = self.norm_scale
        arrays["masks"] = np.stack([layer.mask for layer in self.layers])
        arrays["probe_x"] = probe_x
        arrays["probe_cond"] = probe_cond
        arrays["probe_logp"] = probe_logp
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "FlowModel":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta["version"] != CHECKPOINT_VERSION:
                raise FlowError(f"unsupported checkpoint version {meta['version']}")
            model = cls(
                dim=meta["dim"],
                cond_dim=meta["cond_dim"],
                n_layers=meta["n_layers"],
                hidden_units=meta["hidden_units"],
                hidden_layers=meta["hidden_layers"],
                seed=0,
            )
            for name, arr in model.parameters():
                arr[...] = data[name]
            model.norm_shift = data["norm_shift"]
            model.norm_scale = data["norm_scale"]
            masks = data["masks"]
            for layer, mask in zip(model.layers, masks):
                layer.mask = mask
            probe_logp = model.log_prob(data["probe_x"], data["probe_cond"])
            if not np.array_equal(probe_logp, data["probe_logp"]):
                raise FlowError("checkpoint failed probe verification after load")
        return model
