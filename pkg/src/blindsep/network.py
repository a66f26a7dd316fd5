"""Bidirectional recurrent embedding network with in-repo reverse-mode gradients.

The network maps a sequence of feature frames (optionally concatenated with a
per-mixture block of stacked i-vectors) to one D-dimensional unit embedding
per time-frequency bin: a stack of bidirectional GRU layers, a linear output
layer of width F*D, and row normalization.

No ML framework is used; gradients are accumulated by hand and checked against
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import normalize_rows


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class NetworkParameters:
    """Weights plus the hyperparameters and input statistics they depend on."""

    tensors: dict[str, np.ndarray]
    n_freq: int
    embed_dim: int
    hidden: int
    n_layers: int = 2
    n_speakers: int = 0
    ivec_dim: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.n_freq + self.n_speakers * self.ivec_dim

    @property
    def output_dim(self) -> int:
        return self.n_freq * self.embed_dim

    def copy(self) -> "NetworkParameters":
        return NetworkParameters(
            tensors={k: v.copy() for k, v in self.tensors.items()},
            n_freq=self.n_freq, embed_dim=self.embed_dim, hidden=self.hidden,
            n_layers=self.n_layers, n_speakers=self.n_speakers,
            ivec_dim=self.ivec_dim, meta=dict(self.meta))


def _layer_names(layer: int, direction: str) -> dict[str, str]:
    p = f"l{layer}_{direction}"
    return {"W": f"{p}_W", "U_zr": f"{p}_U_zr", "U_c": f"{p}_U_c", "b": f"{p}_b"}


def init_params(rng: np.random.Generator, n_freq: int, embed_dim: int, hidden: int,
                n_layers: int = 2, n_speakers: int = 0, ivec_dim: int = 0) -> NetworkParameters:
    """Seeded Gaussian init, scaled by 1/sqrt(fan_in)."""
    tensors: dict[str, np.ndarray] = {}
    in_dim = n_freq + n_speakers * ivec_dim
    layer_in = in_dim
    for layer in range(n_layers):
        for direction in ("fw", "bw"):
            names = _layer_names(layer, direction)
            tensors[names["W"]] = rng.standard_normal((layer_in, 3 * hidden)) / np.sqrt(layer_in)
            tensors[names["U_zr"]] = rng.standard_normal((hidden, 2 * hidden)) / np.sqrt(hidden)
            tensors[names["U_c"]] = rng.standard_normal((hidden, hidden)) / np.sqrt(hidden)
            tensors[names["b"]] = np.zeros(3 * hidden)
        layer_in = 2 * hidden
    tensors["out_W"] = rng.standard_normal((layer_in, n_freq * embed_dim)) / np.sqrt(layer_in)
    tensors["out_b"] = np.zeros(n_freq * embed_dim)
    return NetworkParameters(tensors=tensors, n_freq=n_freq, embed_dim=embed_dim,
                             hidden=hidden, n_layers=n_layers,
                             n_speakers=n_speakers, ivec_dim=ivec_dim)


def make_input(features: np.ndarray, ivectors: np.ndarray | None) -> np.ndarray:
    """Per-frame network input: feature row, optionally + flattened i-vector block.

    The i-vector block is identical for every frame of one mixture.
    """
    feats = np.asarray(features, dtype=np.float64)
    if ivectors is None:
        return feats
    flat = np.asarray(ivectors, dtype=np.float64).ravel()
    return np.concatenate([feats, np.tile(flat, (feats.shape[0], 1))], axis=1)


def _gru_direction(x: np.ndarray, w: np.ndarray, u_zr: np.ndarray, u_c: np.ndarray,
                   b: np.ndarray, reverse: bool):
    """Run one GRU direction over x (T, B, in); returns hidden states and cache."""
    t_len, batch, _ = x.shape
    hidden = u_c.shape[0]
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    h = np.zeros((batch, hidden))
    hs = np.zeros((t_len, batch, hidden))
    cache = [None] * t_len
    xw = x @ w + b  # precompute input projections for all steps
    for t in order:
        a_zr = xw[t, :, : 2 * hidden] + h @ u_zr
        z = _sigmoid(a_zr[:, :hidden])
        r = _sigmoid(a_zr[:, hidden:])
        rh = r * h
        c = np.tanh(xw[t, :, 2 * hidden :] + rh @ u_c)
        h_new = (1.0 - z) * h + z * c
        cache[t] = (h, z, r, c, rh)
        h = h_new
        hs[t] = h_new
    return hs, cache


def _gru_direction_backward(x: np.ndarray, dh_out: np.ndarray, w, u_zr, u_c,
                            cache, reverse: bool):
    """Backprop one GRU direction; returns dx and parameter gradients."""
    t_len, batch, hidden = dh_out.shape
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    du_zr = np.zeros_like(u_zr)
    du_c = np.zeros_like(u_c)
    db = np.zeros(3 * hidden)
    dh_next = np.zeros((batch, hidden))
    order = range(t_len) if reverse else range(t_len - 1, -1, -1)
    for t in order:
        h_prev, z, r, c, rh = cache[t]
        dh = dh_out[t] + dh_next
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)
        dac = dc * (1.0 - c * c)
        du_c += rh.T @ dac
        drh = dac @ u_c.T
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        da_zr = np.concatenate([daz, dar], axis=1)
        du_zr += h_prev.T @ da_zr
        dh_prev = dh_prev + da_zr @ u_zr.T
        da = np.concatenate([da_zr, dac], axis=1)
        dw += x[t].T @ da
        db += da.sum(axis=0)
        dx[t] = da @ w.T
        dh_next = dh_prev
    return dx, dw, du_zr, du_c, db


def forward_cached(params: NetworkParameters, x: np.ndarray):
    """Forward pass over a batch of sequences x (T, B, input_dim).

    Returns pre-normalization outputs (T, B, F*D) and the cache for backward.
    """
    if x.shape[2] != params.input_dim:
        raise ValueError(
            f"dimension mismatch: input width {x.shape[2]}, expected {params.input_dim}")
    caches = []
    layer_in = x
    for layer in range(params.n_layers):
        outs = []
        layer_cache = []
        for direction, reverse in (("fw", False), ("bw", True)):
            names = _layer_names(layer, direction)
            hs, cache = _gru_direction(
                layer_in, params.tensors[names["W"]], params.tensors[names["U_zr"]],
                params.tensors[names["U_c"]], params.tensors[names["b"]], reverse)
            outs.append(hs)
            layer_cache.append((layer_in, cache))
        caches.append(layer_cache)
        layer_in = np.concatenate(outs, axis=2)
    pre = layer_in @ params.tensors["out_W"] + params.tensors["out_b"]
    caches.append(layer_in)
    return pre, caches


def backward(params: NetworkParameters, caches, dpre: np.ndarray) -> dict[str, np.ndarray]:
    """Backprop dpre (T, B, F*D) through the network; returns gradients by tensor name."""
    grads: dict[str, np.ndarray] = {}
    last_hidden = caches[-1]
    t_len, batch, _ = dpre.shape
    flat_d = dpre.reshape(t_len * batch, -1)
    flat_h = last_hidden.reshape(t_len * batch, -1)
    grads["out_W"] = flat_h.T @ flat_d
    grads["out_b"] = flat_d.sum(axis=0)
    dlayer = (flat_d @ params.tensors["out_W"].T).reshape(t_len, batch, -1)
    hidden = params.hidden
    for layer in range(params.n_layers - 1, -1, -1):
        layer_cache = caches[layer]
        dx_total = None
        for idx, (direction, reverse) in enumerate((("fw", False), ("bw", True))):
            names = _layer_names(layer, direction)
            layer_in, cache = layer_cache[idx]
            dh_out = dlayer[:, :, idx * hidden : (idx + 1) * hidden]
            dx, dw, du_zr, du_c, db = _gru_direction_backward(
                layer_in, dh_out, params.tensors[names["W"]],
                params.tensors[names["U_zr"]], params.tensors[names["U_c"]],
                cache, reverse)
            grads[names["W"]] = dw
            grads[names["U_zr"]] = du_zr
            grads[names["U_c"]] = du_c
            grads[names["b"]] = db
            dx_total = dx if dx_total is None else dx_total + dx
        dlayer = dx_total
    return grads


def forward(params: NetworkParameters, features, ivectors: np.ndarray | None = None) -> np.ndarray:
    """Map one mixture to its (N, D) unit-row embedding matrix."""
    rows = features.rows if hasattr(features, "rows") else np.asarray(features)
    x = make_input(rows, ivectors)[:, None, :]
    pre, _ = forward_cached(params, x)
    t_len = rows.shape[0]
    u = pre[:, 0, :].reshape(t_len * params.n_freq, params.embed_dim)
    return normalize_rows(u)


class Adam:
    """Adam optimizer over a named-tensor dict, with snapshot/restore support."""

    def __init__(self, tensors: dict[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensors[name] -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def snapshot(self) -> dict:
        return {"t": self.t, "lr": self.lr,
                "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}

    def restore(self, snap: dict) -> None:
        self.t = snap["t"]
        self.lr = snap["lr"]
        self.m = {k: v.copy() for k, v in snap["m"].items()}
        self.v = {k: v.copy() for k, v in snap["v"].items()}
