"""Per-bin embedding targets and the permutation-independent affinity loss.

Embeddings are plain (N, D) float arrays with unit rows; targets are (N, C)
one-hot arrays. N indexes time-frequency bins in row-major (frame, bin) order.
"""

from __future__ import annotations

import numpy as np

from .dsp import Spectrogram

NORM_EPS = 1e-12


def normalize_rows(u: np.ndarray) -> np.ndarray:
    """Scale every row to unit L2 norm."""
    norms = np.sqrt(np.sum(u * u, axis=1, keepdims=True))
    return u / np.maximum(norms, NORM_EPS)


def normalize_rows_backward(u: np.ndarray, grad_v: np.ndarray) -> np.ndarray:
    """Gradient through row normalization: (g - (g.v)v) / |u| per row."""
    norms = np.maximum(np.sqrt(np.sum(u * u, axis=1, keepdims=True)), NORM_EPS)
    v = u / norms
    dots = np.sum(grad_v * v, axis=1, keepdims=True)
    return (grad_v - dots * v) / norms


def bin_mask(s: Spectrogram | np.ndarray, threshold_db: float = -40.0) -> np.ndarray:
    """Boolean (T, F) keep mask: magnitude within threshold_db of the utterance max."""
    mag = s.magnitude() if isinstance(s, Spectrogram) else np.abs(np.asarray(s))
    peak = mag.max() if mag.size else 0.0
    if peak <= 0.0:
        return np.zeros(mag.shape, dtype=bool)
    return mag >= peak * 10.0 ** (threshold_db / 20.0)


def build_targets(source_specs: list[Spectrogram], keep: np.ndarray | None = None) -> np.ndarray:
    """One-hot (N, C) dominance matrix: bin i belongs to the loudest source.

    Exact magnitude ties go to the lowest source index. Rows are produced for
    every bin; excluded bins are simply ignored by the loss via its keep mask.
    """
    if len(source_specs) < 2:
        raise ValueError("need at least two sources")
    shape = source_specs[0].bins.shape
    for s in source_specs[1:]:
        if s.bins.shape != shape:
            raise ValueError("source spectrogram shape mismatch")
    mags = np.stack([s.magnitude().ravel() for s in source_specs], axis=1)
    labels = np.argmax(mags, axis=1)
    n, c = mags.shape
    y = np.zeros((n, c))
    y[np.arange(n), labels] = 1.0
    return y


def _retained(v: np.ndarray, y: np.ndarray, keep: np.ndarray | None):
    if v.shape[0] != y.shape[0]:
        raise ValueError("embedding/target row count mismatch")
    if keep is None:
        return v, y
    flat = np.asarray(keep).ravel()
    if flat.size != v.shape[0]:
        raise ValueError("keep mask size mismatch")
    return v[flat], y[flat]


def affinity_loss(v: np.ndarray, y: np.ndarray, keep: np.ndarray | None = None) -> float:
    """Squared Frobenius distance between VV^T and YY^T on retained rows.

    Evaluated in the expanded form |V^T V|^2 - 2|V^T Y|^2 + |Y^T Y|^2 without
    materializing N x N. The Y-dependent terms are reduced over classes in
    sorted order, so any column permutation of Y gives the bit-identical value.
    """
    vr, yr = _retained(v, y, keep)
    vtv = vr.T @ vr
    term_v = float(np.sum(vtv * vtv))
    vty = vr.T @ yr
    per_class = np.sum(vty * vty, axis=0)
    counts = yr.sum(axis=0)
    term_vy = float(np.sum(np.sort(per_class)))
    term_y = float(np.sum(np.sort(counts * counts)))
    return term_v - 2.0 * term_vy + term_y


def affinity_loss_grad(u: np.ndarray, y: np.ndarray, keep: np.ndarray | None = None) -> np.ndarray:
    """Gradient of affinity_loss(normalize_rows(u), y) with respect to u.

    Retained rows get 4(V(V^T V) - Y(Y^T V)) pushed through the row
    normalization Jacobian; masked rows are exactly zero.
    """
    v = normalize_rows(u)
    vr, yr = _retained(v, y, keep)
    grad_vr = 4.0 * (vr @ (vr.T @ vr) - yr @ (yr.T @ vr))
    grad_v = np.zeros_like(v)
    if keep is None:
        grad_v[:] = grad_vr
    else:
        grad_v[np.asarray(keep).ravel()] = grad_vr
    return normalize_rows_backward(u, grad_v)
