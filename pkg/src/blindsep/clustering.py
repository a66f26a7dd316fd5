"""Cosine K-means over bin embeddings, binary masks, and source reconstruction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import DEFAULT_HOP, DEFAULT_WINDOW_LEN, Spectrogram, Waveform, istft, log_magnitude, stft
from .embedding import bin_mask, normalize_rows
from .network import NetworkParameters, forward

MAX_LLOYD_ITERS = 100


@dataclass
class ClusterAssignment:
    labels: np.ndarray          # one label per retained bin
    centroids: np.ndarray       # (C, D), unit rows
    total_cost: float
    cost_history: list[float] = field(default_factory=list)


def _lloyd_once(x: np.ndarray, n_clusters: int, rng: np.random.Generator) -> ClusterAssignment:
    """One cosine K-means run from a random point-init; Lloyd until stable."""
    n = x.shape[0]
    centroids = x[rng.choice(n, size=n_clusters, replace=False)].copy()
    labels = np.full(n, -1)
    history: list[float] = []
    for _ in range(MAX_LLOYD_ITERS):
        sims = x @ centroids.T
        new_labels = np.argmax(sims, axis=1)
        # empty clusters re-seed from the point farthest from its centroid
        dists = 1.0 - sims[np.arange(n), new_labels]
        for c in range(n_clusters):
            if not np.any(new_labels == c):
                far = int(np.argmax(dists))
                centroids[c] = x[far]
                new_labels[far] = c
                dists[far] = -np.inf
        cost = float(np.sum(1.0 - (x * centroids[new_labels]).sum(axis=1)))
        history.append(cost)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(n_clusters):
            members = x[labels == c]
            if members.size:
                mean = members.mean(axis=0)
                norm = np.linalg.norm(mean)
                if norm > 1e-12:
                    centroids[c] = mean / norm
    return ClusterAssignment(labels=labels, centroids=centroids,
                             total_cost=history[-1], cost_history=history)


def kmeans_cosine(v: np.ndarray, n_clusters: int, restarts: int = 10,
                  seed: int = 0) -> ClusterAssignment:
    """Best of `restarts` cosine K-means runs by total sum of distances."""
    x = normalize_rows(np.asarray(v, dtype=np.float64))
    if x.shape[0] < n_clusters:
        raise ValueError("fewer retained bins than clusters")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        run = _lloyd_once(x, n_clusters, rng)
        if best is None or run.total_cost < best.total_cost:
            best = run
    return best


def masks_from_assignment(assignment: ClusterAssignment, keep: np.ndarray,
                          shape: tuple[int, int], excluded: str = "zero",
                          v: np.ndarray | None = None) -> np.ndarray:
    """Scatter retained-bin labels to (C, T, F) binary masks.

    Excluded bins get no mask by default; excluded="nearest" assigns them to
    their embedding's nearest centroid (requires the full embedding matrix v).
    """
    keep_flat = np.asarray(keep).ravel()
    if assignment.labels.size != int(np.count_nonzero(keep_flat)):
        raise ValueError("label count does not match retained-bin count")
    if keep_flat.size != shape[0] * shape[1]:
        raise ValueError("keep mask does not match shape")
    n_clusters = assignment.centroids.shape[0]
    full = np.full(keep_flat.size, -1)
    full[keep_flat] = assignment.labels
    if excluded == "nearest":
        if v is None:
            raise ValueError("nearest policy needs the embedding matrix")
        rest = normalize_rows(np.asarray(v)[~keep_flat])
        full[~keep_flat] = np.argmax(rest @ assignment.centroids.T, axis=1)
    elif excluded != "zero":
        raise ValueError(f"unknown excluded-bin policy: {excluded}")
    masks = np.zeros((n_clusters,) + tuple(shape))
    for c in range(n_clusters):
        masks[c] = (full == c).reshape(shape)
    return masks


def apply_mask(x: Spectrogram, bm: np.ndarray) -> Spectrogram:
    """Elementwise product of the spectrogram with a binary mask."""
    bm = np.asarray(bm)
    if bm.shape != x.bins.shape:
        raise ValueError("mask shape mismatch")
    return Spectrogram(bins=x.bins * bm, window_len=x.window_len, hop=x.hop,
                       analysis_window=x.analysis_window, n_samples=x.n_samples,
                       sample_rate=x.sample_rate)


def separate(params: NetworkParameters, mixture: Waveform,
             ivectors: np.ndarray | None = None, n_sources: int = 2,
             threshold_db: float = -40.0, restarts: int = 10, seed: int = 0,
             excluded: str = "zero") -> tuple[list[Waveform], np.ndarray]:
    """Full separation chain: stft -> features -> embed -> cluster -> mask -> istft.

    Framing and input normalization are taken from the model (params.meta and
    the norm_mean/norm_std tensors) so a trained network is self-contained.
    """
    from .dsp import NormalizationStats

    window_len = int(params.meta.get("window_len", DEFAULT_WINDOW_LEN))
    hop = int(params.meta.get("hop", DEFAULT_HOP))
    spec = stft(mixture, window_len=window_len, hop=hop)
    stats = None
    if "norm_mean" in params.tensors:
        stats = NormalizationStats(mean=params.tensors["norm_mean"],
                                   std=params.tensors["norm_std"])
    feats = log_magnitude(spec, stats)
    keep = bin_mask(spec, threshold_db)
    v = forward(params, feats, ivectors)
    assignment = kmeans_cosine(v[keep.ravel()], n_sources, restarts=restarts, seed=seed)
    masks = masks_from_assignment(assignment, keep, spec.bins.shape,
                                  excluded=excluded, v=v)
    estimates = [istft(apply_mask(spec, masks[c])) for c in range(n_sources)]
    return estimates, masks
