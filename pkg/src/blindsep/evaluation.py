"""Separation and identification scoring: projection SDR, IBM, ID accuracy."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .dsp import Spectrogram, Waveform
from .speaker import identify

SDR_CAP = 100.0
SDR_FLOOR = -100.0


@dataclass
class SdrReport:
    per_source_sdr: list[float]
    mixture_sdr: list[float]
    improvements: list[float]
    mean_improvement: float
    permutation: tuple[int, ...]


@dataclass
class IdReport:
    accuracy: float
    confusion: dict[tuple[object, object], int]
    total: int


def sdr(estimate: Waveform, reference: Waveform) -> float:
    """Scale-invariant projection SDR in dB, capped to [-100, +100]."""
    n = min(len(estimate), len(reference))
    e = estimate.samples[:n]
    s = reference.samples[:n]
    ref_energy = float(np.dot(s, s))
    if ref_energy <= 0.0:
        raise ValueError("zero reference")
    if float(np.dot(e, e)) == 0.0:
        return SDR_FLOOR
    target = (np.dot(e, s) / ref_energy) * s
    target_energy = float(np.dot(target, target))
    noise = e - target
    noise_energy = float(np.dot(noise, noise))
    if target_energy == 0.0:
        return SDR_FLOOR
    if noise_energy <= target_energy * 10.0 ** (-SDR_CAP / 10.0):
        return SDR_CAP
    return float(np.clip(10.0 * np.log10(target_energy / noise_energy),
                         SDR_FLOOR, SDR_CAP))


def sdr_improvement(estimates: list[Waveform], references: list[Waveform],
                    mixture: Waveform) -> SdrReport:
    """Best estimate/reference pairing over all permutations, by mean SDR."""
    if len(estimates) != len(references):
        raise ValueError("estimate/reference count mismatch")
    n_src = len(references)
    table = np.array([[sdr(e, r) for r in references] for e in estimates])
    best_perm = None
    best_mean = -np.inf
    for perm in itertools.permutations(range(n_src)):
        mean = float(np.mean([table[perm[c], c] for c in range(n_src)]))
        if mean > best_mean:
            best_mean = mean
            best_perm = perm
    mixture_sdr = [sdr(mixture, r) for r in references]
    per_source = [float(table[best_perm[c], c]) for c in range(n_src)]
    improvements = [per_source[c] - mixture_sdr[c] for c in range(n_src)]
    return SdrReport(per_source_sdr=per_source, mixture_sdr=mixture_sdr,
                     improvements=improvements,
                     mean_improvement=float(np.mean(improvements)),
                     permutation=best_perm)


def ideal_binary_mask(sources: list[Spectrogram], keep: np.ndarray | None = None) -> np.ndarray:
    """(C, T, F) masks assigning every bin to its loudest source (ties: lowest index)."""
    shape = sources[0].bins.shape
    for s in sources[1:]:
        if s.bins.shape != shape:
            raise ValueError("shape mismatch")
    mags = np.stack([s.magnitude() for s in sources])
    labels = np.argmax(mags, axis=0)
    masks = np.stack([(labels == c).astype(float) for c in range(len(sources))])
    if keep is not None:
        masks *= np.asarray(keep, dtype=float)[None]
    return masks


def speaker_id_eval(models: list[tuple[object, np.ndarray]],
                    probes: list[tuple[np.ndarray, object]]) -> IdReport:
    """Cosine identification accuracy and confusion counts over labelled probes."""
    known = {speaker for speaker, _ in models}
    confusion: dict[tuple[object, object], int] = {}
    correct = 0
    for ivec, label in probes:
        if label not in known:
            raise ValueError(f"unknown probe label: {label}")
        pred = identify(models, ivec)
        confusion[(label, pred)] = confusion.get((label, pred), 0) + 1
        if pred == label:
            correct += 1
    total = len(probes)
    return IdReport(accuracy=correct / total if total else 0.0,
                    confusion=confusion, total=total)


def representation_analysis(realistic_reports: list[SdrReport],
                            id_correct: list[list[bool]],
                            oracle_reports: list[SdrReport]) -> dict:
    """Mean SDR improvement split by whether the input i-vector was correctly
    identified, plus the oracle-minus-realistic increment per group.

    Groups with no members are absent from the result.
    """
    if not (len(realistic_reports) == len(id_correct) == len(oracle_reports)):
        raise ValueError("misaligned records")
    grouped: dict[bool, list[tuple[float, float]]] = {True: [], False: []}
    for real, flags, oracle in zip(realistic_reports, id_correct, oracle_reports):
        if not (len(real.improvements) == len(flags) == len(oracle.improvements)):
            raise ValueError("misaligned records")
        for c, flag in enumerate(flags):
            grouped[bool(flag)].append((real.improvements[c], oracle.improvements[c]))
    result = {}
    for flag, key in ((True, "correct_id"), (False, "false_id")):
        rows = grouped[flag]
        if not rows:
            continue
        real_vals = np.array([r for r, _ in rows])
        oracle_vals = np.array([o for _, o in rows])
        result[key] = {
            "count": len(rows),
            "mean_sdr_improvement": float(real_vals.mean()),
            "oracle_increment": float((oracle_vals - real_vals).mean()),
        }
    return result
