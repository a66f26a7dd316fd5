"""Iterative adaptation pipeline: separate, extract i-vectors, adapt, repeat."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .clustering import separate
from .config import ExperimentConfig
from .corpus import Corpus, MixtureRecord, generate_corpus
from .dsp import (
    NormalizationStats,
    Waveform,
    compute_normalization_stats,
    energy_vad,
    log_magnitude,
    mfcc,
    stft,
)
from .embedding import bin_mask, build_targets
from .evaluation import SdrReport, sdr_improvement, speaker_id_eval
from .network import NetworkParameters, init_params
from .speaker import (
    GmmUbm,
    LdaProjection,
    TotalVariabilityModel,
    accumulate_stats,
    extract_ivector,
    project_lda,
    train_lda,
    train_tv,
    train_ubm,
)
from .training import NetSample, train


@dataclass
class SpeakerModels:
    ubm: GmmUbm
    tv: TotalVariabilityModel
    lda: LdaProjection | None = None


@dataclass
class LevelArtifacts:
    level: int
    mode: str
    params: NetworkParameters
    estimates: dict[str, list[Waveform]] = field(default_factory=dict)
    ivectors: dict[str, np.ndarray] = field(default_factory=dict)
    input_ivectors: dict[str, np.ndarray] = field(default_factory=dict)
    reports: dict[str, SdrReport] = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)


def train_speaker_models(corpus: Corpus, cfg: ExperimentConfig) -> SpeakerModels:
    """UBM, total-variability and optional LDA models from clean train-pool audio."""
    dev = corpus.clean_utterances("train")
    feats = []
    for _, wave in dev:
        f = mfcc(wave, n_coeffs=cfg.mfcc_coeffs, n_filters=cfg.mel_filters)
        active = energy_vad(f, cfg.vad_threshold_db)
        feats.append(f.rows[active])
    ubm = train_ubm(feats, cfg.ubm_components, iters=cfg.ubm_iters)
    stats = [accumulate_stats(ubm, f) for f in feats]
    tv = train_tv(stats, ubm, rank=cfg.tv_rank, iters=cfg.tv_iters, seed=cfg.seed)
    lda = None
    if cfg.use_lda:
        labelled = [(extract_ivector(tv, st), spk)
                    for st, (spk, _) in zip(stats, dev)]
        lda = train_lda(labelled, cfg.lda_dim)
    return SpeakerModels(ubm=ubm, tv=tv, lda=lda)


def utterance_ivector(models: SpeakerModels, wave: Waveform,
                      cfg: ExperimentConfig) -> np.ndarray:
    """(LDA) i-vector of one waveform via MFCC + VAD + sufficient statistics."""
    f = mfcc(wave, n_coeffs=cfg.mfcc_coeffs, n_filters=cfg.mel_filters)
    active = energy_vad(f, cfg.vad_threshold_db)
    st = accumulate_stats(models.ubm, f.rows[active])
    w = extract_ivector(models.tv, st)
    if models.lda is not None:
        w = project_lda(models.lda, w)
    return w


def order_ivectors(estimates: list[Waveform], ivectors: list[np.ndarray]) -> np.ndarray:
    """Stack i-vectors in canonical slot order: descending estimate energy,
    exact ties broken by the waveform content hash."""
    keys = []
    for est in estimates:
        digest = hashlib.sha256(est.samples.tobytes()).hexdigest()
        keys.append((-est.energy(), digest))
    order = sorted(range(len(estimates)), key=lambda i: keys[i])
    return np.stack([np.asarray(ivectors[i], dtype=np.float64) for i in order])


def compute_feature_stats(corpus: Corpus, cfg: ExperimentConfig) -> NormalizationStats:
    feats = [log_magnitude(stft(m.mixture, cfg.window_len, cfg.hop))
             for m in corpus.mixtures_in("train")]
    return compute_normalization_stats(feats)


def _net_sample(mix: MixtureRecord, cfg: ExperimentConfig, stats: NormalizationStats,
                ivectors: np.ndarray | None) -> NetSample:
    spec = stft(mix.mixture, cfg.window_len, cfg.hop)
    feats = log_magnitude(spec, stats)
    keep = bin_mask(spec, cfg.threshold_db)
    sources = [stft(s, cfg.window_len, cfg.hop) for s in mix.sources]
    targets = build_targets(sources)
    return NetSample(features=feats.rows, targets=targets, keep=keep,
                     ivectors=ivectors)


def adapt_params(prev: NetworkParameters, rng: np.random.Generator,
                 n_speakers: int, ivec_dim: int) -> NetworkParameters:
    """Widen a trained network to accept the i-vector input block.

    Tensors with matching shapes are copied; the first layer's input weights
    keep their feature columns and get fresh rows for the new inputs.
    """
    fresh = init_params(rng, n_freq=prev.n_freq, embed_dim=prev.embed_dim,
                        hidden=prev.hidden, n_layers=prev.n_layers,
                        n_speakers=n_speakers, ivec_dim=ivec_dim)
    for name, tensor in prev.tensors.items():
        if name not in fresh.tensors:
            continue
        if fresh.tensors[name].shape == tensor.shape:
            fresh.tensors[name] = tensor.copy()
        elif name.endswith("_W") and fresh.tensors[name].shape[1] == tensor.shape[1]:
            fresh.tensors[name][: tensor.shape[0]] = tensor
    fresh.meta = dict(prev.meta)
    return fresh


def _input_ivectors(cfg: ExperimentConfig, level: int, mix: MixtureRecord,
                    prev: LevelArtifacts | None, models: SpeakerModels,
                    mode: str) -> np.ndarray | None:
    if level == 0:
        return None
    if mode == "oracle":
        waves = mix.sources
        ivecs = [utterance_ivector(models, w, cfg) for w in waves]
    else:
        waves = prev.estimates[mix.name]
        ivecs = [prev.ivectors[mix.name][i] for i in range(len(waves))]
    return order_ivectors(waves, list(ivecs))


def run_level(cfg: ExperimentConfig, level: int, prev: LevelArtifacts | None,
              corpus: Corpus, models: SpeakerModels,
              init_override: NetworkParameters | None = None,
              mode: str | None = None) -> LevelArtifacts:
    """Train the level network, separate every mixture, extract i-vectors, score.

    Level 0 is the unadapted baseline; level l >= 1 consumes (LDA) i-vectors
    computed from level l-1 estimates (realistic) or clean sources (oracle)
    and is initialized from the previous level's parameters.
    """
    if level == 0 and prev is not None:
        raise ValueError("level 0 takes no previous artifacts")
    if level >= 1 and prev is None:
        raise ValueError(f"level {level} requires level {level - 1} artifacts")
    mode = mode or cfg.mode
    stats = compute_feature_stats(corpus, cfg)
    n_speakers = 2

    input_ivecs: dict[str, np.ndarray] = {}
    samples: dict[str, list[NetSample]] = {}
    for split in ("train", "val"):
        built = []
        for mix in corpus.mixtures_in(split):
            ivecs = _input_ivectors(cfg, level, mix, prev, models, mode)
            if ivecs is not None:
                input_ivecs[mix.name] = ivecs
            built.append(_net_sample(mix, cfg, stats, ivecs))
        samples[split] = built

    if init_override is not None:
        init = init_override
    elif level == 0:
        def init(rng):
            return init_params(rng, n_freq=cfg.n_freq, embed_dim=cfg.embed_dim,
                               hidden=cfg.hidden, n_layers=cfg.n_layers)
    else:
        adapt_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 77, level]))
        init = adapt_params(prev.params, adapt_rng, n_speakers, cfg.ivec_dim)

    params, log = train(cfg.trainer, samples["train"], samples["val"], init,
                        seed=cfg.seed + level)
    params.tensors["norm_mean"] = stats.mean.copy()
    params.tensors["norm_std"] = stats.std.copy()
    params.meta.update({"window_len": cfg.window_len, "hop": cfg.hop,
                        "threshold_db": cfg.threshold_db, "level": level,
                        "mode": mode if level else "baseline"})

    arts = LevelArtifacts(level=level, mode=mode if level else "baseline",
                          params=params, input_ivectors=input_ivecs)
    arts.metrics["training_log_tail"] = log[-1] if log else None

    for idx, mix in enumerate(corpus.mixtures):
        ivecs = None
        if level >= 1:
            ivecs = input_ivecs.get(mix.name)
            if ivecs is None:
                ivecs = _input_ivectors(cfg, level, mix, prev, models, mode)
                input_ivecs[mix.name] = ivecs
        estimates, _ = separate(params, mix.mixture, ivectors=ivecs,
                                n_sources=n_speakers,
                                threshold_db=cfg.threshold_db,
                                restarts=cfg.kmeans_restarts,
                                seed=cfg.seed * 100003 + idx,
                                excluded=cfg.excluded_bin_policy)
        arts.estimates[mix.name] = estimates
        arts.ivectors[mix.name] = np.stack(
            [utterance_ivector(models, e, cfg) for e in estimates])
        if mix.split == "test":
            arts.reports[mix.name] = sdr_improvement(estimates, mix.sources,
                                                     mix.mixture)

    improvements = [r.mean_improvement for r in arts.reports.values()]
    arts.metrics["mean_sdr_improvement"] = float(np.mean(improvements))
    arts.metrics["n_test_mixtures"] = len(improvements)
    return arts


def clean_speaker_id(corpus: Corpus, models: SpeakerModels, cfg: ExperimentConfig):
    """Identification on clean audio: averaged train-pool models, test-pool probes."""
    per_speaker: dict[str, list[np.ndarray]] = {}
    for spk, wave in corpus.clean_utterances("train"):
        per_speaker.setdefault(spk, []).append(utterance_ivector(models, wave, cfg))
    speaker_models = [(spk, np.mean(per_speaker[spk], axis=0))
                      for spk in sorted(per_speaker)]
    probes = [(utterance_ivector(models, wave, cfg), spk)
              for spk, wave in corpus.clean_utterances("test")]
    return speaker_id_eval(speaker_models, probes), speaker_models


def estimate_speaker_id(arts: LevelArtifacts, corpus: Corpus,
                        speaker_models: list[tuple[str, np.ndarray]]):
    """Identification of estimate i-vectors on test mixtures (Table-1 analog).

    Estimates are matched to references through each report's permutation, so
    every probe carries the true speaker of the reference it reconstructs.
    Returns the report and per-mixture correctness flags aligned with the
    reference order.
    """
    from .speaker import identify

    probes = []
    flags: dict[str, list[bool]] = {}
    for mix in corpus.mixtures_in("test"):
        report = arts.reports[mix.name]
        per_mix = []
        for c, spk in enumerate(mix.speakers):
            ivec = arts.ivectors[mix.name][report.permutation[c]]
            probes.append((ivec, spk))
            per_mix.append(identify(speaker_models, ivec) == spk)
        flags[mix.name] = per_mix
    return speaker_id_eval(speaker_models, probes), flags


def run_experiment(cfg: ExperimentConfig, corpus: Corpus | None = None) -> dict:
    """Level-0 baseline, oracle level-1, realistic level-1 (initialized from the
    oracle network), identification and representation analysis.

    Returns a summary dict; artifact/report serialization lives in the CLI.
    """
    if corpus is None:
        corpus = generate_corpus(cfg.corpus)
    models = train_speaker_models(corpus, cfg)

    level0 = run_level(cfg, 0, None, corpus, models)
    oracle1 = run_level(cfg, 1, level0, corpus, models, mode="oracle")
    realistic1 = run_level(cfg, 1, level0, corpus, models,
                           init_override=oracle1.params.copy(), mode="realistic")

    clean_id, speaker_models = clean_speaker_id(corpus, models, cfg)
    level0_id, id_flags = estimate_speaker_id(level0, corpus, speaker_models)
    oracle_id, _ = estimate_speaker_id(oracle1, corpus, speaker_models)
    realistic_id, _ = estimate_speaker_id(realistic1, corpus, speaker_models)

    from .evaluation import representation_analysis

    names = [m.name for m in corpus.mixtures_in("test")]
    table2 = representation_analysis(
        [realistic1.reports[n] for n in names],
        [id_flags[n] for n in names],
        [oracle1.reports[n] for n in names])

    return {
        "config_seed": cfg.seed,
        "levels": {
            "level0": level0.metrics,
            "oracle_level1": oracle1.metrics,
            "realistic_level1": realistic1.metrics,
        },
        "speaker_id": {
            "clean_accuracy": clean_id.accuracy,
            "level0_estimate_accuracy": level0_id.accuracy,
            "oracle_level1_estimate_accuracy": oracle_id.accuracy,
            "realistic_level1_estimate_accuracy": realistic_id.accuracy,
        },
        "representation_analysis": table2,
        "artifacts": {"level0": level0, "oracle_level1": oracle1,
                      "realistic_level1": realistic1,
                      "speaker_models": models,
                      "speaker_id_models": speaker_models},
    }
