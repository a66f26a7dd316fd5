"""Experiment configuration: dataclass, presets, and INI-style config files.

Config files use sections [dsp], [net], [trainer], [speaker], [pipeline],
[corpus]; every key below can be overridden. The "paper" preset carries the
full-scale hyperparameters; the "desk" preset is the scaled-down default that
runs on a laptop in minutes.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from .corpus import CorpusSpec
from .training import TrainerConfig


@dataclass
class ExperimentConfig:
    # pipeline
    mode: str = "realistic"            # oracle | realistic
    levels: int = 1
    ivec_dim: int = 10                 # i-vector width at the network input
    use_lda: bool = False
    seed: int = 0
    kmeans_restarts: int = 10
    excluded_bin_policy: str = "zero"  # zero | nearest
    # dsp
    sample_rate: int = 8000
    window_len: int = 256
    hop: int = 128
    threshold_db: float = -40.0
    # net
    embed_dim: int = 10
    hidden: int = 32
    n_layers: int = 2
    # speaker chain
    ubm_components: int = 16
    ubm_iters: int = 10
    tv_rank: int = 10
    tv_iters: int = 10
    lda_dim: int = 3
    mfcc_coeffs: int = 13
    mel_filters: int = 23
    vad_threshold_db: float = -40.0
    # nested
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    corpus: CorpusSpec = field(default_factory=CorpusSpec)

    def __post_init__(self) -> None:
        if self.mode not in ("oracle", "realistic"):
            raise ValueError(f"unknown mode: {self.mode}")
        if self.levels < 0:
            raise ValueError("levels must be >= 0")
        if self.use_lda and self.lda_dim != self.ivec_dim:
            raise ValueError("with use_lda, ivec_dim must equal lda_dim")
        if not self.use_lda and self.ivec_dim != self.tv_rank:
            raise ValueError("without LDA, ivec_dim must equal tv_rank")

    @property
    def n_freq(self) -> int:
        return self.window_len // 2


# Full-scale values: 8 kHz audio, 64 ms/16 ms framing (F=256), D=20,
# 600-unit 2-layer BLSTM-class network, batch 128, validation every 10
# batches, noise std 0.6, 100-frame curriculum segments, 6 restarts,
# 256-mixture UBM, 400-dim i-vectors.
PAPER_PRESET = {
    "dsp.window_len": 512, "dsp.hop": 128,
    "net.embed_dim": 20, "net.hidden": 600, "net.n_layers": 2,
    "trainer.initial_lr": 1e-3, "trainer.beta1": 0.9, "trainer.beta2": 0.999,
    "trainer.adam_eps": 1e-8, "trainer.batch_size": 128,
    "trainer.validation_interval_batches": 10, "trainer.patience": 3,
    "trainer.input_noise_std": 0.6, "trainer.curriculum_segment_frames": 100,
    "trainer.restarts": 6,
    "speaker.ubm_components": 256, "speaker.tv_rank": 400,
    "pipeline.ivec_dim": 400,
}

# Desk-scale preset: small recurrent net, small UBM/TV, capped batches.
DESK_PRESET = {
    "dsp.window_len": 256, "dsp.hop": 128,
    "net.embed_dim": 10, "net.hidden": 32, "net.n_layers": 2,
    "trainer.batch_size": 8, "trainer.validation_interval_batches": 10,
    "trainer.input_noise_std": 0.2, "trainer.curriculum_segment_frames": 90,
    "trainer.restarts": 2, "trainer.max_batches_per_stage": 150,
    "speaker.ubm_components": 16, "speaker.tv_rank": 10,
    "speaker.ubm_iters": 10, "speaker.tv_iters": 10,
    "pipeline.ivec_dim": 10,
    "corpus.n_speakers": 4, "corpus.utterances_per_speaker": 25,
    "corpus.utterance_seconds": 3.0,
}

_SECTION_FIELDS = {
    "pipeline": ["mode", "levels", "ivec_dim", "use_lda", "seed",
                 "kmeans_restarts", "excluded_bin_policy"],
    "dsp": ["sample_rate", "window_len", "hop", "threshold_db"],
    "net": ["embed_dim", "hidden", "n_layers"],
    "speaker": ["ubm_components", "ubm_iters", "tv_rank", "tv_iters", "lda_dim",
                "mfcc_coeffs", "mel_filters", "vad_threshold_db"],
}


def _parse_value(text: str, target_type):
    if target_type is bool:
        return text.strip().lower() in ("1", "true", "yes", "on")
    if target_type is int:
        return int(text)
    if target_type is float:
        return float(text)
    if target_type is tuple:
        return tuple(float(p) for p in text.split(","))
    return text


def _field_types(cls) -> dict[str, type]:
    types = {}
    for f in fields(cls):
        if f.type in ("int", int):
            types[f.name] = int
        elif f.type in ("float", float):
            types[f.name] = float
        elif f.type in ("bool", bool):
            types[f.name] = bool
        elif "tuple" in str(f.type):
            types[f.name] = tuple
        else:
            types[f.name] = str
    return types


def build_config(overrides: dict[str, str] | None = None,
                 preset: str = "desk") -> ExperimentConfig:
    """Assemble a config from a preset plus dotted-key overrides."""
    merged: dict[str, object] = {}
    merged.update(DESK_PRESET if preset == "desk" else PAPER_PRESET)
    merged.update(overrides or {})

    exp_types = _field_types(ExperimentConfig)
    trainer_types = _field_types(TrainerConfig)
    corpus_types = _field_types(CorpusSpec)
    exp_kwargs: dict[str, object] = {}
    trainer_kwargs: dict[str, object] = {}
    corpus_kwargs: dict[str, object] = {}
    for dotted, value in merged.items():
        section, key = dotted.split(".", 1)
        if section == "trainer":
            if key == "max_batches_per_stage":
                trainer_kwargs[key] = None if str(value).lower() == "none" else int(value)
            else:
                t = trainer_types.get(key)
                if t is None:
                    raise ValueError(f"unknown config key: {dotted}")
                trainer_kwargs[key] = _parse_value(str(value), t) if isinstance(value, str) else value
        elif section == "corpus":
            t = corpus_types.get(key)
            if t is None:
                raise ValueError(f"unknown config key: {dotted}")
            corpus_kwargs[key] = _parse_value(str(value), t) if isinstance(value, str) else value
        else:
            if section not in _SECTION_FIELDS or key not in _SECTION_FIELDS[section]:
                raise ValueError(f"unknown config key: {dotted}")
            t = exp_types[key]
            exp_kwargs[key] = _parse_value(str(value), t) if isinstance(value, str) else value

    if "sample_rate" in exp_kwargs:
        corpus_kwargs.setdefault("sample_rate", exp_kwargs["sample_rate"])
    if "seed" in exp_kwargs:
        corpus_kwargs.setdefault("seed", exp_kwargs["seed"])
    return ExperimentConfig(trainer=TrainerConfig(**trainer_kwargs),
                            corpus=CorpusSpec(**corpus_kwargs), **exp_kwargs)


def load_config(path, preset: str = "desk",
                extra_overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Read an INI config file; file keys override the preset, CLI extras override both."""
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    overrides: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            overrides[f"{section}.{key}"] = value
    overrides.update(extra_overrides or {})
    return build_config(overrides, preset=preset)
