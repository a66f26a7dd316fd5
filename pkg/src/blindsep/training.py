"""Training protocol: curriculum, LR halving with restore, early stopping, restarts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .embedding import affinity_loss, affinity_loss_grad, normalize_rows
from .network import Adam, NetworkParameters, backward, forward_cached, make_input


@dataclass
class TrainerConfig:
    initial_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 128
    validation_interval_batches: int = 10
    patience: int = 3
    input_noise_std: float = 0.6
    curriculum_segment_frames: int = 100
    restarts: int = 6
    curriculum: bool = True
    max_batches_per_stage: int | None = None

    def __post_init__(self) -> None:
        positive = [self.initial_lr, self.beta1, self.beta2, self.adam_eps,
                    self.batch_size, self.validation_interval_batches,
                    self.input_noise_std, self.curriculum_segment_frames,
                    self.restarts]
        if any(p <= 0 for p in positive):
            raise ValueError("trainer config fields must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class NetSample:
    """One training item: normalized features, bin targets, keep mask, i-vectors."""

    features: np.ndarray              # (T, F)
    targets: np.ndarray               # (T*F, C) one-hot
    keep: np.ndarray                  # (T, F) bool
    ivectors: np.ndarray | None = None

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


InitSpec = Union[NetworkParameters, Callable[[np.random.Generator], NetworkParameters]]


def _segments(samples: list[NetSample], seg_frames: int) -> list[NetSample]:
    """Non-overlapping fixed-length slices of every sample (remainder dropped)."""
    out = []
    for s in samples:
        t_len, n_freq = s.features.shape
        tgt = s.targets.reshape(t_len, n_freq, -1)
        for k in range(t_len // seg_frames):
            sl = slice(k * seg_frames, (k + 1) * seg_frames)
            out.append(NetSample(
                features=s.features[sl],
                targets=tgt[sl].reshape(seg_frames * n_freq, -1),
                keep=s.keep[sl],
                ivectors=s.ivectors))
    return out


def _sample_loss(params: NetworkParameters, pre_b: np.ndarray, sample: NetSample):
    """Normalized loss and input-side gradient for one sequence of the batch."""
    n = sample.n_frames * params.n_freq
    u = pre_b.reshape(n, params.embed_dim)
    n_ret = int(np.count_nonzero(sample.keep))
    if n_ret == 0:
        return 0.0, np.zeros_like(pre_b)
    scale = 1.0 / float(n_ret) ** 2
    raw = affinity_loss(normalize_rows(u), sample.targets, sample.keep)
    du = affinity_loss_grad(u, sample.targets, sample.keep) * scale
    return raw * scale, du.reshape(pre_b.shape)


def evaluate_loss(params: NetworkParameters, samples: list[NetSample]) -> float:
    """Mean per-retained-bin-pair normalized loss, noise-free."""
    losses = []
    for s in samples:
        x = make_input(s.features, s.ivectors)[:, None, :]
        pre, _ = forward_cached(params, x)
        n = s.n_frames * params.n_freq
        n_ret = int(np.count_nonzero(s.keep))
        if n_ret == 0:
            continue
        raw = affinity_loss(normalize_rows(pre[:, 0, :].reshape(n, -1)),
                            s.targets, s.keep)
        losses.append(raw / float(n_ret) ** 2)
    if not losses:
        raise ValueError("no retained bins in evaluation set")
    return float(np.mean(losses))


def _batches(samples: list[NetSample], batch_size: int, rng: np.random.Generator):
    """Shuffled batches of equal-length sequences."""
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_len.setdefault(s.n_frames, []).append(i)
    batches = []
    for idxs in by_len.values():
        order = rng.permutation(len(idxs))
        for k in range(0, len(idxs), batch_size):
            batches.append([idxs[j] for j in order[k : k + batch_size]])
    order = rng.permutation(len(batches))
    return [batches[j] for j in order]


def _train_stage(params: NetworkParameters, stage: str, train_set: list[NetSample],
                 val_set: list[NetSample], config: TrainerConfig,
                 rng: np.random.Generator, log: list[dict], run: int):
    """One stage of the protocol; returns (best_params, best_val, diverged)."""
    opt = Adam(params.tensors, lr=config.initial_lr, beta1=config.beta1,
               beta2=config.beta2, eps=config.adam_eps)
    best_val = np.inf
    best_params = params.copy()
    prev_snap = (params.copy(), opt.snapshot())
    last_val = np.inf
    consec = 0
    step = 0
    recent: list[float] = []

    while True:
        for batch in _batches(train_set, config.batch_size, rng):
            group = [train_set[i] for i in batch]
            x = np.stack([make_input(s.features, s.ivectors) for s in group], axis=1)
            x = x + rng.normal(0.0, config.input_noise_std, size=x.shape)
            pre, caches = forward_cached(params, x)
            dpre = np.zeros_like(pre)
            batch_loss = 0.0
            for b, s in enumerate(group):
                loss_b, d_b = _sample_loss(params, pre[:, b, :], s)
                batch_loss += loss_b / len(group)
                dpre[:, b, :] = d_b / len(group)
            if not np.isfinite(batch_loss):
                log.append({"run": run, "stage": stage, "step": step, "lr": opt.lr,
                            "train_loss": None, "val_loss": None, "event": "diverged"})
                return best_params, best_val, True
            grads = backward(params, caches, dpre)
            opt.step(params.tensors, grads)
            step += 1
            recent.append(batch_loss)

            if step % config.validation_interval_batches == 0:
                val = evaluate_loss(params, val_set)
                train_loss = float(np.mean(recent))
                recent = []
                if not np.isfinite(val):
                    log.append({"run": run, "stage": stage, "step": step, "lr": opt.lr,
                                "train_loss": train_loss, "val_loss": None,
                                "event": "diverged"})
                    return best_params, best_val, True
                if val > last_val:
                    halved_lr = opt.lr / 2.0  # halving persists across restores
                    restored_params, opt_snap = prev_snap
                    params.tensors = {k: v.copy() for k, v in restored_params.tensors.items()}
                    opt.restore(opt_snap)
                    opt.lr = halved_lr
                    consec += 1
                    log.append({"run": run, "stage": stage, "step": step, "lr": opt.lr,
                                "train_loss": train_loss, "val_loss": val,
                                "best_val": float(best_val), "event": "restore"})
                    if consec >= config.patience:
                        log.append({"run": run, "stage": stage, "step": step,
                                    "lr": opt.lr, "train_loss": train_loss,
                                    "val_loss": val, "best_val": float(best_val),
                                    "event": "early_stop"})
                        return best_params, best_val, False
                else:
                    consec = 0
                    last_val = val
                    prev_snap = (params.copy(), opt.snapshot())
                    if val < best_val:
                        best_val = val
                        best_params = params.copy()
                    log.append({"run": run, "stage": stage, "step": step, "lr": opt.lr,
                                "train_loss": train_loss, "val_loss": val,
                                "best_val": float(best_val), "event": "validate"})

            if config.max_batches_per_stage and step >= config.max_batches_per_stage:
                log.append({"run": run, "stage": stage, "step": step, "lr": opt.lr,
                            "train_loss": float(np.mean(recent)) if recent else None,
                            "val_loss": None, "best_val": float(best_val),
                            "event": "stage_cap"})
                return best_params, best_val, False


def train(config: TrainerConfig, train_set: list[NetSample], validation_set: list[NetSample],
          init: InitSpec, seed: int = 0) -> tuple[NetworkParameters, list[dict]]:
    """Full protocol over independent restarts; returns the best network and log.

    Each restart runs the optional segment-curriculum stage and then the
    full-sequence stage; restarts are compared on their best full-stage
    validation loss and the winner's parameters are returned.
    """
    if not train_set or not validation_set:
        raise ValueError("training and validation sets must be nonempty")
    log: list[dict] = []
    best_overall = None
    best_val_overall = np.inf

    for run in range(config.restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, run]))
        params = init.copy() if isinstance(init, NetworkParameters) else init(rng)
        log.append({"run": run, "stage": "init", "step": 0, "lr": config.initial_lr,
                    "train_loss": None, "val_loss": None, "event": "init"})
        diverged = False

        if config.curriculum:
            seg_train = _segments(train_set, config.curriculum_segment_frames)
            seg_val = _segments(validation_set, config.curriculum_segment_frames)
            if seg_train and seg_val:
                params, _, diverged = _train_stage(
                    params, "segments", seg_train, seg_val, config, rng, log, run)
        if not diverged:
            params, run_val, diverged = _train_stage(
                params, "full", train_set, validation_set, config, rng, log, run)
            if not diverged and run_val < best_val_overall:
                best_val_overall = run_val
                best_overall = params

    if best_overall is None:
        raise ArithmeticError("all training runs diverged")
    return best_overall, log
