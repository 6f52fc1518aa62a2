"""Minibatch SGD and DP-SGD training loops with checkpointed predictions.

One loop serves both regimes. A step samples a Poisson batch at rate ``q``,
computes exact per-example gradients, clips each to L2 norm ``c``, sums,
adds Gaussian noise ``N(0, (sigma c)^2 I)`` once per step, divides by the
realized batch size, and applies a plain gradient step. A non-private run is
the degenerate configuration ``sigma = 0`` with clipping disabled, on the
identical batch sequence.

Plain SGD keeps no optimizer state (no momentum, no schedules); reproducing
a run requires only (data, spec, configs, seed).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import accountant, losses, models
from .data import LabeledDataset
from .losses import LossSpec
from .models import ModelSpec, ParamVector
from .rng import STREAM_BATCH, STREAM_DROPOUT, STREAM_NOISE, derive_seed, generator

CHECKPOINT_LOG_FORMAT = "dpselect-checkpoint-log"
CHECKPOINT_LOG_VERSION = 1

__all__ = [
    "PrivacyConfig",
    "TrainConfig",
    "CheckpointLog",
    "TrainResult",
    "poisson_sample",
    "clip_rows",
    "dpsgd_step",
    "sgd_step",
    "train",
    "steps_per_epoch",
    "eval_set_id",
    "save_checkpoint_log",
    "load_checkpoint_log",
]


@dataclass(frozen=True)
class PrivacyConfig:
    """Privacy regime of one training run.

    ``epsilon`` may be ``math.inf``, which disables clipping and noise
    entirely. ``noise_multiplier`` is either an explicit value or ``"auto"``,
    in which case :func:`train` calibrates it against the target with the
    accountant. ``steps`` is the accounting horizon and must match the
    optimizer's step count.
    """

    epsilon: float
    delta: float | None
    clip_norm: float
    sampling_rate: float
    steps: int
    noise_multiplier: float | str = "auto"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive (math.inf allowed)")
        if not 0.0 < self.sampling_rate <= 1.0:
            raise ValueError("sampling_rate must be in (0, 1]")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if math.isinf(self.epsilon):
            return
        if self.delta is None or not 0.0 < self.delta < 1.0:
            raise ValueError("finite epsilon requires delta in (0, 1)")
        if not 0.0 < self.clip_norm < math.inf:
            raise ValueError("finite epsilon requires a finite positive clip_norm")
        if self.noise_multiplier != "auto" and float(self.noise_multiplier) < 0:
            raise ValueError("noise_multiplier must be 'auto' or >= 0")

    @classmethod
    def non_private(cls, steps: int, sampling_rate: float = 1.0) -> "PrivacyConfig":
        return cls(
            epsilon=math.inf,
            delta=None,
            clip_norm=math.inf,
            sampling_rate=sampling_rate,
            steps=steps,
            noise_multiplier=0.0,
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    steps: int
    loss: LossSpec
    entropy_beta: float = 0.0
    checkpoint_interval: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.entropy_beta < 0:
            raise ValueError("entropy_beta must be >= 0")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be >= 1")
        if self.steps > 0 and self.checkpoint_interval > self.steps:
            raise ValueError("checkpoint_interval exceeds total steps")


@dataclass(frozen=True)
class CheckpointLog:
    """Predicted labels on a fixed evaluation set along the trajectory.

    ``checkpoint_times`` are 1-based optimizer steps (0 alone for untrained
    models), strictly increasing, and the last entry is the final model, so
    the last prediction row always matches ``predict`` of the returned
    parameters. ``final_probs`` holds the final model's full output simplex
    (``C + 1`` wide for abstention heads, the prediction head for selective
    nets, whose raw selection outputs ride along in ``final_selection``).
    """

    checkpoint_times: np.ndarray
    predictions: np.ndarray
    final_probs: np.ndarray
    eval_set_id: str
    final_selection: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.checkpoint_times, dtype=np.int64)
        preds = np.asarray(self.predictions, dtype=np.int64)
        probs = np.asarray(self.final_probs, dtype=np.float64)
        if times.ndim != 1 or np.any(np.diff(times) <= 0):
            raise ValueError("checkpoint_times must be strictly increasing")
        if preds.shape != (times.shape[0], probs.shape[0]):
            raise ValueError("predictions shape does not match times and eval set")
        object.__setattr__(self, "checkpoint_times", times)
        object.__setattr__(self, "predictions", preds)
        object.__setattr__(self, "final_probs", probs)


@dataclass(frozen=True)
class TrainResult:
    params: ParamVector
    log: CheckpointLog
    report: accountant.PrivacyReport


def steps_per_epoch(sampling_rate: float) -> int:
    """Steps per expected pass over the data under Poisson sampling."""
    return max(1, round(1.0 / sampling_rate))


def poisson_sample(n: int, q: float, seed: int, step: int) -> np.ndarray:
    """Indices of one Poisson batch; a pure function of (n, q, seed, step)."""
    if not 0.0 < q <= 1.0:
        raise ValueError("sampling rate must be in (0, 1]")
    u = generator(seed, STREAM_BATCH, step).random(n)
    return np.flatnonzero(u < q)


def clip_rows(rows: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale each row to L2 norm at most ``clip_norm``; infinite norm is a no-op."""
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    if not math.isfinite(clip_norm):
        return rows
    norms = np.linalg.norm(rows, axis=1)
    factors = np.minimum(1.0, clip_norm / np.maximum(norms, 1e-300))
    return rows * factors[:, None]


def eval_set_id(data: LabeledDataset) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(data.features).tobytes())
    digest.update(np.ascontiguousarray(data.labels).tobytes())
    return digest.hexdigest()[:16]


def _grad_rows(params, spec, x, y, loss, entropy_beta, sat_targets, dropout_seed):
    if x.shape[0] == 0:
        return np.zeros((0, len(params)))
    return models.per_sample_grad(
        params, spec, x, y, loss,
        entropy_beta=entropy_beta, sat_targets=sat_targets, dropout_seed=dropout_seed,
    )


def dpsgd_step(
    params: ParamVector,
    spec: ModelSpec,
    x: np.ndarray,
    y: np.ndarray,
    loss: LossSpec,
    *,
    clip_norm: float,
    sigma: float,
    learning_rate: float,
    noise_seed: int,
    entropy_beta: float = 0.0,
    sat_targets: np.ndarray | None = None,
    dropout_seed: int | None = None,
) -> ParamVector:
    """One DP-SGD update: clip per-example gradients, add noise once, average.

    An empty batch contributes no gradient but still releases a noise draw,
    scaled by ``1 / max(|B|, 1)``. With ``sigma = 0`` and infinite
    ``clip_norm`` the update degenerates to plain minibatch SGD.
    """
    rows = _grad_rows(params, spec, x, y, loss, entropy_beta, sat_targets, dropout_seed)
    total = clip_rows(rows, clip_norm).sum(axis=0)
    if sigma > 0.0:
        if not math.isfinite(clip_norm):
            raise ValueError("noise requires a finite clip_norm")
        total = total + generator(noise_seed).normal(0.0, sigma * clip_norm, len(params))
    grad = total / max(rows.shape[0], 1)
    return params.replace(params.values - learning_rate * grad)


def sgd_step(
    params: ParamVector,
    spec: ModelSpec,
    x: np.ndarray,
    y: np.ndarray,
    loss: LossSpec,
    *,
    learning_rate: float,
    entropy_beta: float = 0.0,
    sat_targets: np.ndarray | None = None,
    dropout_seed: int | None = None,
) -> ParamVector:
    """Plain minibatch step on the mean loss; empty batches change nothing."""
    if x.shape[0] == 0:
        return params
    grad = models.batch_grad(
        params, spec, x, y, loss,
        entropy_beta=entropy_beta, sat_targets=sat_targets, dropout_seed=dropout_seed,
    )
    return params.replace(params.values - learning_rate * grad)


def _resolve_sigma(privacy: PrivacyConfig) -> float:
    if math.isinf(privacy.epsilon):
        return 0.0
    if privacy.noise_multiplier == "auto":
        return accountant.calibrate_sigma(
            privacy.epsilon, privacy.delta, privacy.sampling_rate, privacy.steps
        )
    return float(privacy.noise_multiplier)


def _renormalized_class_probs(probs: np.ndarray, num_classes: int) -> np.ndarray:
    """First ``num_classes`` entries renormalized to the simplex."""
    p = probs[:, :num_classes]
    return p / np.maximum(p.sum(axis=1, keepdims=True), losses.LOG_CLAMP)


def train(
    data: LabeledDataset,
    spec: ModelSpec,
    train_cfg: TrainConfig,
    privacy: PrivacyConfig,
    eval_set: LabeledDataset | None = None,
) -> TrainResult:
    """Run the configured number of steps and log checkpointed predictions.

    Checkpoints land on every multiple of ``checkpoint_interval`` plus the
    final step. Self-adaptive targets start as one-hot rows and track the
    renormalized class probabilities of sampled points once the burn-in
    epochs (of ``steps_per_epoch(q)`` steps each) have passed. Raises if a
    finite epsilon target would be exceeded by the realized account.
    """
    if eval_set is None:
        eval_set = data
    if privacy.steps != train_cfg.steps:
        raise ValueError(
            f"privacy horizon {privacy.steps} != optimizer steps {train_cfg.steps}"
        )
    non_private = math.isinf(privacy.epsilon)
    sigma = _resolve_sigma(privacy)
    clip = math.inf if non_private else privacy.clip_norm
    loss = train_cfg.loss
    seed = train_cfg.seed
    q = privacy.sampling_rate

    params = models.init_params(spec, seed)
    sat_targets = None
    if loss.kind == "sat":
        sat_targets = np.zeros((len(data), spec.num_classes))
        sat_targets[np.arange(len(data)), data.labels] = 1.0
    per_epoch = steps_per_epoch(q)

    times: list[int] = []
    preds: list[np.ndarray] = []
    for t in range(1, train_cfg.steps + 1):
        idx = poisson_sample(len(data), q, seed, t)
        xb, yb = data.features[idx], data.labels[idx]
        batch_targets = None
        if sat_targets is not None and len(idx) > 0:
            probs = models.predict_probs(params, spec, xb)
            sat_targets[idx] = losses.sat_update_targets(
                sat_targets[idx],
                _renormalized_class_probs(probs, spec.num_classes),
                loss.momentum,
                epoch=(t - 1) // per_epoch,
                burn_in_epochs=loss.burn_in_epochs,
            )
            batch_targets = sat_targets[idx]
        dropout_seed = (
            derive_seed(seed, STREAM_DROPOUT, t) if spec.dropout_rate > 0 else None
        )
        params = dpsgd_step(
            params, spec, xb, yb, loss,
            clip_norm=clip,
            sigma=sigma,
            learning_rate=train_cfg.learning_rate,
            noise_seed=derive_seed(seed, STREAM_NOISE, t),
            entropy_beta=train_cfg.entropy_beta,
            sat_targets=batch_targets,
            dropout_seed=dropout_seed,
        )
        if t % train_cfg.checkpoint_interval == 0 or t == train_cfg.steps:
            times.append(t)
            preds.append(models.predict(params, spec, eval_set.features))
    if not times:
        times.append(0)
        preds.append(models.predict(params, spec, eval_set.features))

    out = models.forward(params, spec, eval_set.features)
    if isinstance(out, models.SelectiveNetOutputs):
        final_probs = models.softmax(out.f_logits)
        final_selection = out.g_raw
    else:
        final_probs = models.softmax(out)
        final_selection = None
    log = CheckpointLog(
        checkpoint_times=np.array(times),
        predictions=np.stack(preds),
        final_probs=final_probs,
        eval_set_id=eval_set_id(eval_set),
        final_selection=final_selection,
    )

    if non_private:
        report = accountant.PrivacyReport(
            math.inf, 0.0, 0.0, q, train_cfg.steps, None
        )
    else:
        report = accountant.account(sigma, q, train_cfg.steps, privacy.delta)
        if report.epsilon > privacy.epsilon:
            raise ValueError(
                f"realized epsilon {report.epsilon:.6g} exceeds target "
                f"{privacy.epsilon:.6g}; increase noise_multiplier or use 'auto'"
            )
    return TrainResult(params=params, log=log, report=report)


def save_checkpoint_log(log: CheckpointLog, directory: str | Path) -> None:
    """Header JSON plus integer prediction matrix (and float CSVs) on disk.

    Floats are written with 17 significant digits, which round-trips float64
    exactly; reloading and rescoring reproduces metrics bit for bit.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {
        "format": CHECKPOINT_LOG_FORMAT,
        "version": CHECKPOINT_LOG_VERSION,
        "checkpoint_times": [int(t) for t in log.checkpoint_times],
        "eval_set_id": log.eval_set_id,
        "eval_size": int(log.final_probs.shape[0]),
        "num_outputs": int(log.final_probs.shape[1]),
        "has_selection": log.final_selection is not None,
    }
    (directory / "log.json").write_text(json.dumps(header, indent=2))
    np.savetxt(directory / "predictions.csv", log.predictions, fmt="%d", delimiter=",")
    np.savetxt(directory / "final_probs.csv", log.final_probs, fmt="%.17g", delimiter=",")
    if log.final_selection is not None:
        np.savetxt(
            directory / "final_selection.csv", log.final_selection, fmt="%.17g"
        )


def load_checkpoint_log(directory: str | Path) -> CheckpointLog:
    directory = Path(directory)
    header = json.loads((directory / "log.json").read_text())
    if header.get("format") != CHECKPOINT_LOG_FORMAT:
        raise ValueError(f"{directory} does not hold a checkpoint log")
    if header.get("version") != CHECKPOINT_LOG_VERSION:
        raise ValueError(f"unsupported log version {header.get('version')}")
    preds = np.loadtxt(
        directory / "predictions.csv", dtype=np.int64, delimiter=",", ndmin=2
    )
    probs = np.loadtxt(directory / "final_probs.csv", delimiter=",", ndmin=2)
    selection = None
    if header["has_selection"]:
        selection = np.loadtxt(directory / "final_selection.csv", ndmin=1)
    return CheckpointLog(
        checkpoint_times=np.array(header["checkpoint_times"], dtype=np.int64),
        predictions=preds,
        final_probs=probs,
        eval_set_id=header["eval_set_id"],
        final_selection=selection,
    )
