"""Training loops: weighted multi-task loss, early stopping, best-checkpoint
restore, and the adversarial schedule for AE-GAN."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .eventlog import EventLog, MinMaxScaler, Vocabulary
from .models import AdversarialConfig, AEGANModel, Architecture, ModelConfig, SuffixModel, build_model
from .preprocess import Batch, TargetLayout, apply_masking, build_batches

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 400
    patience: int = 50
    lr: float = 1e-4
    w_act: float = 1.0
    w_time: float = 1.0
    batch_size: int = 64
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if self.w_act < 0 or self.w_time < 0 or (self.w_act == 0 and self.w_time == 0):
            raise ValueError("loss weights must be >= 0 and not both zero")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    eval_loss: float
    act_loss: float
    time_loss: float
    seconds: float


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False
    wall_clock: float = 0.0
    best_epoch: int = 0
    best_eval_loss: float = float("inf")
    open_loop_sequences: int = 0
    total_sequences: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.records)

    @property
    def eval_losses(self) -> list[float]:
        return [r.eval_loss for r in self.records]

    @property
    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.records]

    @property
    def open_loop_fraction(self) -> float:
        return self.open_loop_sequences / self.total_sequences if self.total_sequences else 0.0


class EarlyStopping:
    """Stop once the monitored value has not improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.epoch = 0

    def update(self, value: float) -> bool:
        self.epoch += 1
        if value < self.best:
            self.best = value
            self.best_epoch = self.epoch
            return True
        return False

    @property
    def should_stop(self) -> bool:
        return self.epoch - self.best_epoch >= self.patience


@dataclass
class TrainedModel:
    model: SuffixModel
    config: ModelConfig
    vocabulary: Vocabulary
    scaler: MinMaxScaler
    max_len: int
    train_config: TrainConfig | None = None
    report: TrainReport | None = None

    def header(self) -> dict:
        return {
            "model": self.config.to_dict(),
            "vocabulary": self.vocabulary.names,
            "vocabulary_hash": self.vocabulary.fingerprint(),
            "scaler": [self.scaler.min_seconds, self.scaler.max_seconds],
            "max_len": self.max_len,
            "train": asdict(self.train_config) if self.train_config else None,
        }

    def save(self, path) -> None:
        dc.checkpoint.save(path, self.model.state_dict(), self.header())

    @classmethod
    def load(cls, path) -> "TrainedModel":
        arrays, header = dc.checkpoint.load(path)
        config = ModelConfig.from_dict(header["model"])
        model = build_model(config, seed=0)
        model.load_state_dict(arrays)
        model.eval()
        names = header["vocabulary"]
        vocab = Vocabulary(names[4:])
        train = TrainConfig(**header["train"]) if header.get("train") else None
        return cls(model, config, vocab, MinMaxScaler(*header["scaler"]), header["max_len"], train)


def make_batches(
    config: ModelConfig, log: EventLog, scaler: MinMaxScaler, batch_size: int = 64, canvas_fill: bool = True
) -> list[Batch]:
    """Batches in the layout ``config`` trains on.

    With ``canvas_fill`` BERT rows are extended with [EOS] to ``max_len``, the
    size of the canvas it fills at generation time.
    """
    canvas = config.max_len if canvas_fill and config.architecture is Architecture.BERT else None
    return build_batches(log, config.layout, scaler, batch_size, canvas)


def batch_losses(model: SuffixModel, batch: Batch, config: TrainConfig, outputs=None):
    """Return (total, activity, time) loss tensors for one batch."""
    logits, times = outputs if outputs is not None else model.forward(batch)
    act = dc.cross_entropy_masked(logits, batch.activity_targets, batch.loss_mask)
    tm = dc.mse_masked(times, batch.time_targets, batch.loss_mask)
    if config.w_time == 0:
        total = act * config.w_act
    elif config.w_act == 0:
        total = tm * config.w_time
    else:
        total = act * config.w_act + tm * config.w_time
    return total, act, tm


def evaluate_loss(model: SuffixModel, batches: Sequence[Batch], config: TrainConfig) -> tuple[float, float, float]:
    """Token-weighted mean of (total, activity, time) loss, eval mode, no tape."""
    was_training = model.training
    model.eval()
    sums = np.zeros(3)
    tokens = 0.0
    with dc.no_grad():
        for b in batches:
            count = float(b.loss_mask.sum())
            total, act, tm = batch_losses(model, b, config)
            sums += count * np.array([total.item(), act.item(), tm.item()])
            tokens += count
    model.train(was_training)
    return tuple(sums / max(tokens, 1.0))


def _streams(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _fixed_masks(batches: Sequence[Batch], seed: int) -> list[Batch]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    return [apply_masking(b, rng) for b in batches]


def _append_log(path: Path | None, record: EpochRecord) -> None:
    if path is not None:
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(asdict(record), sort_keys=True) + "\n")


def train(
    model: SuffixModel,
    batches: Sequence[Batch],
    eval_batches: Sequence[Batch],
    config: TrainConfig = TrainConfig(),
    log_path=None,
    checkpoint=None,
) -> tuple[SuffixModel, TrainReport]:
    """Minimise ``w_act * cross_entropy + w_time * squared_error`` with Adam.

    Keeps the parameters of the epoch with the lowest eval loss and restores
    them at the end. ``checkpoint`` is an optional callable invoked with the
    model whenever the eval loss improves.
    """
    if isinstance(model, AEGANModel):
        return train_aegan(model, batches, eval_batches, config, AdversarialConfig(), log_path, checkpoint)
    return _run(model, batches, eval_batches, config, log_path, checkpoint, None)


def train_aegan(
    model: AEGANModel,
    batches: Sequence[Batch],
    eval_batches: Sequence[Batch],
    config: TrainConfig = TrainConfig(),
    adversarial: AdversarialConfig = AdversarialConfig(),
    log_path=None,
    checkpoint=None,
) -> tuple[AEGANModel, TrainReport]:
    """Alternate a discriminator step and an autoencoder step per batch.

    The discriminator maximises ``log D(real) + log(1 - D(fake))``; the
    autoencoder minimises reconstruction plus ``adv_weight * (1 - log D(s))``
    where ``s`` is a Gumbel-Softmax sample at the annealed temperature.
    """
    if batches and batches[0].layout is not TargetLayout.PREFIX_TO_SHIFTED_SUFFIX:
        raise ValueError("AE-GAN trains on prefix/suffix batches")
    return _run(model, batches, eval_batches, config, log_path, checkpoint, adversarial)


def discriminator_loss(real_logit: dc.Tensor, fake_logit: dc.Tensor) -> dc.Tensor:
    """``-(log D(real) + log(1 - D(fake)))`` averaged over pairs, via log-sigmoid."""
    return dc.neg(dc.mean(dc.log_sigmoid(real_logit)) + dc.mean(dc.log_sigmoid(dc.neg(fake_logit))))


def adversarial_loss(fake_logit: dc.Tensor) -> dc.Tensor:
    """``1 - log D(s)`` averaged over the batch."""
    return 1.0 - dc.mean(dc.log_sigmoid(fake_logit))


def _run(model, batches, eval_batches, config, log_path, checkpoint, adversarial):
    log_path = Path(log_path) if log_path is not None else None
    shuffle_rng, mask_rng, gumbel_rng, open_rng = _streams(config.seed, 4)
    layout = batches[0].layout
    masked = layout is TargetLayout.MASKED_RECONSTRUCTION
    if masked:
        eval_batches = _fixed_masks(eval_batches, config.seed)

    if adversarial is not None:
        params = model.generator_parameters()
        disc_params = model.discriminator_parameters()
        disc_opt = dc.Adam(disc_params, lr=config.lr)
        total_steps = config.max_epochs * len(batches)
    else:
        params = list(model.named_parameters())
    opt = dc.Adam(params, lr=config.lr)
    plain = [p for _, p in params]

    report = TrainReport()
    stopper = EarlyStopping(config.patience)
    best_state = model.state_dict()
    started = time.perf_counter()
    step = 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        model.train()
        sums = np.zeros(3)
        tokens = 0.0
        for i in shuffle_rng.permutation(len(batches)):
            batch = batches[i]
            if masked:
                batch = apply_masking(batch, mask_rng)
            if adversarial is None:
                total, act, tm = batch_losses(model, batch, config)
            else:
                total, act, tm = _adversarial_step(
                    model, batch, config, adversarial, adversarial.tau(step, total_steps),
                    gumbel_rng, open_rng, disc_opt, report,
                )
            if not np.isfinite(total.item()):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {i}")
            dc.backward(total)
            if adversarial is not None:
                for _, p in disc_params:
                    p.grad = None
            dc.clip_grad_norm(plain, config.clip_norm)
            opt.step()
            step += 1
            count = float(batch.loss_mask.sum())
            sums += count * np.array([total.item(), act.item(), tm.item()])
            tokens += count
        train_total, train_act, train_time = sums / max(tokens, 1.0)
        eval_total, _, _ = evaluate_loss(model, eval_batches, config)
        record = EpochRecord(epoch, train_total, eval_total, train_act, train_time, time.perf_counter() - t0)
        report.records.append(record)
        _append_log(log_path, record)
        if stopper.update(eval_total):
            best_state = model.state_dict()
            report.best_epoch, report.best_eval_loss = epoch, eval_total
            if checkpoint is not None:
                checkpoint(model)
        logger.debug("epoch %d train %.5f eval %.5f", epoch, train_total, eval_total)
        if stopper.should_stop:
            report.stopped_early = True
            break
    model.load_state_dict(best_state)
    model.eval()
    report.wall_clock = time.perf_counter() - started
    return model, report


def _adversarial_step(model, batch, config, adversarial, tau, gumbel_rng, open_rng, disc_opt, report):
    open_rows = open_rng.random(batch.size) < adversarial.open_loop_p
    report.open_loop_sequences += int(open_rows.sum())
    report.total_sequences += batch.size
    if open_rows.any():
        logits, times, samples = model.forward_open_loop(batch, open_rows, tau, gumbel_rng)
    else:
        logits, times = model.forward(batch)
        samples = dc.gumbel_softmax_sample(logits, tau, gumbel_rng)
    total, act, tm = batch_losses(model, batch, config, outputs=(logits, times))

    disc = model.discriminator
    real = np.eye(model.config.vocab_size, dtype=dc.get_dtype())[batch.activity_targets]
    d_loss = discriminator_loss(
        disc.logit(real, batch.time_targets, batch.dec_lengths),
        disc.logit(samples.data, times.data, batch.dec_lengths),
    )
    dc.backward(d_loss)
    disc_opt.step()

    if adversarial.adv_weight > 0:
        fake = disc.logit(samples, times, batch.dec_lengths)
        total = total + adversarial_loss(fake) * adversarial.adv_weight
    return total, act, tm


def fit(
    model_config: ModelConfig,
    train_batches: Sequence[Batch],
    eval_batches: Sequence[Batch],
    vocabulary: Vocabulary,
    scaler: MinMaxScaler,
    max_len: int,
    config: TrainConfig = TrainConfig(),
    adversarial: AdversarialConfig | None = None,
    log_path=None,
) -> TrainedModel:
    """Build, train and wrap a model in one call."""
    model = build_model(model_config, seed=config.seed)
    if isinstance(model, AEGANModel):
        model, report = train_aegan(model, train_batches, eval_batches, config, adversarial or AdversarialConfig(), log_path)
    else:
        model, report = train(model, train_batches, eval_batches, config, log_path)
    return TrainedModel(model, model_config, vocabulary, scaler, max_len, config, report)
