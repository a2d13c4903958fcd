"""Multi-task mini-batch training.

Each epoch packs every task's examples into single-task mini-batches,
merges and shuffles them, then runs one optimiser step per batch with the
loss that matches the batch's task type.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, ConfigError, NumericError
from .model import MTDNN
from .optim import SGD, Adamax, clip_gradients, global_grad_norm, lr_at
from .rng import join_seed, split_seed, stream
from .tasks import TaskRegistry
from .tensor import backward

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr_peak: float = 5e-5
    batch_size: int = 32
    epochs: int = 5
    warmup_fraction: float = 0.1
    clip_norm: float = 1.0
    adamax_beta1: float = 0.9
    adamax_beta2: float = 0.999
    adamax_eps: float = 1e-8
    gamma: float = 1.0
    seed: int = 0
    optimizer: str = "adamax"

    def __post_init__(self):
        if self.lr_peak < 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("lr_peak must be >= 0, batch_size and epochs >= 1")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must be in [0, 1)")
        if self.clip_norm <= 0 or self.gamma <= 0 or self.adamax_eps <= 0:
            raise ConfigError("clip_norm, gamma and adamax_eps must be positive")
        if not (0.0 <= self.adamax_beta1 < 1.0 and 0.0 <= self.adamax_beta2 < 1.0):
            raise ConfigError("Adamax betas must be in [0, 1)")
        if self.optimizer not in ("adamax", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def make_optimizer(self):
        if self.optimizer == "sgd":
            return SGD()
        return Adamax(self.adamax_beta1, self.adamax_beta2, self.adamax_eps)


@dataclass
class TrainerState:
    seed: int
    optimizer: object
    step: int = 0
    epoch: int = 0  # completed epochs

    @classmethod
    def fresh(cls, config):
        return cls(config.seed, config.make_optimizer())

    def to_arrays(self, model):
        arrays = [
            ("trainer.step", np.array([float(self.step)])),
            ("trainer.epoch", np.array([float(self.epoch)])),
            ("trainer.seed", np.array(split_seed(self.seed))),
        ]
        if isinstance(self.optimizer, Adamax):
            shapes = {name: t.shape for name, t in model.named_parameters()}
            arrays += self.optimizer.state_arrays(shapes)
        return arrays

    @classmethod
    def from_arrays(cls, arrays, config):
        try:
            step = int(arrays["trainer.step"][0])
            epoch = int(arrays["trainer.epoch"][0])
            seed = join_seed(*arrays["trainer.seed"])
        except KeyError as exc:
            raise CheckpointError(f"checkpoint lacks trainer state entry {exc}") from None
        opt = config.make_optimizer()
        opt.load_state_arrays({k: v for k, v in arrays.items() if k.startswith("optim.")})
        return cls(seed, opt, step, epoch)


@dataclass(frozen=True)
class Batch:
    task: int
    task_name: str
    indices: tuple


@dataclass
class EpochPlan:
    batches: list

    def __len__(self):
        return len(self.batches)

    def counts(self, n_tasks):
        out = [0] * n_tasks
        for b in self.batches:
            out[b.task] += 1
        return out


def batches_per_epoch(registry, batch_size):
    return sum(math.ceil(len(t) / batch_size) for t in registry)


def pack_epoch(registry, batch_size, rng):
    """Shuffle each task, cut it into mini-batches, then shuffle the merged list."""
    batches = []
    for ti, task in enumerate(registry):
        n = len(task)
        if n == 0:
            raise ConfigError(f"task {task.name!r} has no training examples")
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batches.append(Batch(ti, task.name, tuple(int(i) for i in order[start:start + batch_size])))
    merged = rng.permutation(len(batches))
    return EpochPlan([batches[i] for i in merged])


@dataclass(frozen=True)
class StepRecord:
    epoch: int
    global_step: int
    task_name: str
    loss: float
    lr: float
    grad_norm: float = 0.0

    def line(self):
        return f"{self.epoch}\t{self.global_step}\t{self.task_name}\t{self.loss:.17g}\t{self.lr:.17g}"


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    def lines(self):
        return [r.line() for r in self.records]

    def losses(self):
        return [r.loss for r in self.records]


def train_step(batch, model, registry, state, config, total_steps, epoch=None):
    """Forward, backward, clip and update on one single-task batch."""
    task = registry[batch.task]
    inputs = [task.features.inputs[i] for i in batch.indices]
    targets = [task.features.targets[i] for i in batch.indices]
    params = model.task_parameters(task.name)
    lr = lr_at(state.step, total_steps, config.lr_peak, config.warmup_fraction)
    rng = stream(state.seed, "dropout", state.step)

    model.zero_grad()
    try:
        loss = model.loss(task.name, inputs, targets, training=True, rng=rng, gamma=config.gamma)
        backward(loss.value)
        norm = global_grad_norm(t for _, t in params)
        clip_gradients((t for _, t in params), config.clip_norm)
    except NumericError:
        model.zero_grad()
        raise
    state.optimizer.step(params, lr)
    state.step += 1
    return StepRecord(
        epoch if epoch is not None else state.epoch + 1, state.step, task.name, loss.item(), lr, norm
    )


def _checkpoint_arrays(model, state):
    return list(model.state_dict().items()) + state.to_arrays(model)


def save_training_checkpoint(path, model, state):
    return save_checkpoint(path, _checkpoint_arrays(model, state))


def load_training_checkpoint(path, model, config):
    """Restore parameters and trainer state saved by :func:`run_training`."""
    arrays = load_checkpoint(path)
    params = {k: v for k, v in arrays.items() if not k.startswith(("trainer.", "optim."))}
    model.load_state_dict(params)
    return TrainerState.from_arrays(arrays, config)


def run_training(registry, model, config, out_dir=None, state=None, on_step=None):
    """Run ``config.epochs`` epochs over the merged task batches.

    Writes ``train.log`` and one checkpoint per epoch under ``out_dir`` when
    given. ``on_step(record, model)`` is called after every update.
    """
    if not isinstance(registry, TaskRegistry) or len(registry) == 0:
        raise ConfigError("training needs at least one task")
    for task in registry:
        if task.name not in model.heads:
            raise ConfigError(f"model has no head for task {task.name!r}")
    state = state or TrainerState.fresh(config)
    total_steps = config.epochs * batches_per_epoch(registry, config.batch_size)
    log = TrainingLog()
    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train.log", "a" if state.step else "w", encoding="utf-8")
    try:
        for epoch in range(state.epoch + 1, config.epochs + 1):
            plan = pack_epoch(registry, config.batch_size, stream(state.seed, "shuffle", epoch))
            for batch in plan.batches:
                record = train_step(batch, model, registry, state, config, total_steps, epoch)
                log.records.append(record)
                if log_fh is not None:
                    log_fh.write(record.line() + "\n")
                if on_step is not None:
                    on_step(record, model)
            state.epoch = epoch
            logger.info("epoch %d done, step %d, last loss %.6g", epoch, state.step, log.records[-1].loss)
            if out_dir is not None:
                log_fh.flush()
                path = save_training_checkpoint(out_dir / f"checkpoint-epoch{epoch}.ckpt", model, state)
                save_training_checkpoint(out_dir / "model.ckpt", model, state)
                log.checkpoints.append(path)
    finally:
        if log_fh is not None:
            log_fh.close()
    return log


def fine_tune(checkpoint, new_task, data, config, model_config, vocab, out_dir=None, on_step=None):
    """Adapt a trained shared encoder to a new task with a fresh head.

    ``checkpoint`` is a path or a ``name -> array`` mapping; only its
    ``encoder.*`` entries are used. Returns ``(model, log)``.
    """
    arrays = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, Path)) else checkpoint
    model = MTDNN.create(model_config, [new_task], config.seed)
    model.load_state_dict(arrays, prefix="encoder.")
    registry = TaskRegistry.build([(new_task, data)], vocab, model_config.encoder.max_len)
    log = run_training(registry, model, config, out_dir=out_dir, on_step=on_step)
    return model, log
