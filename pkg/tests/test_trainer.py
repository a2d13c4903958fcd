import collections

import numpy as np
import pytest

from mtdnn.checkpoint import load_checkpoint
from mtdnn.data import make_synthetic, synthetic_vocab
from mtdnn.errors import CheckpointError, ConfigError, NumericError
from mtdnn.model import MTDNN
from mtdnn.rng import stream
from mtdnn.tasks import TaskRegistry
from mtdnn.trainer import (
    TrainConfig,
    TrainerState,
    batches_per_epoch,
    fine_tune,
    load_training_checkpoint,
    pack_epoch,
    run_training,
    train_step,
)

from conftest import VOCAB, synthetic_spec, tiny_model_config


def registry_of(sizes, kinds=None, seed=0):
    kinds = kinds or ["single"] * len(sizes)
    rng = np.random.default_rng(seed)
    pairs = []
    for i, (kind, n) in enumerate(zip(kinds, sizes)):
        spec = synthetic_spec(kind, f"{kind}{i}")
        pairs.append((spec, make_synthetic(kind, n, VOCAB, rng, spec.name)))
    return TaskRegistry.build(pairs, synthetic_vocab(VOCAB), 32)


def model_for(registry, seed=0, **kw):
    return MTDNN.create(tiny_model_config(**kw), registry.specs, seed)


def params_bytes(model):
    return {n: a.tobytes() for n, a in model.state_dict().items()}


# -- epoch packing ----------------------------------------------------------
def test_pack_epoch_counts_and_coverage():
    reg = registry_of([10, 20])
    plan = pack_epoch(reg, 5, stream(0, "shuffle", 1))
    assert len(plan) == 6 and plan.counts(2) == [2, 4]
    for ti, task in enumerate(reg):
        seen = collections.Counter(i for b in plan.batches if b.task == ti for i in b.indices)
        assert seen == collections.Counter(range(len(task)))


def test_short_last_batch_is_kept():
    plan = pack_epoch(registry_of([7]), 5, stream(0, "shuffle", 1))
    assert sorted(len(b.indices) for b in plan.batches) == [2, 5]
    plan = pack_epoch(registry_of([5]), 5, stream(0, "shuffle", 1))
    assert len(plan) == 1 and sorted(plan.batches[0].indices) == list(range(5))


def test_pack_epoch_is_seeded():
    reg = registry_of([10, 20])
    a = pack_epoch(reg, 5, stream(3, "shuffle", 1))
    assert a == pack_epoch(reg, 5, stream(3, "shuffle", 1))
    assert a != pack_epoch(reg, 5, stream(4, "shuffle", 1))


def test_first_batch_follows_task_proportions():
    reg = registry_of([10, 20])
    hits = sum(pack_epoch(reg, 5, stream(s, "shuffle", 1)).batches[0].task == 1 for s in range(1000))
    assert abs(hits / 1000 - 2 / 3) <= 0.05


# -- single steps -------------------------------------------------------------
def test_zero_learning_rate_keeps_parameters():
    reg = registry_of([4])
    model = model_for(reg)
    before = params_bytes(model)
    log = run_training(reg, model, TrainConfig(lr_peak=0.0, batch_size=4, epochs=1))
    assert len(log.records) == 1 and params_bytes(model) == before


def test_first_scheduled_step_has_zero_lr():
    reg = registry_of([8])
    model = model_for(reg)
    before = params_bytes(model)
    cfg = TrainConfig(lr_peak=1e-2, batch_size=4, epochs=1)
    state = TrainerState.fresh(cfg)
    plan = pack_epoch(reg, 4, stream(0, "shuffle", 1))
    record = train_step(plan.batches[0], model, reg, state, cfg, 2, 1)
    assert record.lr == 0.0 and params_bytes(model) == before
    record = train_step(plan.batches[1], model, reg, state, cfg, 2, 1)
    assert record.lr > 0 and params_bytes(model) != before


def test_only_the_batch_task_head_moves():
    reg = registry_of([4, 4], ["single", "regression"])
    model = model_for(reg)
    cfg = TrainConfig(lr_peak=1e-2, batch_size=4, epochs=1, warmup_fraction=0.0)
    state = TrainerState.fresh(cfg)
    batch = next(b for b in pack_epoch(reg, 4, stream(0, "shuffle", 1)).batches if b.task == 0)
    before = params_bytes(model)
    train_step(batch, model, reg, state, cfg, 10, 1)
    after = params_bytes(model)
    changed = {n for n in before if before[n] != after[n]}
    assert any(n.startswith("encoder.") for n in changed)
    assert any(n.startswith("heads.single0.") for n in changed)
    assert not any(n.startswith("heads.regression1.") for n in changed)
    assert "heads.regression1.w" not in state.optimizer.state


def test_gradients_are_clipped_before_update():
    reg = registry_of([4])
    model = model_for(reg)
    cfg = TrainConfig(lr_peak=0.0, batch_size=4, epochs=1, clip_norm=1e-6)
    state = TrainerState.fresh(cfg)
    record = train_step(pack_epoch(reg, 4, stream(0, "shuffle", 1)).batches[0], model, reg, state, cfg, 1, 1)
    assert record.grad_norm > 1e-6
    post = np.sqrt(sum(float((t.grad ** 2).sum()) for _, t in model.task_parameters("single0")))
    assert post <= 1e-6 + 1e-9


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_step_leaves_parameters():
    reg = registry_of([4])
    model = model_for(reg)
    model.encoder["encoder.word_emb"].data[:] = 1e308
    before = params_bytes(model)
    cfg = TrainConfig(lr_peak=1e-2, batch_size=4, epochs=1)
    state = TrainerState.fresh(cfg)
    with pytest.raises(NumericError):
        train_step(pack_epoch(reg, 4, stream(0, "shuffle", 1)).batches[0], model, reg, state, cfg, 1, 1)
    assert params_bytes(model) == before and state.step == 0


# -- full runs ---------------------------------------------------------------------
def test_equal_seeds_give_bitwise_logs():
    reg = registry_of([6, 5, 4, 4], ["single", "pair", "regression", "ranking"])
    cfg = TrainConfig(lr_peak=1e-3, batch_size=3, epochs=2, seed=11)
    logs = [run_training(reg, model_for(reg, seed=11), cfg).lines() for _ in range(2)]
    assert logs[0] == logs[1] and len(logs[0]) == 2 * batches_per_epoch(reg, 3)
    other = run_training(reg, model_for(reg, seed=11), TrainConfig(lr_peak=1e-3, batch_size=3, epochs=2, seed=12))
    assert other.lines() != logs[0]


def test_log_and_checkpoints_written(tmp_path):
    reg = registry_of([6])
    cfg = TrainConfig(lr_peak=1e-3, batch_size=4, epochs=2)
    log = run_training(reg, model_for(reg), cfg, out_dir=tmp_path)
    lines = (tmp_path / "train.log").read_text().splitlines()
    assert lines == log.lines() and len(lines) == 4
    epoch, step, task, loss, lr = lines[-1].split("\t")
    assert (epoch, step, task) == ("2", "4", "single0") and float(loss) > 0
    for name in ("checkpoint-epoch1.ckpt", "checkpoint-epoch2.ckpt", "model.ckpt"):
        assert (tmp_path / name).exists()


def test_checkpoint_round_trip_restores_state(tmp_path):
    reg = registry_of([6, 4], ["single", "pair"])
    cfg = TrainConfig(lr_peak=1e-3, batch_size=4, epochs=1, seed=5)
    model = model_for(reg, seed=5)
    run_training(reg, model, cfg, out_dir=tmp_path)
    clone = model_for(reg, seed=99)
    state = load_training_checkpoint(tmp_path / "model.ckpt", clone, cfg)
    assert params_bytes(clone) == params_bytes(model)
    assert (state.step, state.epoch, state.seed) == (3, 1, 5)
    saved = load_checkpoint(tmp_path / "model.ckpt")
    for (name, arr) in state.to_arrays(clone):
        assert saved[name].tobytes() == np.asarray(arr, dtype=np.float64).tobytes()


def test_resume_matches_uninterrupted_run(tmp_path):
    reg = registry_of([6, 5], ["single", "regression"])
    cfg = TrainConfig(lr_peak=1e-3, batch_size=4, epochs=3, seed=2)
    full_model = model_for(reg, seed=2)
    full = run_training(reg, full_model, cfg, out_dir=tmp_path / "full")

    resumed = model_for(reg, seed=2)
    state = load_training_checkpoint(tmp_path / "full" / "checkpoint-epoch1.ckpt", resumed, cfg)
    rest = run_training(reg, resumed, cfg, state=state)
    assert full.lines()[-len(rest.records):] == rest.lines()
    assert params_bytes(resumed) == params_bytes(full_model)


def test_training_reduces_loss_on_64_examples():
    rng = np.random.default_rng(0)
    spec = synthetic_spec("single")
    reg = TaskRegistry.build([(spec, make_synthetic("single", 64, 100, rng))], synthetic_vocab(100), 32)
    model = MTDNN.create(tiny_model_config(vocab_size=100, d=32, n_layers=2, n_heads=2), [spec], 0)
    log = run_training(reg, model, TrainConfig(lr_peak=1e-3, batch_size=16, epochs=60, seed=0))
    losses = log.losses()
    assert losses[-1] <= 0.1 * losses[0]


def test_training_validates_inputs():
    reg = registry_of([4])
    with pytest.raises(ConfigError):
        run_training(TaskRegistry(), model_for(reg), TrainConfig())
    other = registry_of([4], ["pair"])
    with pytest.raises(ConfigError, match="no head"):
        run_training(other, model_for(reg), TrainConfig())
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="rmsprop")


# -- fine-tuning -------------------------------------------------------------------
def test_fine_tune_equals_single_task_run():
    source = registry_of([6], ["single"])
    trained = model_for(source, seed=1)
    run_training(source, trained, TrainConfig(lr_peak=1e-3, batch_size=4, epochs=1))
    arrays = trained.state_dict()

    rng = np.random.default_rng(4)
    spec = synthetic_spec("pair", "target")
    data = make_synthetic("pair", 6, VOCAB, rng, "target")
    cfg = TrainConfig(lr_peak=1e-3, batch_size=4, epochs=2, seed=8)
    mc = tiny_model_config()
    tuned, log = fine_tune(arrays, spec, data, cfg, mc, synthetic_vocab(VOCAB))

    manual = MTDNN.create(mc, [spec], 8)
    manual.load_state_dict(arrays, prefix="encoder.")
    reg = TaskRegistry.build([(spec, data)], synthetic_vocab(VOCAB), 32)
    manual_log = run_training(reg, manual, cfg)
    assert log.lines() == manual_log.lines()
    assert params_bytes(tuned) == params_bytes(manual)


def test_fine_tune_replaces_head_with_new_label_count(tmp_path):
    reg = registry_of([6], ["pair"])
    source = model_for(reg)
    path = tmp_path / "m.ckpt"
    from mtdnn.checkpoint import save_checkpoint
    save_checkpoint(path, source.state_dict().items())
    spec = synthetic_spec("single", "pair0")
    data = make_synthetic("single", 4, VOCAB, np.random.default_rng(0), "pair0")
    cfg = TrainConfig(lr_peak=0.0, batch_size=4, epochs=1)
    tuned, _ = fine_tune(str(path), spec, data, cfg, tiny_model_config(), synthetic_vocab(VOCAB))
    assert tuned.heads["pair0"].W.shape == (16, 2)
    assert tuned.encoder["encoder.word_emb"].data.tobytes() == source.encoder["encoder.word_emb"].data.tobytes()


def test_fine_tune_rejects_encoder_shape_mismatch():
    reg = registry_of([4])
    arrays = model_for(reg, d=8).state_dict()
    spec = synthetic_spec("single", "t")
    data = make_synthetic("single", 4, VOCAB, np.random.default_rng(0), "t")
    with pytest.raises(CheckpointError, match="encoder.word_emb"):
        fine_tune(arrays, spec, data, TrainConfig(), tiny_model_config(), synthetic_vocab(VOCAB))
