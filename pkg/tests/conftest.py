import numpy as np
import pytest

from mtdnn.data import make_synthetic, synthetic_spec_labels, synthetic_vocab, write_tsv
from mtdnn.encoder import EncoderConfig
from mtdnn.model import ModelConfig
from mtdnn.tasks import TaskSpec

VOCAB = 60
TINY = dict(d=16, n_layers=1, n_heads=2, ffn_multiplier=2, san_steps=3, max_len=32, hidden_dropout=0.1)


def tiny_model_config(vocab_size=VOCAB, d=16, n_layers=1, n_heads=2, san_steps=3, hidden_dropout=0.1):
    enc = EncoderConfig(vocab_size=vocab_size, d=d, n_layers=n_layers, n_heads=n_heads, max_len=32,
                        ffn_mult=2, hidden_dropout=hidden_dropout)
    return ModelConfig(enc, san_steps)


def synthetic_spec(kind, name=None, **kw):
    return TaskSpec(name or kind, kind, synthetic_spec_labels(kind), **kw)


def write_run(tmp_path, kinds=("single",), sizes=None, training=None, model=None, extra_task_lines=""):
    """Write a vocabulary, per-task TSV splits and a config; return the config path."""
    vocab = synthetic_vocab(VOCAB)
    vocab.to_file(tmp_path / "vocab.txt")
    rng = np.random.default_rng(123)
    sizes = sizes or [12] * len(kinds)
    m = dict(TINY, **(model or {}))
    t = dict(dict(lr_peak=1e-3, batch_size=4, epochs=1), **(training or {}))
    lines = ["[model]", "vocab = vocab.txt"] + [f"{k} = {v}" for k, v in m.items()]
    lines += ["", "[training]"] + [f"{k} = {v}" for k, v in t.items()]
    lines += ["", "[output]", "dir = out"]
    for kind, n in zip(kinds, sizes):
        spec = synthetic_spec(kind)
        for split, count in (("train", n), ("dev", max(4, n // 2))):
            data = make_synthetic(kind, count, VOCAB, rng, kind)
            write_tsv(data, spec, tmp_path / f"{kind}_{split}.tsv")
        lines += ["", f"[task.{kind}]", f"type = {kind}"]
        if spec.labels:
            lines.append("labels = " + ",".join(spec.labels))
        lines += [f"train = {kind}_train.tsv", f"dev = {kind}_dev.tsv"]
    path = tmp_path / "run.ini"
    path.write_text("\n".join(lines) + "\n" + extra_task_lines)
    return path


@pytest.fixture
def run_dir(tmp_path):
    return tmp_path


# -- acceptance reporting -------------------------------------------------
_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[number] = (title, report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcome = _CRITERIA[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {title}")
