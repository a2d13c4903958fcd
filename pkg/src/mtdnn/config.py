"""Run configuration files.

An INI-style file with a fixed schema::

    [model]
    vocab = vocab.txt        ; required, one token per line
    d = 768
    n_layers = 12
    n_heads = 12
    ffn_multiplier = 4
    san_steps = 5
    max_len = 512
    hidden_dropout = 0.1

    [training]
    lr_peak = 5e-5
    batch_size = 32
    epochs = 5
    warmup_fraction = 0.1
    clip_norm = 1.0
    adamax_beta1 = 0.9
    adamax_beta2 = 0.999
    adamax_eps = 1e-8
    gamma = 1.0
    optimizer = adamax

    [output]
    dir = runs/example

    [task.mnli]              ; one section per task, in training order
    type = pair              ; single | pair | regression | ranking
    labels = entailment,neutral,contradiction
    dropout = 0.3
    pred_dropout = 0.1
    metrics = accuracy
    train = mnli_train.tsv
    dev = mnli_dev.tsv
    test = mnli_test.tsv

Relative paths resolve against the config file's directory. Unknown
sections and keys are rejected.
"""
import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .data import Vocabulary, load_tsv
from .encoder import EncoderConfig
from .errors import ConfigError
from .model import ModelConfig
from .tasks import TaskRegistry, TaskSpec
from .trainer import TrainConfig

MODEL_KEYS = {
    "vocab": str,
    "d": int,
    "n_layers": int,
    "n_heads": int,
    "ffn_multiplier": int,
    "san_steps": int,
    "max_len": int,
    "hidden_dropout": float,
}
TRAINING_KEYS = {
    "lr_peak": float,
    "batch_size": int,
    "epochs": int,
    "warmup_fraction": float,
    "clip_norm": float,
    "adamax_beta1": float,
    "adamax_beta2": float,
    "adamax_eps": float,
    "gamma": float,
    "optimizer": str,
}
OUTPUT_KEYS = {"dir": str}
TASK_KEYS = {
    "type": str,
    "labels": str,
    "dropout": float,
    "pred_dropout": float,
    "metrics": str,
    "train": str,
    "dev": str,
    "test": str,
}
MODEL_DEFAULTS = {
    "d": 768,
    "n_layers": 12,
    "n_heads": 12,
    "ffn_multiplier": 4,
    "san_steps": 5,
    "max_len": 512,
    "hidden_dropout": 0.1,
}


@dataclass
class RunConfig:
    model: dict
    vocab_path: Path
    training: TrainConfig
    tasks: list = field(default_factory=list)
    output_dir: Path = None
    base_dir: Path = Path(".")

    def vocab(self):
        try:
            return Vocabulary.from_file(self.vocab_path)
        except OSError as exc:
            raise ConfigError(f"cannot read vocabulary {self.vocab_path}: {exc.strerror}") from None

    def model_config(self, vocab_size):
        m = self.model
        enc = EncoderConfig(
            vocab_size=vocab_size,
            d=m["d"],
            n_layers=m["n_layers"],
            n_heads=m["n_heads"],
            max_len=m["max_len"],
            ffn_mult=m["ffn_multiplier"],
            hidden_dropout=m["hidden_dropout"],
        )
        return ModelConfig(enc, m["san_steps"])

    def train_config(self, seed):
        return replace(self.training, seed=int(seed))

    def task(self, name):
        for spec in self.tasks:
            if spec.name == name:
                return spec
        raise ConfigError(f"task {name!r} is not defined in the config")

    def load_split(self, spec, split="train"):
        path = spec.path(split)
        if path is None:
            raise ConfigError(f"task {spec.name!r} has no {split} data path")
        try:
            return load_tsv(path, spec, split)
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None

    def registry(self, vocab, specs=None, split="train"):
        specs = self.tasks if specs is None else specs
        return TaskRegistry.build(
            [(s, self.load_split(s, split)) for s in specs], vocab, self.model["max_len"]
        )


def _typed(section, key, raw, kind):
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {kind.__name__}") from None


def _section(parser, name, schema):
    out = {}
    for key, raw in parser.items(name):
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in section [{name}]")
        out[key] = _typed(name, key, raw, schema[key])
    return out


def _split_list(raw):
    return tuple(v.strip() for v in raw.split(",") if v.strip())


def parse_config(text, base_dir="."):
    base_dir = Path(base_dir)
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=(";",), default_section="__no_defaults__"
    )
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None

    for name in parser.sections():
        if name not in ("model", "training", "output") and not name.startswith("task."):
            raise ConfigError(f"unknown section [{name}]")
    if not parser.has_section("model"):
        raise ConfigError("missing [model] section")

    model = dict(MODEL_DEFAULTS)
    model.update(_section(parser, "model", MODEL_KEYS))
    if "vocab" not in model:
        raise ConfigError("[model] vocab is required")
    vocab_path = base_dir / model.pop("vocab")

    training = _section(parser, "training", TRAINING_KEYS) if parser.has_section("training") else {}
    train_cfg = TrainConfig(**training)

    output = _section(parser, "output", OUTPUT_KEYS) if parser.has_section("output") else {}
    output_dir = base_dir / output["dir"] if "dir" in output else None

    tasks = []
    for name in parser.sections():
        if not name.startswith("task."):
            continue
        task_name = name[len("task."):]
        if not task_name:
            raise ConfigError("task section needs a name: [task.NAME]")
        values = _section(parser, name, TASK_KEYS)
        if "type" not in values:
            raise ConfigError(f"[{name}] type is required")
        paths = {s: str(base_dir / values[s]) for s in ("train", "dev", "test") if s in values}
        tasks.append(
            TaskSpec(
                name=task_name,
                task_type=values["type"],
                labels=_split_list(values.get("labels", "")),
                dropout=values.get("dropout", 0.1),
                pred_dropout=values.get("pred_dropout", 0.1),
                metrics=_split_list(values.get("metrics", "")),
                paths=paths,
            )
        )
    if not tasks:
        raise ConfigError("config defines no [task.NAME] sections")
    return RunConfig(model, vocab_path, train_cfg, tasks, output_dir, base_dir)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)
