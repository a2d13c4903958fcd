"""Task descriptors and the featurised per-task datasets used for training."""
from dataclasses import dataclass, field

import numpy as np

from .data import PairSentence, RankingQuery, Regression, SingleSentence, tokenize
from .encoder import pack
from .errors import ConfigError, InputError
from .heads import PAIR, RANKING, REGRESSION, SINGLE, TASK_TYPES

ALLOWED_METRICS = {
    SINGLE: ("accuracy", "f1", "mcc"),
    PAIR: ("accuracy", "f1", "mcc"),
    REGRESSION: ("pearson", "spearman"),
    RANKING: ("accuracy",),
}
DEFAULT_METRICS = {
    SINGLE: ("accuracy",),
    PAIR: ("accuracy",),
    REGRESSION: ("pearson", "spearman"),
    RANKING: ("accuracy",),
}


@dataclass(frozen=True)
class TaskSpec:
    """One task: its type, label inventory, head dropout and metrics.

    ``labels`` lists the class strings found in data files, in class-index
    order. Regression and ranking tasks carry no labels.
    """

    name: str
    task_type: str
    labels: tuple = ()
    dropout: float = 0.1
    metrics: tuple = ()
    paths: tuple = ()  # ((split, path), ...)
    pred_dropout: float = 0.1

    def __post_init__(self):
        if self.task_type not in TASK_TYPES:
            raise ConfigError(f"task {self.name!r}: unknown type {self.task_type!r}")
        object.__setattr__(self, "labels", tuple(str(v) for v in self.labels))
        if self.is_classification:
            if len(self.labels) < 2:
                raise ConfigError(f"task {self.name!r}: classification needs at least 2 labels")
            if len(set(self.labels)) != len(self.labels):
                raise ConfigError(f"task {self.name!r}: duplicate labels")
        elif self.labels:
            raise ConfigError(f"task {self.name!r}: {self.task_type} tasks take no labels")
        if not 0.0 <= self.dropout < 1.0 or not 0.0 <= self.pred_dropout < 1.0:
            raise ConfigError(f"task {self.name!r}: dropout must be in [0, 1)")
        metrics = tuple(self.metrics) or DEFAULT_METRICS[self.task_type]
        for m in metrics:
            if m not in ALLOWED_METRICS[self.task_type]:
                raise ConfigError(f"task {self.name!r}: metric {m!r} not available for {self.task_type}")
            if m in ("f1", "mcc") and self.n_labels != 2:
                raise ConfigError(f"task {self.name!r}: {m} needs exactly two labels")
        object.__setattr__(self, "metrics", metrics)
        object.__setattr__(self, "paths", tuple(self.paths.items()) if isinstance(self.paths, dict) else tuple(self.paths))

    @property
    def is_classification(self):
        return self.task_type in (SINGLE, PAIR)

    @property
    def n_labels(self):
        if self.is_classification:
            return len(self.labels)
        return 1

    def path(self, split):
        return dict(self.paths).get(split)

    def label_index(self, label):
        try:
            return self.labels.index(label)
        except ValueError:
            raise InputError(f"task {self.name!r}: unknown label {label!r}") from None


@dataclass
class Features:
    """Packed inputs for one task.

    ``inputs[i]`` is a PackedInput, or for ranking a list of PackedInputs
    (one per candidate). ``targets[i]`` is a class index, a real score, or
    the index of the positive candidate.
    """

    inputs: list
    targets: list

    def __len__(self):
        return len(self.inputs)


def featurize(split, spec, vocab, max_len=512):
    def packed(a, b=None):
        return pack(tokenize(a, vocab), None if b is None else tokenize(b, vocab), max_len,
                    cls_id=vocab.cls_id, sep_id=vocab.sep_id)

    inputs, targets = [], []
    for ex in split.examples:
        if spec.task_type == SINGLE and isinstance(ex, SingleSentence):
            inputs.append(packed(ex.text))
            targets.append(ex.label)
        elif spec.task_type == PAIR and isinstance(ex, PairSentence):
            inputs.append(packed(ex.text_a, ex.text_b))
            targets.append(ex.label)
        elif spec.task_type == REGRESSION and isinstance(ex, Regression):
            inputs.append(packed(ex.text_a, ex.text_b))
            targets.append(float(ex.y))
        elif spec.task_type == RANKING and isinstance(ex, RankingQuery):
            inputs.append([packed(ex.query, text) for text, _ in ex.candidates])
            targets.append(ex.positive_index)
        else:
            raise InputError(f"task {spec.name!r} ({spec.task_type}) got a {type(ex).__name__} example")
    return Features(inputs, targets)


@dataclass
class Task:
    spec: TaskSpec
    split: object  # DatasetSplit
    features: Features

    @property
    def name(self):
        return self.spec.name

    def __len__(self):
        return len(self.features)


@dataclass
class TaskRegistry:
    """The ordered set of tasks trained together."""

    tasks: list = field(default_factory=list)

    @classmethod
    def build(cls, pairs, vocab, max_len=512):
        """``pairs`` is an iterable of ``(TaskSpec, DatasetSplit)``."""
        registry = cls()
        for spec, split in pairs:
            registry.add(spec, split, vocab, max_len)
        return registry

    def add(self, spec, split, vocab, max_len=512):
        if any(t.name == spec.name for t in self.tasks):
            raise ConfigError(f"duplicate task name {spec.name!r}")
        self.tasks.append(Task(spec, split, featurize(split, spec, vocab, max_len)))

    def __iter__(self):
        return iter(self.tasks)

    def __len__(self):
        return len(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]

    def by_name(self, name):
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(name)

    @property
    def specs(self):
        return [t.spec for t in self.tasks]

    def sizes(self):
        return np.array([len(t) for t in self.tasks])
