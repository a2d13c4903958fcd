"""Vocabulary, wordpiece tokenisation, TSV corpora, subsampling and synthetic tasks."""
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError
from .heads import PAIR, RANKING, REGRESSION, SINGLE

CLS, SEP, UNK, PAD = "[CLS]", "[SEP]", "[UNK]", "[PAD]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP)
SUBSAMPLE_FRACTIONS = (0.001, 0.01, 0.1, 1.0)


class Vocabulary:
    """Token to id map; ids are dense and follow file order."""

    def __init__(self, tokens):
        tokens = list(tokens)
        self.id_of = {}
        for i, tok in enumerate(tokens):
            if not tok:
                raise InputError(f"empty token at id {i}")
            if tok in self.id_of:
                raise InputError(f"duplicate token {tok!r} at id {i}")
            self.id_of[tok] = i
        missing = [t for t in SPECIAL_TOKENS if t not in self.id_of]
        if missing:
            raise InputError(f"vocabulary lacks special tokens {missing}")
        self.tokens = tokens
        self.cls_id = self.id_of[CLS]
        self.sep_id = self.id_of[SEP]
        self.unk_id = self.id_of[UNK]
        self.pad_id = self.id_of[PAD]

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\r\n") for line in fh)

    def to_file(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.id_of

    def __getitem__(self, token):
        return self.id_of[token]


def tokenize(text, vocab, max_chars_per_word=100):
    """Whitespace split, then greedy longest-match wordpieces per word.

    Continuation pieces carry a ``##`` prefix. A word that cannot be fully
    segmented becomes a single ``[UNK]``.
    """
    ids = []
    for word in text.split():
        if len(word) > max_chars_per_word:
            ids.append(vocab.unk_id)
            continue
        pieces = []
        start = 0
        while start < len(word):
            end = len(word)
            match = None
            while start < end:
                piece = word[start:end] if start == 0 else "##" + word[start:end]
                if piece in vocab.id_of:
                    match = vocab.id_of[piece]
                    break
                end -= 1
            if match is None:
                pieces = [vocab.unk_id]
                break
            pieces.append(match)
            start = end
        ids.extend(pieces)
    return ids


# -- examples ----------------------------------------------------------
@dataclass(frozen=True)
class SingleSentence:
    text: str
    label: int


@dataclass(frozen=True)
class PairSentence:
    text_a: str
    text_b: str
    label: int


@dataclass(frozen=True)
class Regression:
    text_a: str
    text_b: str
    y: float

    def __post_init__(self):
        if not math.isfinite(self.y):
            raise InputError(f"regression target must be finite, got {self.y}")


@dataclass(frozen=True)
class RankingQuery:
    query_id: str
    query: str
    candidates: tuple  # ((text, is_positive), ...)

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple((str(t), bool(p)) for t, p in self.candidates))
        n_pos = sum(p for _, p in self.candidates)
        if n_pos != 1:
            raise InputError(f"query {self.query_id!r} has {n_pos} positives, expected exactly 1")

    @property
    def positive_index(self):
        return next(i for i, (_, p) in enumerate(self.candidates) if p)


@dataclass
class DatasetSplit:
    examples: list
    task_name: str = ""
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "dev", "test"):
            raise InputError(f"unknown split {self.split!r}")
        if self.split == "train" and not self.examples:
            raise InputError(f"training split for {self.task_name!r} is empty")

    def __len__(self):
        return len(self.examples)


# -- TSV ---------------------------------------------------------------
_COLUMNS = {SINGLE: 2, PAIR: 3, REGRESSION: 3, RANKING: 4}


def _check_text(text, path, lineno):
    if not text.strip():
        raise ParseError("empty text field", path, lineno)
    return text


def load_tsv(path, task_spec, split="train"):
    """Parse one split of a task from its tab-separated file.

    Layouts (no header): single ``label, text``; pair and regression
    ``label, text_a, text_b``; ranking ``query_id, is_positive, query,
    candidate`` with rows grouped by query id.
    """
    ttype = task_spec.task_type
    n_cols = _COLUMNS[ttype]
    examples = []
    groups = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != n_cols:
                raise ParseError(f"expected {n_cols} columns for {ttype} task, got {len(cols)}", path, lineno)
            if ttype == SINGLE:
                examples.append(SingleSentence(_check_text(cols[1], path, lineno), _label(task_spec, cols[0], path, lineno)))
            elif ttype == PAIR:
                examples.append(PairSentence(_check_text(cols[1], path, lineno), _check_text(cols[2], path, lineno),
                                             _label(task_spec, cols[0], path, lineno)))
            elif ttype == REGRESSION:
                try:
                    y = float(cols[0])
                except ValueError:
                    raise ParseError(f"regression label {cols[0]!r} is not a number", path, lineno) from None
                if not math.isfinite(y):
                    raise ParseError(f"regression label {cols[0]!r} is not finite", path, lineno)
                examples.append(Regression(_check_text(cols[1], path, lineno), _check_text(cols[2], path, lineno), y))
            else:
                qid, flag, query, cand = cols
                if flag not in ("0", "1"):
                    raise ParseError(f"is_positive must be 0 or 1, got {flag!r}", path, lineno)
                if qid not in groups:
                    groups[qid] = (query, [], lineno)
                    examples.append(qid)
                elif groups[qid][0] != query:
                    raise ParseError(f"query {qid!r} has inconsistent query text", path, lineno)
                groups[qid][1].append((_check_text(cand, path, lineno), flag == "1"))
    if ttype == RANKING:
        built = []
        for qid in examples:
            query, cands, first_line = groups[qid]
            try:
                built.append(RankingQuery(qid, query, tuple(cands)))
            except InputError as exc:
                raise ParseError(str(exc), path, first_line) from None
        examples = built
    return DatasetSplit(examples, task_spec.name, split)


def _label(spec, raw, path, lineno):
    try:
        return spec.label_index(raw)
    except InputError as exc:
        raise ParseError(str(exc), path, lineno) from None


def tsv_lines(split, task_spec):
    """Serialise a split back to the TSV layout ``load_tsv`` reads."""
    lines = []
    for ex in split.examples:
        if isinstance(ex, SingleSentence):
            lines.append(f"{task_spec.labels[ex.label]}\t{ex.text}")
        elif isinstance(ex, PairSentence):
            lines.append(f"{task_spec.labels[ex.label]}\t{ex.text_a}\t{ex.text_b}")
        elif isinstance(ex, Regression):
            lines.append(f"{ex.y!r}\t{ex.text_a}\t{ex.text_b}")
        else:
            for text, pos in ex.candidates:
                lines.append(f"{ex.query_id}\t{int(pos)}\t{ex.query}\t{text}")
    return lines


def write_tsv(split, task_spec, path):
    Path(path).write_text("".join(line + "\n" for line in tsv_lines(split, task_spec)), encoding="utf-8")


# -- subsampling -------------------------------------------------------
def subsample_size(n, fraction):
    """``floor(fraction * n)`` computed exactly."""
    if fraction not in SUBSAMPLE_FRACTIONS:
        raise InputError(f"fraction must be one of {SUBSAMPLE_FRACTIONS}, got {fraction}")
    return math.floor(Fraction(str(fraction)) * n)


def subsample_indices(n, fraction, rng):
    k = subsample_size(n, fraction)
    if k == 0:
        raise InputError(f"sampling {fraction} of {n} examples leaves nothing")
    if k == n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=k, replace=False))


def subsample(split, fraction, rng):
    """Uniform sample without replacement, keeping the original order."""
    if split.split != "train":
        raise InputError("only training splits are subsampled")
    idx = subsample_indices(len(split.examples), fraction, rng)
    return DatasetSplit([split.examples[i] for i in idx], split.task_name, split.split)


# -- synthetic tasks ---------------------------------------------------
N_MARKERS = 4
MIN_SYNTHETIC_VOCAB = len(SPECIAL_TOKENS) + N_MARKERS + 12


def synthetic_vocab(vocab_size):
    """Special tokens followed by words ``w0, w1, ...``; ``w0..w3`` are markers."""
    if vocab_size < MIN_SYNTHETIC_VOCAB:
        raise InputError(f"synthetic vocabularies need at least {MIN_SYNTHETIC_VOCAB} entries")
    return Vocabulary(list(SPECIAL_TOKENS) + [f"w{i}" for i in range(vocab_size - len(SPECIAL_TOKENS))])


def _words(vocab_size):
    n = vocab_size - len(SPECIAL_TOKENS)
    markers = [f"w{i}" for i in range(N_MARKERS)]
    fillers = [f"w{i}" for i in range(N_MARKERS, n)]
    return markers, fillers


def marker_count(text):
    markers = {f"w{i}" for i in range(N_MARKERS)}
    return sum(tok in markers for tok in text.split())


def overlap(text_a, text_b):
    return len(set(text_a.split()) & set(text_b.split()))


def synthetic_label(kind, example):
    """Recompute a synthetic example's label from its text alone."""
    if kind == SINGLE:
        return int(marker_count(example.text) > 0)
    if kind == PAIR:
        return min(overlap(example.text_a, example.text_b), 2)
    if kind == REGRESSION:
        return overlap(example.text_a, example.text_b) / len(set(example.text_b.split()))
    if kind == RANKING:
        hits = [i for i, (t, _) in enumerate(example.candidates) if overlap(example.query, t)]
        return hits[0] if len(hits) == 1 else None
    raise InputError(f"unknown synthetic kind {kind!r}")


def _balanced(size, n_classes, rng):
    labels = np.arange(size) % n_classes
    return rng.permutation(labels)


def make_synthetic(task_kind, size, vocab_size, rng, task_name=None, n_candidates=4, hard_negatives=False):
    """Generate a labelled split whose labels follow from the text.

    single: class 1 iff the sentence holds a marker token. pair: class is
    the number of shared tokens, capped at 2. regression: shared tokens over
    the distinct tokens of the second sentence. ranking: the positive
    candidate carries the query's marker and negatives share no word with
    the query; with ``hard_negatives`` each negative carries a different
    marker, so only a query-candidate comparison separates them.
    """
    if size < 1:
        raise InputError("synthetic size must be at least 1")
    markers, fillers = _words(vocab_size)
    examples = []

    def sentence(lo, hi, pool=fillers, distinct=False):
        length = int(rng.integers(lo, hi + 1))
        return [str(w) for w in rng.choice(pool, size=length, replace=not distinct)]

    if task_kind == SINGLE:
        for label in _balanced(size, 2, rng):
            words = sentence(3, 7)
            if label:
                words[int(rng.integers(len(words)))] = str(rng.choice(markers))
            examples.append(SingleSentence(" ".join(words), int(label)))
    elif task_kind == PAIR:
        for label in _balanced(size, 3, rng):
            a = sentence(3, 6, distinct=True)
            rest = [w for w in fillers if w not in a]
            b = list(rng.choice(a, size=int(label), replace=False)) if label else []
            b += [str(w) for w in rng.choice(rest, size=int(rng.integers(2, 5)), replace=False)]
            b = [str(w) for w in rng.permutation(b)]
            examples.append(PairSentence(" ".join(a), " ".join(b), int(label)))
    elif task_kind == REGRESSION:
        for _ in range(size):
            a = sentence(3, 6, distinct=True)
            rest = [w for w in fillers if w not in a]
            n_b = int(rng.integers(3, 6))
            shared = int(rng.integers(0, min(len(a), n_b) + 1))
            b = list(rng.choice(a, size=shared, replace=False))
            b += [str(w) for w in rng.choice(rest, size=n_b - shared, replace=False)]
            b = [str(w) for w in rng.permutation(b)]
            examples.append(Regression(" ".join(a), " ".join(b), shared / len(set(b))))
    elif task_kind == RANKING:
        if n_candidates < 2 or (hard_negatives and n_candidates > N_MARKERS):
            raise InputError(f"ranking candidates must number 2..{N_MARKERS if hard_negatives else 'any'}")
        for qi in range(size):
            order = [str(m) for m in rng.permutation(markers)]
            query = sentence(3, 6, distinct=True)
            query.insert(int(rng.integers(len(query) + 1)), order[0])
            others = [w for w in fillers if w not in query]
            pos_slot = int(rng.integers(n_candidates))
            negative_markers = iter(order[1:])
            cands = []
            for slot in range(n_candidates):
                words = sentence(3, 6, pool=others, distinct=True)
                marker = order[0] if slot == pos_slot else next(negative_markers) if hard_negatives else None
                if marker is not None:
                    words.insert(int(rng.integers(len(words) + 1)), marker)
                cands.append((" ".join(words), slot == pos_slot))
            examples.append(RankingQuery(f"q{qi}", " ".join(query), tuple(cands)))
    else:
        raise InputError(f"unknown synthetic task kind {task_kind!r}")
    return DatasetSplit(examples, task_name or f"synthetic_{task_kind}", "train")


def synthetic_spec_labels(task_kind):
    return {SINGLE: ("0", "1"), PAIR: ("0", "1", "2")}.get(task_kind, ())
