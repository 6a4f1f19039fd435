"""Desk-scale experiment harness: classifier accuracy vs a compact CNN
baseline, generator variant comparison, and transfer comparison, all under
3-fold cross validation with the structure-error metric and paired rank
tests. Reports persist per-fold raw values so every aggregate is
recomputable.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import forest as rf
from . import autoenc as ae
from .autoenc import AeConfig, AutoencoderModel
from .chunks import (CHUNK_FEATURES, CHUNK_SIZE, Chunk, LabelVocabulary, LabeledChunk,
                     annotation_to_examples, encode_chunk, sample_negatives, _axis_offsets)
from .corpus import Corpus
from .levels import LevelGrid
from .nn import Adam, Conv2D, Dense, Dropout, Relu, ShapeMismatch, softmax_xent
from .seeding import child_rng, child_seed
from .stats import wilcoxon_signed_rank


class InsufficientData(ValueError):
    pass


# --- structure error -------------------------------------------------------

def structure_error(pred: np.ndarray, truth: np.ndarray) -> int:
    """Count of 0.5-binarized prediction features disagreeing with truth."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"shapes differ: {pred.shape} vs {truth.shape}")
    uniq = np.unique(truth)
    if not np.isin(uniq, (0, 1)).all():
        raise ValueError("truth tensor must be binary")
    return int(np.sum((pred >= 0.5) != (truth >= 0.5)))


# --- fold plans -------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    k: int
    folds: list[tuple[np.ndarray, np.ndarray]]  # (train_idx, test_idx)
    stratified: bool
    seed: int


def make_folds(labels: list[int], k: int = 3, seed: int = 0) -> FoldPlan:
    """Stratified k folds when every class has >= k members, plain otherwise."""
    labels = np.asarray(labels)
    n = len(labels)
    if n < k:
        raise InsufficientData(f"need at least {k} examples for {k} folds")
    rng = child_rng(seed, 77)
    classes, counts = np.unique(labels, return_counts=True)
    stratified = bool((counts >= k).all())
    assignment = np.empty(n, dtype=np.int64)
    if stratified:
        for c in classes:
            idx = np.nonzero(labels == c)[0]
            idx = idx[rng.permutation(len(idx))]
            assignment[idx] = np.arange(len(idx)) % k
    else:
        order = rng.permutation(n)
        assignment[order] = np.arange(n) % k
    folds = []
    for f in range(k):
        test = np.nonzero(assignment == f)[0]
        train = np.nonzero(assignment != f)[0]
        folds.append((train, test))
    return FoldPlan(k, folds, stratified, seed)


# --- reports -----------------------------------------------------------------

@dataclass
class ExperimentReport:
    experiment: str
    seed: int
    rows: list[dict]                 # {"variant": str, "cells": {metric: {"mean","std"}}}
    p_values: dict[str, float] = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)  # wall seconds; not part of the canonical report

    def to_json(self) -> str:
        doc = {"experiment": self.experiment, "seed": self.seed, "rows": self.rows,
               "p_values": self.p_values, "raw": self.raw, "meta": self.meta}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        doc = json.loads(text)
        return cls(doc["experiment"], doc["seed"], doc["rows"], doc["p_values"], doc["raw"], doc["meta"])

    def metrics(self) -> list[str]:
        names: list[str] = []
        for row in self.rows:
            for m in row["cells"]:
                if m not in names:
                    names.append(m)
        return names

    def text_table(self) -> str:
        metrics = self.metrics()
        header = ["variant"] + metrics
        lines = [header]
        for row in self.rows:
            cells = [row["variant"]]
            for m in metrics:
                cell = row["cells"].get(m)
                cells.append("-" if cell is None else f"{cell['mean']!r}±{cell['std']!r}")
            lines.append(cells)
        widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
        out = []
        for line in lines:
            out.append("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip())
        return "\n".join(out) + "\n"


def parse_text_table(text: str) -> dict[str, dict[str, tuple[float, float]]]:
    """Inverse of text_table(); cell strings round-trip to the exact floats."""
    lines = [l for l in text.splitlines() if l.strip()]
    header = [c for c in lines[0].split() if c]
    out: dict[str, dict[str, tuple[float, float]]] = {}
    for line in lines[1:]:
        cells = [c for c in line.split() if c]
        variant = cells[0]
        out[variant] = {}
        for name, cell in zip(header[1:], cells[1:]):
            if cell == "-":
                continue
            mean_s, std_s = cell.split("±")
            out[variant][name] = (float(mean_s), float(std_s))
    return out


def _mean_std(values) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def recompute_rows(report: ExperimentReport) -> list[dict]:
    """Re-derive every mean/std from the persisted raw values."""
    rows = []
    for row in report.rows:
        variant = row["variant"]
        cells = {}
        for metric in row["cells"]:
            cells[metric] = _mean_std(report.raw[variant][metric])
        rows.append({"variant": variant, "cells": cells})
    return rows


# --- dataset assembly --------------------------------------------------------

def oracle_examples(corpus: Corpus) -> list[LabeledChunk]:
    """Ground-truth annotations converted to labeled chunks."""
    out: list[LabeledChunk] = []
    for ann in corpus.annotations:
        out.extend(annotation_to_examples(ann, corpus.levels[ann.level_id], corpus.vocabulary))
    return out


def mean_per_pattern_count(examples: list[LabeledChunk], vocabulary: LabelVocabulary) -> int:
    counts = np.bincount([e.label_index for e in examples], minlength=len(vocabulary) + 1)
    positive = counts[:len(vocabulary)]
    nz = positive[positive > 0]
    return int(round(nz.mean())) if len(nz) else 0

def with_negatives(examples: list[LabeledChunk], corpus: Corpus, seed: int,
                   annotations=None) -> list[LabeledChunk]:
    """Append none-class chunks, count defaulting to the mean per-pattern count."""
    count = mean_per_pattern_count(examples, corpus.vocabulary)
    negatives, _ = sample_negatives(corpus.levels,
                                    corpus.annotations if annotations is None else annotations,
                                    count, seed, corpus.vocabulary)
    return list(examples) + negatives


def examples_to_xy(examples: list[LabeledChunk]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([e.chunk.data for e in examples]).astype(np.float32)
    y = np.array([e.label_index for e in examples], dtype=np.int64)
    return X, y


def all_chunks_dataset(levels: dict[str, LevelGrid]) -> list[Chunk]:
    """Every stride-8 window of every level (with clamped edge windows),
    deduplicated by content."""
    seen: set[bytes] = set()
    out: list[Chunk] = []
    for level_id in sorted(levels):
        grid = levels[level_id]
        for dy in _axis_offsets(grid.height):
            for dx in _axis_offsets(grid.width):
                c = encode_chunk(grid, dx, dy, level_id)
                key = c.data.tobytes()
                if key not in seen:
                    seen.add(key)
                    out.append(c)
    return out


def dedup_labeled(examples: list[LabeledChunk]) -> list[LabeledChunk]:
    seen: set[tuple[bytes, int]] = set()
    out = []
    for e in examples:
        key = (e.chunk.data.tobytes(), e.label_index)
        if key not in seen:
            seen.add(key)
            out.append(e)
    return out


def reveal_hand_subset(train_idx: np.ndarray, total: int, seed: int,
                       hand_count: int | None, hand_fraction: float) -> np.ndarray:
    """Seeded choice of train-fold examples that play the designer's hand labels."""
    want = hand_count if hand_count is not None else int(round(hand_fraction * total))
    want = min(want, len(train_idx))
    rng = child_rng(seed, 88)
    picked = rng.choice(len(train_idx), size=want, replace=False)
    return np.sort(train_idx[picked])


def autolabel_training_set(corpus: Corpus, hand: list[LabeledChunk], seed: int,
                           stride: int = 2) -> tuple[list[LabeledChunk], rf.ForestModel]:
    """Forest label propagation: fit on hand labels, annotate every level,
    and return hand + propagated chunks (deduplicated)."""
    train_set = with_negatives(hand, corpus, child_seed(seed, 3))
    model = rf.fit(train_set, corpus.vocabulary, rf.ForestConfig(seed=child_seed(seed, 4)))
    auto_annotations = rf.autolabel(model, corpus.levels, stride)
    auto_chunks: list[LabeledChunk] = []
    for ann in auto_annotations:
        auto_chunks.extend(annotation_to_examples(ann, corpus.levels[ann.level_id], corpus.vocabulary))
    return dedup_labeled(list(hand) + auto_chunks), model


def label_onehots(examples: list[LabeledChunk], n_labels: int) -> np.ndarray:
    L = np.zeros((len(examples), n_labels), dtype=np.float32)
    for i, e in enumerate(examples):
        if e.label_index < n_labels:
            L[i, e.label_index] = 1.0
    return L


def heldout_structure_errors(model: AutoencoderModel, test: list[LabeledChunk]) -> list[int]:
    X = np.stack([e.chunk.data for e in test]).astype(np.float32)
    L = label_onehots(test, model.config.n_labels) if model.config.n_labels else None
    out_img, _ = ae.reconstruct_batch(model, X, L)
    return [structure_error(out_img[i], X[i]) for i in range(len(test))]


# --- compact CNN baseline ----------------------------------------------------

class ChunkCnn:
    """Encoder conv stack plus a softmax head; the naive-CNN baseline."""

    def __init__(self, n_classes: int, dropout_rate: float = 0.3, lr: float = 1e-3,
                 batch_size: int = 64, convergence_tol: float = 1e-4,
                 convergence_patience: int = 10, max_epochs: int = 400, seed: int = 0):
        rng = child_rng(seed, 0)
        self.conv1 = Conv2D(3, 3, 30, 32, 1, 1, rng)
        self.drop = Dropout(dropout_rate)
        self.conv2 = Conv2D(3, 3, 32, 32, 2, 1, rng)
        self.head = Dense(512, n_classes, rng)
        self.relu = Relu()
        self.n_classes = n_classes
        self.lr, self.batch_size, self.seed = lr, batch_size, seed
        self.tol, self.patience, self.max_epochs = convergence_tol, convergence_patience, max_epochs
        self.training_log: list[float] = []

    def _forward(self, X, train=False, rng=None):
        y, c1 = self.conv1.forward(X)
        y, a1 = self.relu.forward(y)
        y, dp = self.drop.forward(y, train=train, rng=rng)
        y, c2 = self.conv2.forward(y)
        y, a2 = self.relu.forward(y)
        flat = y.reshape(len(X), -1)
        logits, ch = self.head.forward(flat)
        return logits, (c1, a1, dp, c2, a2, ch, len(X))

    def fit(self, X: np.ndarray, y: np.ndarray) -> "ChunkCnn":
        onehot = np.zeros((len(y), self.n_classes), dtype=np.float32)
        onehot[np.arange(len(y)), y] = 1.0
        params = self.conv1.params() + self.conv2.params() + self.head.params()
        opt = Adam(params, self.lr)
        rng_shuffle = child_rng(self.seed, 1)
        rng_drop = child_rng(self.seed, 2)
        best, stagnant = np.inf, 0
        for _ in range(self.max_epochs):
            order = rng_shuffle.permutation(len(X))
            total = 0.0
            for s in range(0, len(X), self.batch_size):
                idx = order[s:s + self.batch_size]
                logits, cache = self._forward(X[idx], train=True, rng=rng_drop)
                loss, dlogits = softmax_xent(logits, onehot[idx])
                c1, a1, dp, c2, a2, ch, nb = cache
                g, gh = self.head.backward(dlogits, ch)
                g = g.reshape(nb, 4, 4, 32)
                g, _ = self.relu.backward(g, a2)
                g, g2 = self.conv2.backward(g, c2)
                g, _ = self.drop.backward(g, dp)
                g, _ = self.relu.backward(g, a1)
                _, g1 = self.conv1.backward(g, c1)
                opt.step(g1 + g2 + gh)
                total += loss * len(idx)
            loss = total / len(X)
            self.training_log.append(loss)
            if best < np.inf and (best - loss) / max(best, 1e-12) < self.tol:
                stagnant += 1
            else:
                stagnant = 0
            best = min(best, loss)
            if stagnant >= self.patience:
                break
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        logits, _ = self._forward(X, train=False)
        return logits.argmax(axis=1)


# --- experiment runners -------------------------------------------------------

def run_classifier_experiment(examples: list[LabeledChunk], vocabulary: LabelVocabulary,
                              k: int = 3, seed: int = 0,
                              cnn_max_epochs: int = 400) -> ExperimentReport:
    """Train/test accuracy of the forest vs the compact CNN across folds."""
    labels = [e.label_index for e in examples]
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise InsufficientData("need at least two classes")
    plan = make_folds(labels, k, child_seed(seed, 0))
    X, y = examples_to_xy(examples)
    Xf = X.reshape(len(X), CHUNK_FEATURES).astype(np.uint8)
    raw = {name: {"train_accuracy": [], "test_accuracy": []} for name in ("RF", "CNN")}
    timings = {"RF": 0.0, "CNN": 0.0}
    for f, (train_idx, test_idx) in enumerate(plan.folds):
        train_ex = [examples[i] for i in train_idx]
        t0 = time.monotonic()
        model = rf.fit(train_ex, vocabulary, rf.ForestConfig(seed=child_seed(seed, 1, f)))
        pred_train, _ = model.predict_batch(Xf[train_idx])
        pred_test, _ = model.predict_batch(Xf[test_idx])
        timings["RF"] += time.monotonic() - t0
        raw["RF"]["train_accuracy"].append(float(np.mean(pred_train == y[train_idx])))
        raw["RF"]["test_accuracy"].append(float(np.mean(pred_test == y[test_idx])))
        t0 = time.monotonic()
        cnn = ChunkCnn(len(vocabulary) + 1, seed=child_seed(seed, 2, f), max_epochs=cnn_max_epochs)
        cnn.fit(X[train_idx], y[train_idx])
        timings["CNN"] += time.monotonic() - t0
        raw["CNN"]["train_accuracy"].append(float(np.mean(cnn.predict(X[train_idx]) == y[train_idx])))
        raw["CNN"]["test_accuracy"].append(float(np.mean(cnn.predict(X[test_idx]) == y[test_idx])))
    rows = [{"variant": name, "cells": {m: _mean_std(vals) for m, vals in metrics.items()}}
            for name, metrics in raw.items()]
    return ExperimentReport("classifier", seed, rows, {}, raw,
                            {"k": k, "stratified": plan.stratified, "n_examples": len(examples)},
                            timings)


def _ae_config(n_labels: int, seed: int, overrides: dict | None) -> AeConfig:
    cfg = AeConfig(n_labels=n_labels, seed=seed)
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def _train_no_labels(corpus: Corpus, seed: int, overrides: dict | None) -> AutoencoderModel:
    chunks = all_chunks_dataset(corpus.levels)
    model = ae.build(_ae_config(0, child_seed(seed, 10), overrides))
    return ae.train(model, [(c, None) for c in chunks])


def run_generator_experiment(corpus: Corpus, seed: int = 0, k: int = 3,
                             hand_count: int | None = None, hand_fraction: float = 0.15,
                             ae_overrides: dict | None = None, stride: int = 2,
                             fold_subset: list[int] | None = None,
                             shared_parent: AutoencoderModel | None = None) -> ExperimentReport:
    """The three-variant comparison: no-labels vs no-auto-tag vs full.

    Held-out structure error per test chunk, mean/std per variant, paired
    signed-rank p-values of full against each other variant.
    """
    examples = oracle_examples(corpus)
    if len(corpus.vocabulary) < 2:
        raise InsufficientData("need a labeled corpus with >= 2 labels")
    n = len(corpus.vocabulary)
    plan = make_folds([e.label_index for e in examples], k, child_seed(seed, 0))
    folds = plan.folds if fold_subset is None else [plan.folds[i] for i in fold_subset]

    t0 = time.monotonic()
    no_labels = shared_parent or _train_no_labels(corpus, seed, ae_overrides)
    t_parent = time.monotonic() - t0

    variants = ("no-labels", "no-auto-tag", "full")
    raw = {v: {"error": [], "epochs": [], "per_fold_errors": []} for v in variants}
    timings = {"no-labels": t_parent, "no-auto-tag": 0.0, "full": 0.0}
    pairs = {"no-labels": ([], []), "no-auto-tag": ([], [])}  # (full errors, other errors)
    for f, (train_idx, test_idx) in enumerate(folds):
        test = [examples[i] for i in test_idx]
        hand_idx = reveal_hand_subset(train_idx, len(examples), child_seed(seed, 1, f),
                                      hand_count, hand_fraction)
        hand = [examples[i] for i in hand_idx]

        err_nl = heldout_structure_errors(no_labels, test)
        _record(raw["no-labels"], err_nl, no_labels.epochs_run)

        if len(hand) == 0:
            # degenerate: with no hand labels both labeled variants collapse
            # to the no-labels model
            for v in ("no-auto-tag", "full"):
                _record(raw[v], err_nl, no_labels.epochs_run)
            for other in pairs:
                pairs[other][0].extend(err_nl)
                pairs[other][1].extend(err_nl)
            continue

        t0 = time.monotonic()
        no_auto = ae.build(_ae_config(n, child_seed(seed, 2, f), ae_overrides), corpus.vocabulary)
        ae.train(no_auto, [(e.chunk, _onehot(e, n)) for e in hand])
        timings["no-auto-tag"] += time.monotonic() - t0
        err_na = heldout_structure_errors(no_auto, test)
        _record(raw["no-auto-tag"], err_na, no_auto.epochs_run)

        t0 = time.monotonic()
        full_set, _ = autolabel_training_set(corpus, hand, child_seed(seed, 3, f), stride)
        full = ae.build(_ae_config(n, child_seed(seed, 4, f), ae_overrides), corpus.vocabulary)
        ae.train(full, [(e.chunk, _onehot(e, n)) for e in full_set])
        timings["full"] += time.monotonic() - t0
        err_full = heldout_structure_errors(full, test)
        _record(raw["full"], err_full, full.epochs_run)

        pairs["no-labels"][0].extend(err_full)
        pairs["no-labels"][1].extend(err_nl)
        pairs["no-auto-tag"][0].extend(err_full)
        pairs["no-auto-tag"][1].extend(err_na)

    p_values = {}
    for other, (fe, oe) in pairs.items():
        if len(fe) >= 5:
            p_values[f"full_vs_{other}"] = wilcoxon_signed_rank(fe, oe).p_value
    rows = [{"variant": v, "cells": {"error": _mean_std(raw[v]["error"]),
                                     "epochs": _mean_std(raw[v]["epochs"])}} for v in variants]
    meta = {"k": k, "n_labels": n, "hand_count": hand_count, "hand_fraction": hand_fraction,
            "n_examples": len(examples), "stratified": plan.stratified}
    return ExperimentReport("generator", seed, rows, p_values, raw, meta, timings)


def _onehot(e: LabeledChunk, n: int) -> np.ndarray:
    v = np.zeros(n, dtype=np.float32)
    if e.label_index < n:
        v[e.label_index] = 1.0
    return v


def _record(bucket: dict, errors: list[int], epochs: int) -> None:
    bucket["error"].extend(errors)
    bucket["per_fold_errors"].append(list(errors))
    bucket["epochs"].append(epochs)


def run_transfer_experiment(corpus: Corpus, seed: int = 0, k: int = 3,
                            hand_count: int | None = None, hand_fraction: float = 0.15,
                            ae_overrides: dict | None = None, stride: int = 2,
                            fold_subset: list[int] | None = None) -> ExperimentReport:
    """Adds the two student-teacher variants initialized from the no-labels
    parent: fine-tuned on hand labels only, and on hand plus propagated
    labels. Epoch counts let callers check the speedup contract."""
    examples = oracle_examples(corpus)
    n = len(corpus.vocabulary)
    plan = make_folds([e.label_index for e in examples], k, child_seed(seed, 0))
    folds = plan.folds if fold_subset is None else [plan.folds[i] for i in fold_subset]

    t0 = time.monotonic()
    parent = _train_no_labels(corpus, seed, ae_overrides)
    t_parent = time.monotonic() - t0

    variants = ("no-labels", "transfer-no-auto", "transfer-with-auto", "full")
    raw = {v: {"error": [], "epochs": [], "per_fold_errors": []} for v in variants}
    timings = {v: 0.0 for v in variants}
    timings["no-labels"] = t_parent
    for f, (train_idx, test_idx) in enumerate(folds):
        test = [examples[i] for i in test_idx]
        hand_idx = reveal_hand_subset(train_idx, len(examples), child_seed(seed, 1, f),
                                      hand_count, hand_fraction)
        hand = [examples[i] for i in hand_idx]
        if len(hand) == 0:
            raise InsufficientData("transfer experiment needs at least one hand label per fold")

        err_nl = heldout_structure_errors(parent, test)
        _record(raw["no-labels"], err_nl, parent.epochs_run)

        full_set, _ = autolabel_training_set(corpus, hand, child_seed(seed, 3, f), stride)

        t0 = time.monotonic()
        t_na = ae.transfer(parent, _ae_config(n, child_seed(seed, 5, f), ae_overrides), corpus.vocabulary)
        ae.train(t_na, [(e.chunk, _onehot(e, n)) for e in hand])
        timings["transfer-no-auto"] += time.monotonic() - t0
        _record(raw["transfer-no-auto"], heldout_structure_errors(t_na, test), t_na.epochs_run)

        t0 = time.monotonic()
        t_wa = ae.transfer(parent, _ae_config(n, child_seed(seed, 6, f), ae_overrides), corpus.vocabulary)
        ae.train(t_wa, [(e.chunk, _onehot(e, n)) for e in full_set])
        timings["transfer-with-auto"] += time.monotonic() - t0
        _record(raw["transfer-with-auto"], heldout_structure_errors(t_wa, test), t_wa.epochs_run)

        t0 = time.monotonic()
        full = ae.build(_ae_config(n, child_seed(seed, 4, f), ae_overrides), corpus.vocabulary)
        ae.train(full, [(e.chunk, _onehot(e, n)) for e in full_set])
        timings["full"] += time.monotonic() - t0
        _record(raw["full"], heldout_structure_errors(full, test), full.epochs_run)

    rows = [{"variant": v, "cells": {"error": _mean_std(raw[v]["error"]),
                                     "epochs": _mean_std(raw[v]["epochs"])}} for v in variants]
    p_values = {}
    fe = raw["full"]["error"]
    for other in ("no-labels", "transfer-no-auto", "transfer-with-auto"):
        if len(fe) >= 5:
            p_values[f"full_vs_{other}"] = wilcoxon_signed_rank(fe, raw[other]["error"]).p_value
    meta = {"k": k, "n_labels": n, "hand_count": hand_count, "hand_fraction": hand_fraction,
            "n_examples": len(examples), "stratified": plan.stratified}
    return ExperimentReport("transfer", seed, rows, p_values, raw, meta, timings)
