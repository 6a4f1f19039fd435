"""Random forest over 1920 binary chunk features.

100 Gini-impurity trees of depth at most 100, each grown on a bootstrap
resample with sqrt-of-features candidate sampling at every node. Because
features are binary, every internal node splits on value 0 vs 1 and a feature
never repeats along a root-to-leaf path. Supports the incremental retrain
scheme: delete the trees most wrong about new feedback (capped) and regrow
replacements, keeping the forest at exactly its configured size.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .chunks import CHUNK_FEATURES, CHUNK_SIZE, LabelVocabulary, LabeledChunk, PatternAnnotation
from .levels import LevelGrid
from .seeding import child_rng

FOREST_FORMAT = "patterncraft-forest"
FOREST_VERSION = 1

_NS_FIT = 0
_NS_UPDATE = 1


class InsufficientData(ValueError):
    pass


class SingleClass(ValueError):
    pass


class NotTrained(ValueError):
    pass


class VocabularyMismatch(ValueError):
    pass


@dataclass
class ForestConfig:
    forest_size: int = 100
    max_depth: int = 100
    features_per_split: int = math.ceil(math.sqrt(CHUNK_FEATURES))  # 44
    seed: int = 0

    def to_dict(self) -> dict:
        return {"forest_size": self.forest_size, "max_depth": self.max_depth,
                "features_per_split": self.features_per_split, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ForestConfig":
        return cls(**d)


@dataclass
class DecisionTree:
    """Flat node arrays; feature[i] == -1 marks a leaf."""

    feature: np.ndarray  # (nodes,) int32
    left: np.ndarray     # (nodes,) int32, child for feature value 0
    right: np.ndarray    # (nodes,) int32, child for feature value 1
    hist: np.ndarray     # (nodes, n_classes) int64 class histogram

    def depth(self) -> int:
        depths = np.zeros(len(self.feature), dtype=np.int32)
        out = 1
        for i in range(len(self.feature)):
            d = depths[i] + 1
            out = max(out, d)
            if self.feature[i] >= 0:
                depths[self.left[i]] = d
                depths[self.right[i]] = d
        return out

    def leaf_hist(self, x: np.ndarray) -> np.ndarray:
        return self.hist[self._leaves(x[None, :])[0]]

    def _leaves(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int32)
        while True:
            feat = self.feature[node]
            live = np.nonzero(feat >= 0)[0]
            if live.size == 0:
                return node
            vals = X[live, feat[live]]
            node[live] = np.where(vals > 0, self.right[node[live]], self.left[node[live]])

    def votes(self, X: np.ndarray, none_index: int) -> np.ndarray:
        return _hist_argmax(self.hist[self._leaves(X)], none_index)


def _hist_argmax(hist: np.ndarray, none_index: int) -> np.ndarray:
    """Majority class; ties resolve toward none, then the lowest index."""
    hist = np.atleast_2d(hist)
    best = hist.max(axis=1, keepdims=True)
    is_best = hist == best
    pick = is_best.argmax(axis=1)
    none_best = is_best[:, none_index]
    return np.where(none_best, none_index, pick)


def _grow_tree(X: np.ndarray, y: np.ndarray, n_classes: int, config: ForestConfig,
               rng: np.random.Generator) -> DecisionTree:
    n_features = X.shape[1]
    feature, left, right, hists = [], [], [], []

    def leaf(idx: np.ndarray) -> int:
        feature.append(-1)
        left.append(-1)
        right.append(-1)
        hists.append(np.bincount(y[idx], minlength=n_classes))
        return len(feature) - 1

    def grow(idx: np.ndarray, depth: int, used: np.ndarray) -> int:
        labels = y[idx]
        hist = np.bincount(labels, minlength=n_classes)
        n = idx.size
        if depth >= config.max_depth or n < 2 or hist.max() == n:
            return leaf(idx)
        available = np.nonzero(~used)[0]
        if available.size == 0:
            return leaf(idx)
        k = min(config.features_per_split, available.size)
        cand = available[rng.choice(available.size, size=k, replace=False)]
        Xs = X[np.ix_(idx, cand)].astype(np.float64)
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), labels] = 1.0
        counts1 = Xs.T @ onehot                  # (k, C)
        counts0 = hist[None, :] - counts1
        n1 = counts1.sum(axis=1)
        n0 = n - n1
        parent_gini = 1.0 - np.sum((hist / n) ** 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            g0 = 1.0 - np.sum((counts0 / np.maximum(n0, 1)[:, None]) ** 2, axis=1)
            g1 = 1.0 - np.sum((counts1 / np.maximum(n1, 1)[:, None]) ** 2, axis=1)
        weighted = (n0 * g0 + n1 * g1) / n
        valid = (n0 > 0) & (n1 > 0)
        gain = np.where(valid, parent_gini - weighted, -np.inf)
        best = int(np.argmax(gain))
        if not valid[best] or gain[best] <= 1e-12:
            return leaf(idx)
        f = int(cand[best])
        mask = X[idx, f] > 0
        node = len(feature)
        feature.append(f)
        left.append(-1)
        right.append(-1)
        hists.append(hist)
        used_child = used.copy()
        used_child[f] = True
        left_id = grow(idx[~mask], depth + 1, used_child)
        right_id = grow(idx[mask], depth + 1, used_child)
        left[node] = left_id
        right[node] = right_id
        return node

    grow(np.arange(len(X)), 1, np.zeros(n_features, dtype=bool))
    return DecisionTree(np.array(feature, dtype=np.int32), np.array(left, dtype=np.int32),
                        np.array(right, dtype=np.int32), np.array(hists, dtype=np.int64))


def _to_matrix(examples: list[LabeledChunk]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([e.chunk.features() for e in examples]).astype(np.uint8)
    y = np.array([e.label_index for e in examples], dtype=np.int64)
    return X, y


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    vocabulary: LabelVocabulary
    config: ForestConfig
    update_count: int = 0

    @property
    def n_classes(self) -> int:
        return len(self.vocabulary) + 1

    @property
    def none_index(self) -> int:
        return self.vocabulary.none_index

    def tree_vote_matrix(self, X: np.ndarray) -> np.ndarray:
        """(n_trees, n_samples) per-tree votes."""
        return np.stack([t.votes(X, self.none_index) for t in self.trees])

    def vote_counts(self, X: np.ndarray) -> np.ndarray:
        """(n_samples, n_classes) vote counts summing to forest_size."""
        per_tree = self.tree_vote_matrix(X)
        counts = np.zeros((X.shape[0], self.n_classes), dtype=np.int64)
        for row in per_tree:
            counts[np.arange(X.shape[0]), row] += 1
        return counts

    def predict_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        counts = self.vote_counts(X)
        return _hist_argmax(counts, self.none_index), counts


@dataclass(frozen=True)
class Prediction:
    label_index: int
    votes: list[int]


def fit(examples: list[LabeledChunk], vocabulary: LabelVocabulary,
        config: ForestConfig | None = None, rng_seed: int | None = None) -> ForestModel:
    """Grow the forest on bootstrap resamples; deterministic given the seed."""
    config = config or ForestConfig()
    seed = config.seed if rng_seed is None else rng_seed
    config = replace(config, seed=seed)
    if len(examples) < 2:
        raise InsufficientData("need at least 2 examples")
    X, y = _to_matrix(examples)
    n_classes = len(vocabulary) + 1
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("label index outside vocabulary range")
    if len(np.unique(y)) < 2:
        raise SingleClass("need at least 2 distinct classes (including none)")
    trees = []
    for i in range(config.forest_size):
        rng = child_rng(seed, _NS_FIT, i)
        boot = rng.integers(0, len(X), size=len(X))
        trees.append(_grow_tree(X[boot], y[boot], n_classes, config, rng))
    return ForestModel(trees, LabelVocabulary(list(vocabulary.names)), config)


def predict(model: ForestModel, chunk) -> Prediction:
    """Majority vote over trees; ties resolve toward none, then lowest index."""
    if not model.trees:
        raise NotTrained("forest has no trees")
    x = np.asarray(chunk.features() if hasattr(chunk, "features") else chunk, dtype=np.uint8)
    labels, counts = model.predict_batch(x[None, :])
    return Prediction(int(labels[0]), [int(v) for v in counts[0]])


def incremental_update(model: ForestModel, new_examples: list[LabeledChunk],
                       all_examples: list[LabeledChunk],
                       max_replace_fraction: float = 0.2,
                       rng_seed: int | None = None) -> ForestModel:
    """Replace the trees most wrong about the new examples, capped per call.

    If the forest majority already classifies every new example correctly the
    model is returned unchanged. Replacement trees are grown on a bootstrap of
    all_examples + new_examples with the new examples always included, so each
    replacement actually trains on the correction.
    """
    if not model.trees:
        raise NotTrained("forest has no trees")
    if not new_examples:
        raise ValueError("new_examples must be non-empty")
    X_new, y_new = _to_matrix(new_examples)
    labels, _ = model.predict_batch(X_new)
    if np.array_equal(labels, y_new):
        return model
    per_tree = model.tree_vote_matrix(X_new)           # (T, n_new)
    miscounts = (per_tree != y_new[None, :]).sum(axis=1)
    cap = math.ceil(max_replace_fraction * model.config.forest_size)
    order = np.lexsort((np.arange(len(miscounts)), -miscounts))
    slots = [int(i) for i in order if miscounts[i] > 0][:cap]

    combined = list(all_examples) + list(new_examples)
    X_all, y_all = _to_matrix(combined)
    n_all = len(combined)
    new_idx = np.arange(n_all - len(new_examples), n_all)
    seed = model.config.seed if rng_seed is None else rng_seed
    trees = list(model.trees)
    for j, slot in enumerate(slots):
        rng = child_rng(seed, _NS_UPDATE, model.update_count, j)
        boot = np.concatenate([rng.integers(0, n_all, size=n_all), new_idx])
        trees[slot] = _grow_tree(X_all[boot], y_all[boot], model.n_classes, model.config, rng)
    return ForestModel(trees, model.vocabulary, model.config, model.update_count + 1)


def autolabel(model: ForestModel, levels: dict[str, LevelGrid], stride: int = 2) -> list[PatternAnnotation]:
    """Slide an 8x8 window over every level and annotate non-none predictions.

    Overlapping same-label windows whose intersection covers at least half of
    either window are merged into a single bounding-box annotation.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if not model.trees:
        raise NotTrained("forest has no trees")
    out: list[PatternAnnotation] = []
    for level_id in sorted(levels):
        grid = levels[level_id]
        positions = [(x, y)
                     for y in range(0, grid.height - CHUNK_SIZE + 1, stride)
                     for x in range(0, grid.width - CHUNK_SIZE + 1, stride)]
        if not positions:
            continue
        X = np.stack([_window_features(grid, x, y) for x, y in positions])
        labels, _ = model.predict_batch(X)
        hits = [(x, y, int(l)) for (x, y), l in zip(positions, labels) if l != model.none_index]
        out.extend(_merge_windows(level_id, hits, model.vocabulary))
    return out


def _window_features(grid: LevelGrid, x: int, y: int) -> np.ndarray:
    from .chunks import encode_chunk
    return encode_chunk(grid, x, y).features().astype(np.uint8)


def _merge_windows(level_id: str, hits: list[tuple[int, int, int]],
                   vocabulary: LabelVocabulary) -> list[PatternAnnotation]:
    n = len(hits)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    half_window = (CHUNK_SIZE * CHUNK_SIZE) // 2
    for i in range(n):
        xi, yi, li = hits[i]
        for j in range(i + 1, n):
            xj, yj, lj = hits[j]
            if li != lj:
                continue
            ov_w = min(xi, xj) + CHUNK_SIZE - max(xi, xj)
            ov_h = min(yi, yj) + CHUNK_SIZE - max(yi, yj)
            if ov_w > 0 and ov_h > 0 and ov_w * ov_h >= half_window:
                ra, rb = find(i), find(j)
                if ra != rb:
                    parent[rb] = ra
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    anns = []
    for members in groups.values():
        xs = [hits[i][0] for i in members]
        ys = [hits[i][1] for i in members]
        label = vocabulary.names[hits[members[0]][2]]
        x0, y0 = min(xs), min(ys)
        x1, y1 = max(xs) + CHUNK_SIZE, max(ys) + CHUNK_SIZE
        anns.append(PatternAnnotation(level_id, x0, y0, x1 - x0, y1 - y0, label))
    return sorted(anns, key=lambda a: (a.y, a.x, a.label))


def to_json(model: ForestModel) -> str:
    trees = [{"feature": t.feature.tolist(), "left": t.left.tolist(),
              "right": t.right.tolist(), "hist": t.hist.tolist()} for t in model.trees]
    doc = {"format": FOREST_FORMAT, "version": FOREST_VERSION,
           "config": model.config.to_dict(),
           "vocabulary": model.vocabulary.names,
           "vocabulary_hash": model.vocabulary.hash(),
           "update_count": model.update_count,
           "trees": trees}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def from_json(text: str) -> ForestModel:
    doc = json.loads(text)
    if doc.get("format") != FOREST_FORMAT or doc.get("version") != FOREST_VERSION:
        raise ValueError("not a recognized forest model file")
    vocab = LabelVocabulary(doc["vocabulary"])
    if vocab.hash() != doc["vocabulary_hash"]:
        raise VocabularyMismatch("vocabulary hash does not match the stored vocabulary")
    trees = [DecisionTree(np.array(t["feature"], dtype=np.int32), np.array(t["left"], dtype=np.int32),
                          np.array(t["right"], dtype=np.int32), np.array(t["hist"], dtype=np.int64))
             for t in doc["trees"]]
    return ForestModel(trees, vocab, ForestConfig.from_dict(doc["config"]), doc["update_count"])


def save(model: ForestModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_json(model))


def load(path, expected_vocabulary: LabelVocabulary | None = None) -> ForestModel:
    with open(path, encoding="utf-8") as fh:
        model = from_json(fh.read())
    if expected_vocabulary is not None and model.vocabulary.hash() != expected_vocabulary.hash():
        raise VocabularyMismatch("model was trained under a different vocabulary")
    return model
