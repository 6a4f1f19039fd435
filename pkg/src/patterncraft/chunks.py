"""8x8 level chunks: one-hot encoding, decoding, and annotation conversion.

A chunk is an 8x8 window one-hot encoded over the 30 tile classes, i.e. an
``(8, 8, 30)`` binary tensor with ``data[row, col, k] = 1`` iff the window
cell at x-offset ``col``, y-offset ``row`` holds class ``k``; an empty tile is
an all-zero fiber. Flattened, a chunk has exactly 8*8*30 = 1920 features.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .levels import EMPTY, LevelGrid
from .seeding import child_rng
from .tiles import DEFAULT_REGISTRY, NUM_TILE_CLASSES

CHUNK_SIZE = 8
CHUNK_FEATURES = CHUNK_SIZE * CHUNK_SIZE * NUM_TILE_CLASSES  # 1920


class OutOfBounds(ValueError):
    pass


@dataclass(frozen=True)
class Chunk:
    data: np.ndarray  # (8, 8, 30) binary
    origin: tuple[str, int, int] | None = None  # (level id, x, y)

    def __post_init__(self):
        if self.data.shape != (CHUNK_SIZE, CHUNK_SIZE, NUM_TILE_CLASSES):
            raise ValueError(f"chunk tensor must be {CHUNK_SIZE}x{CHUNK_SIZE}x{NUM_TILE_CLASSES}")
        self.data.setflags(write=False)

    def is_one_hot(self) -> bool:
        return bool((self.data.sum(axis=2) <= 1).all()) and set(np.unique(self.data)) <= {0.0, 1.0}

    def features(self) -> np.ndarray:
        return self.data.reshape(-1)


class LabelVocabulary:
    """Ordered list of the user's pattern names; index i is stable forever.

    The reserved "none" class is not part of the list: a LabeledChunk with
    ``label_index == len(vocabulary)`` means "none".
    """

    def __init__(self, names: list[str]):
        names = list(names)
        if any(not n for n in names):
            raise ValueError("pattern names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError("pattern names must be unique")
        self.names = names

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelVocabulary) and self.names == other.names

    def index_of(self, name: str) -> int:
        return self.names.index(name)

    @property
    def none_index(self) -> int:
        return len(self.names)

    def hash(self) -> str:
        payload = json.dumps(self.names, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PatternAnnotation:
    level_id: str
    x: int
    y: int
    w: int
    h: int
    label: str

    def validate(self, grid: LevelGrid) -> None:
        if self.w < 1 or self.h < 1:
            raise ValueError("annotation rectangle must be at least 1x1")
        if self.x < 0 or self.y < 0 or self.x + self.w > grid.width or self.y + self.h > grid.height:
            raise ValueError(f"annotation {self} outside level bounds {grid.width}x{grid.height}")


@dataclass(frozen=True)
class LabeledChunk:
    chunk: Chunk
    label_index: int  # 0..n-1 vocabulary, n = none


def encode_chunk(grid: LevelGrid, x: int, y: int, level_id: str = "") -> Chunk:
    """One-hot encode the 8x8 window whose top-left tile is (x, y)."""
    if x < 0 or y < 0 or x + CHUNK_SIZE > grid.width or y + CHUNK_SIZE > grid.height:
        raise OutOfBounds(f"window ({x},{y}) outside level bounds {grid.width}x{grid.height}")
    window = grid.cells[y:y + CHUNK_SIZE, x:x + CHUNK_SIZE]
    data = np.zeros((CHUNK_SIZE, CHUNK_SIZE, NUM_TILE_CLASSES), dtype=np.float32)
    rows, cols = np.nonzero(window != EMPTY)
    data[rows, cols, window[rows, cols]] = 1.0
    return Chunk(data, origin=(level_id, x, y))


def decode_chunk(tensor: np.ndarray, threshold: float = 0.5) -> LevelGrid:
    """Decode a real-valued (8, 8, 30) tensor into an 8x8 grid.

    Per tile: empty if the max over the class axis is below the threshold,
    else the argmax class (ties resolve to the lowest class id).
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    tensor = np.asarray(tensor)
    if tensor.shape != (CHUNK_SIZE, CHUNK_SIZE, NUM_TILE_CLASSES):
        raise ValueError("tensor must be 8x8x30")
    best = tensor.argmax(axis=2)
    cells = np.where(tensor.max(axis=2) >= threshold, best, EMPTY).astype(np.int16)
    return LevelGrid(cells, DEFAULT_REGISTRY)


def _axis_offsets(extent: int) -> list[int]:
    # Stride-8 tiling from the rectangle's leading edge, plus a clamped edge
    # window whenever the extent is not a multiple of the window size.
    if extent <= CHUNK_SIZE:
        return [0]
    offsets = list(range(0, extent - CHUNK_SIZE + 1, CHUNK_SIZE))
    if (extent - CHUNK_SIZE) % CHUNK_SIZE != 0:
        offsets.append(extent - CHUNK_SIZE)
    return offsets


def _clamp(v: int, lo: int, hi: int) -> int:
    return max(lo, min(v, hi))


def annotation_windows(ann: PatternAnnotation, grid: LevelGrid) -> list[tuple[int, int]]:
    """Window top-left positions produced by an annotation rectangle."""
    ann.validate(grid)
    max_x, max_y = grid.width - CHUNK_SIZE, grid.height - CHUNK_SIZE
    if ann.w <= CHUNK_SIZE and ann.h <= CHUNK_SIZE:
        cx, cy = ann.x + ann.w // 2, ann.y + ann.h // 2
        return [(_clamp(cx - CHUNK_SIZE // 2, 0, max_x), _clamp(cy - CHUNK_SIZE // 2, 0, max_y))]
    positions = []
    for dy in _axis_offsets(ann.h):
        for dx in _axis_offsets(ann.w):
            positions.append((_clamp(ann.x + dx, 0, max_x), _clamp(ann.y + dy, 0, max_y)))
    return positions


def annotation_to_examples(ann: PatternAnnotation, grid: LevelGrid, vocabulary: LabelVocabulary) -> list[LabeledChunk]:
    """Convert a rectangle annotation into one or more labeled chunks.

    Rectangles at most 8x8 yield a single window centered on the rectangle
    center (clamped in-bounds); larger rectangles are tiled at stride 8 with
    clamped edge windows so the rectangle is fully covered.
    """
    label = vocabulary.index_of(ann.label)
    return [LabeledChunk(encode_chunk(grid, x, y, ann.level_id), label)
            for x, y in annotation_windows(ann, grid)]


def sample_negatives(levels: dict[str, LevelGrid], annotations: list[PatternAnnotation],
                     count: int, rng_seed: int, vocabulary: LabelVocabulary) -> tuple[list[LabeledChunk], bool]:
    """Draw `count` chunks from windows overlapping no annotation rectangle.

    Chunks carry the vocabulary's reserved none index. Returns
    (chunks, exhausted): exhausted is True when the level set could not
    supply `count` distinct windows.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    rects: dict[str, list[PatternAnnotation]] = {}
    for ann in annotations:
        rects.setdefault(ann.level_id, []).append(ann)
    candidates: list[tuple[str, int, int]] = []
    for level_id in sorted(levels):
        grid = levels[level_id]
        anns = rects.get(level_id, [])
        for y in range(grid.height - CHUNK_SIZE + 1):
            for x in range(grid.width - CHUNK_SIZE + 1):
                clear = all(not (x < a.x + a.w and a.x < x + CHUNK_SIZE and
                                 y < a.y + a.h and a.y < y + CHUNK_SIZE) for a in anns)
                if clear:
                    candidates.append((level_id, x, y))
    take = min(count, len(candidates))
    rng = child_rng(rng_seed)
    picks = rng.choice(len(candidates), size=take, replace=False) if take else np.array([], dtype=int)
    chunks = []
    for i in sorted(int(p) for p in picks):
        level_id, x, y = candidates[i]
        chunks.append(LabeledChunk(encode_chunk(levels[level_id], x, y, level_id), vocabulary.none_index))
    return chunks, take < count
