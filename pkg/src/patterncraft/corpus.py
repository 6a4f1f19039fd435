"""Synthetic rule-generated level corpus with ground-truth annotations.

Levels are 14 tiles high over a variable-height ground band (2 to 4 rows,
changing between pattern sites). Pattern instances come from a built-in rule
set and sit on the local ground; each records a rectangle annotation its rule
predicate can re-verify. One to three ornament tiles near every instance make
each one unique, and distractor shapes (short block piles, single-column
notches, decor) fill unannotated space so the "none" class is non-trivial.
Same seed, byte-identical corpus.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chunks import LabelVocabulary, PatternAnnotation
from .levels import EMPTY, LevelGrid
from .seeding import child_rng
from .tiles import DEFAULT_REGISTRY

GROUND, PLATFORM = 0, 5
PIPE_TL, PIPE_TR, PIPE_L, PIPE_R = 6, 7, 8, 9
COIN, WALKER = 10, 12
STAIR, HARD = 21, 4
BUSH, CLOUD, HILL = 25, 26, 27

HEIGHT = 14
MIN_GROUND, MAX_GROUND = 2, 3  # ground band thickness range

RULE_NAMES = ("staircase", "gap", "enemy-pair", "pipe", "coin-arc", "platform-run")


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class CorpusSpec:
    n_levels: int = 20
    width: int = 200
    patterns: dict[str, int] = field(default_factory=lambda: {"staircase": 40, "gap": 40, "pipe": 40})
    distractor_rate: float = 0.15

    def validate(self) -> None:
        if self.n_levels < 1:
            raise InvalidSpec("need at least one level")
        if self.width < 24:
            raise InvalidSpec("levels must be at least 24 tiles wide")
        for name, count in self.patterns.items():
            if name not in RULE_NAMES:
                raise InvalidSpec(f"unknown pattern rule {name!r}; known: {', '.join(RULE_NAMES)}")
            if count < 0:
                raise InvalidSpec("pattern counts must be >= 0")


@dataclass
class Corpus:
    levels: dict[str, LevelGrid]
    annotations: list[PatternAnnotation]
    vocabulary: LabelVocabulary


# --- pattern writers: mutate cells, return the annotation rectangle ------
# `top` is the local ground-top row; structures sit directly on it.

def _write_staircase(cells, x, top, rng):
    k = int(rng.integers(3, 5))
    for j in range(k):
        for i in range(j + 1):
            cells[top - 1 - i, x + j] = STAIR
    return x, top - k, k, k


def _write_gap(cells, x, top, rng):
    w = int(rng.integers(2, 4))
    cells[top:, x:x + w] = EMPTY
    return x, top, w, HEIGHT - top


def _write_enemy_pair(cells, x, top, rng):
    d = int(rng.integers(2, 4))
    cells[top - 1, x] = WALKER
    cells[top - 1, x + d] = WALKER
    return x, top - 1, d + 1, 1


def _write_pipe(cells, x, top, rng):
    k = int(rng.integers(2, 4))
    cells[top - k, x] = PIPE_TL
    cells[top - k, x + 1] = PIPE_TR
    for i in range(1, k):
        cells[top - k + i, x] = PIPE_L
        cells[top - k + i, x + 1] = PIPE_R
    return x, top - k, 2, k


def _arc_heights(m: int) -> list[int]:
    return [min(j, m - 1 - j) + 1 for j in range(m)]


def _write_coin_arc(cells, x, top, rng):
    m = int(rng.integers(3, 6))
    heights = _arc_heights(m)
    for j, h in enumerate(heights):
        cells[top - 1 - h, x + j] = COIN
    rect_top = top - 1 - max(heights)
    return x, rect_top, m, max(heights) - min(heights) + 1


def _write_platform_run(cells, x, top, rng):
    length = int(rng.integers(4, 8))
    h = int(rng.integers(3, 6))
    cells[top - h, x:x + length] = PLATFORM
    return x, top - h, length, 1


_WRITERS = {
    "staircase": _write_staircase,
    "gap": _write_gap,
    "enemy-pair": _write_enemy_pair,
    "pipe": _write_pipe,
    "coin-arc": _write_coin_arc,
    "platform-run": _write_platform_run,
}

_MAX_WIDTH = {"staircase": 4, "gap": 3, "enemy-pair": 4, "pipe": 2, "coin-arc": 5, "platform-run": 7}


# --- rule predicates: does the annotated region satisfy its rule? --------

def _check_staircase(grid, a):
    if a.w != a.h or not 3 <= a.w <= 4:
        return False
    top = a.y + a.h
    if top >= HEIGHT or grid.cell(a.x, top) != GROUND:
        return False
    for j in range(a.w):
        for i in range(a.h):
            want = STAIR if i <= j else EMPTY
            if grid.cell(a.x + j, top - 1 - i) != want:
                return False
    return True


def _check_gap(grid, a):
    if not 2 <= a.w <= 3 or a.y + a.h != HEIGHT:
        return False
    if a.x < 1 or a.x + a.w >= grid.width:
        return False
    for dx in range(a.w):
        for dy in range(a.h):
            if grid.cell(a.x + dx, a.y + dy) != EMPTY:
                return False
    return (grid.cell(a.x - 1, a.y) == GROUND and grid.cell(a.x + a.w, a.y) == GROUND)


def _check_enemy_pair(grid, a):
    if a.h != 1 or not 3 <= a.w <= 4:
        return False
    if a.y + 1 >= HEIGHT or grid.cell(a.x, a.y + 1) != GROUND:
        return False
    if grid.cell(a.x, a.y) != WALKER or grid.cell(a.x + a.w - 1, a.y) != WALKER:
        return False
    return all(grid.cell(a.x + dx, a.y) == EMPTY for dx in range(1, a.w - 1))


def _check_pipe(grid, a):
    if a.w != 2 or not 2 <= a.h <= 3:
        return False
    top = a.y + a.h
    if top >= HEIGHT or grid.cell(a.x, top) != GROUND:
        return False
    if grid.cell(a.x, a.y) != PIPE_TL or grid.cell(a.x + 1, a.y) != PIPE_TR:
        return False
    for i in range(1, a.h):
        if grid.cell(a.x, a.y + i) != PIPE_L or grid.cell(a.x + 1, a.y + i) != PIPE_R:
            return False
    return True


def _check_coin_arc(grid, a):
    if not 3 <= a.w <= 5:
        return False
    heights = _arc_heights(a.w)
    base = a.y + a.h - 1  # row of the lowest coins
    for j, h in enumerate(heights):
        if grid.cell(a.x + j, base - (h - min(heights))) != COIN:
            return False
    return a.h == max(heights) - min(heights) + 1


def _check_platform_run(grid, a):
    if a.h != 1 or not 4 <= a.w <= 7:
        return False
    return all(grid.cell(a.x + dx, a.y) == PLATFORM for dx in range(a.w))


RULE_PREDICATES = {
    "staircase": _check_staircase,
    "gap": _check_gap,
    "enemy-pair": _check_enemy_pair,
    "pipe": _check_pipe,
    "coin-arc": _check_coin_arc,
    "platform-run": _check_platform_run,
}


def check_annotation(corpus: Corpus, ann: PatternAnnotation) -> bool:
    return RULE_PREDICATES[ann.label](corpus.levels[ann.level_id], ann)


# --- distractors and ornaments ---------------------------------------------

def _write_distractor(cells, x, top, rng):
    kind = int(rng.integers(0, 6))
    if kind == 0:
        cells[int(rng.integers(1, 4)), x] = CLOUD
    elif kind == 1:
        cells[top - 1, x] = BUSH
    elif kind == 2:
        cells[top - 1, x] = HILL
    elif kind == 3:
        # short stair pile, too small to be a staircase
        for i in range(int(rng.integers(1, 3))):
            cells[top - 1 - i, x] = STAIR
    elif kind == 4:
        for i in range(int(rng.integers(1, 4))):
            cells[top - 1 - i, x] = HARD
    else:
        # single-column ground notch, narrower than the gap rule allows
        cells[top:, x] = EMPTY


def _sprinkle_ornaments(cells, ax, ay, aw, ah, top, rng, width, coin_ok=True):
    """1-3 loose tiles just outside the rectangle but inside its centered
    window, so no two pattern instances look alike."""
    classes = (COIN,) if coin_ok else (BUSH, CLOUD)
    for _ in range(1):
        for _attempt in range(8):
            cx = int(rng.integers(max(0, ax - 2), min(width, ax + aw + 2)))
            cy = int(rng.integers(2, top))
            inside = ax <= cx < ax + aw and ay <= cy < ay + ah
            if not inside and cells[cy, cx] == EMPTY:
                cells[cy, cx] = classes[int(rng.integers(0, len(classes)))]
                break


def make_synthetic_corpus(spec: CorpusSpec, seed: int) -> Corpus:
    """Deterministic levels with rule-verified pattern instances."""
    spec.validate()
    vocabulary = LabelVocabulary(list(spec.patterns.keys()))

    deck: list[str] = []
    for name, count in spec.patterns.items():
        deck.extend([name] * count)
    child_rng(seed, 0).shuffle(deck)

    per_level: list[list[str]] = [[] for _ in range(spec.n_levels)]
    for i, name in enumerate(deck):
        per_level[i % spec.n_levels].append(name)

    levels: dict[str, LevelGrid] = {}
    annotations: list[PatternAnnotation] = []
    for li in range(spec.n_levels):
        level_id = f"L{li:02d}"
        rng = child_rng(seed, 1 + li)
        cells = np.full((HEIGHT, spec.width), EMPTY, dtype=np.int16)
        # terrain: ground thickness changes at 4-aligned segment boundaries
        tops = np.empty(spec.width, dtype=np.int64)
        x0 = 0
        while x0 < spec.width:
            seg = 4 * int(rng.integers(4, 11))
            tops[x0:x0 + seg] = HEIGHT - int(rng.integers(MIN_GROUND, MAX_GROUND + 1))
            x0 += seg
        for cx in range(spec.width):
            cells[tops[cx]:, cx] = GROUND

        blocked = np.zeros(spec.width, dtype=bool)
        x = 4
        for name in per_level[li]:
            x += 2 * int(rng.integers(2, 7))
            x = (x + 1) // 2 * 2  # 2-aligned: four stride-8 window phases
            if x + _MAX_WIDTH[name] + 4 >= spec.width:
                break
            site = slice(max(0, x - 1), x + _MAX_WIDTH[name] + 1)
            top = int(tops[site].max())  # flatten the site to its lowest top
            cells[:top, site] = EMPTY
            cells[top:, site] = GROUND
            tops[site] = top
            ax, ay, aw, ah = _WRITERS[name](cells, x, top, rng)
            annotations.append(PatternAnnotation(level_id, ax, ay, aw, ah, name))
            _sprinkle_ornaments(cells, ax, ay, aw, ah, top, rng, spec.width,
                                coin_ok="coin-arc" not in spec.patterns)
            blocked[max(0, ax - 3):ax + aw + 3] = True
            x = ax + aw + 4
        if spec.patterns:
            for sx in range(4, spec.width - 4, 2):
                if blocked[sx - 1:sx + 3].any():
                    continue
                if rng.random() < spec.distractor_rate / 2:
                    _write_distractor(cells, sx, int(tops[sx]), rng)
                    blocked[sx - 1:sx + 2] = True
        levels[level_id] = LevelGrid(cells, DEFAULT_REGISTRY)
    return Corpus(levels, annotations, vocabulary)
