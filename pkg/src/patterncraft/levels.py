"""Level grids and the ``.lvl`` text format.

A level file is UTF-8 text: one row of glyphs per line, top to bottom, all
lines the same length, ``-`` marking empty tiles. Grids hold tile ids in a
``(height, width)`` int16 array with ``-1`` for empty; ``x`` runs rightward,
``y`` downward.
"""
from __future__ import annotations

import numpy as np

from .tiles import DEFAULT_REGISTRY, EMPTY_GLYPH, TileRegistry

MIN_SIZE = 8
EMPTY = -1


class LevelFormatError(ValueError):
    pass


class RaggedRows(LevelFormatError):
    pass


class UnknownGlyph(LevelFormatError):
    def __init__(self, glyph: str, x: int, y: int):
        super().__init__(f"unknown glyph {glyph!r} at column {x}, row {y}")
        self.glyph, self.x, self.y = glyph, x, y


class TooSmall(LevelFormatError):
    pass


class LevelGrid:
    """Immutable 2-D grid of tile ids (or EMPTY), at least 8x8."""

    def __init__(self, cells: np.ndarray, registry: TileRegistry = DEFAULT_REGISTRY):
        cells = np.asarray(cells, dtype=np.int16)
        if cells.ndim != 2:
            raise LevelFormatError("cells must be 2-D")
        h, w = cells.shape
        if h < MIN_SIZE or w < MIN_SIZE:
            raise TooSmall(f"level must be at least {MIN_SIZE}x{MIN_SIZE}, got {w}x{h}")
        if cells.size and (cells.min() < EMPTY or cells.max() >= len(registry)):
            raise LevelFormatError("cell ids must be EMPTY or a registered tile class")
        self.cells = cells
        self.cells.setflags(write=False)
        self.registry = registry

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    def cell(self, x: int, y: int) -> int:
        return int(self.cells[y, x])

    def with_cells(self, cells: np.ndarray) -> "LevelGrid":
        return LevelGrid(cells, self.registry)

    def __eq__(self, other) -> bool:
        return isinstance(other, LevelGrid) and np.array_equal(self.cells, other.cells)

    def __repr__(self) -> str:
        return f"LevelGrid({self.width}x{self.height})"


def parse_level(text: str, registry: TileRegistry = DEFAULT_REGISTRY) -> LevelGrid:
    """Parse ``.lvl`` text into a LevelGrid.

    Raises RaggedRows / UnknownGlyph / TooSmall on malformed input.
    """
    lines = text.splitlines()
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TooSmall("empty level text")
    width = len(lines[0])
    if any(len(line) != width for line in lines):
        raise RaggedRows("rows differ in length")
    if len(lines) < MIN_SIZE or width < MIN_SIZE:
        raise TooSmall(f"level must be at least {MIN_SIZE}x{MIN_SIZE}, got {width}x{len(lines)}")
    cells = np.full((len(lines), width), EMPTY, dtype=np.int16)
    for y, line in enumerate(lines):
        for x, glyph in enumerate(line):
            if glyph == EMPTY_GLYPH:
                continue
            tile = registry.by_glyph(glyph)
            if tile is None:
                raise UnknownGlyph(glyph, x, y)
            cells[y, x] = tile.id
    return LevelGrid(cells, registry)


def serialize_level(grid: LevelGrid) -> str:
    """Inverse of parse_level; parse(serialize(g)) == g."""
    rows = []
    for y in range(grid.height):
        row = grid.cells[y]
        rows.append("".join(EMPTY_GLYPH if v == EMPTY else grid.registry.glyph_of(int(v)) for v in row))
    return "\n".join(rows) + "\n"
