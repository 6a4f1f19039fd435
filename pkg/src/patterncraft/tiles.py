"""Tile taxonomy: the 30-class registry shared by every other module.

The registry ships as a versioned JSON file (``data/tiles-v1.json``), a list
of ``{id, glyph, name}`` records. Glyphs are single printable characters used
by the ``.lvl`` text format; ``-`` is reserved for the empty tile and may not
appear in the registry.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

EMPTY_GLYPH = "-"
NUM_TILE_CLASSES = 30
REGISTRY_FILE = "tiles-v1.json"


@dataclass(frozen=True)
class TileClass:
    id: int
    glyph: str
    name: str


class TileRegistry:
    """Bijection between tile ids 0..29 and their glyphs/names."""

    def __init__(self, classes: list[TileClass]):
        if len(classes) != NUM_TILE_CLASSES:
            raise ValueError(f"registry must hold exactly {NUM_TILE_CLASSES} classes, got {len(classes)}")
        if sorted(c.id for c in classes) != list(range(NUM_TILE_CLASSES)):
            raise ValueError("tile ids must be a bijection onto 0..29")
        glyphs = [c.glyph for c in classes]
        if len(set(glyphs)) != len(glyphs):
            raise ValueError("tile glyphs must be unique")
        for c in classes:
            if len(c.glyph) != 1 or not c.glyph.isprintable():
                raise ValueError(f"glyph of class {c.id} must be a single printable character")
            if c.glyph == EMPTY_GLYPH:
                raise ValueError(f"glyph {EMPTY_GLYPH!r} is reserved for the empty tile")
        self.classes = sorted(classes, key=lambda c: c.id)
        self._by_glyph = {c.glyph: c for c in self.classes}

    def __len__(self) -> int:
        return len(self.classes)

    def by_id(self, tile_id: int) -> TileClass:
        return self.classes[tile_id]

    def by_glyph(self, glyph: str) -> TileClass | None:
        return self._by_glyph.get(glyph)

    def glyph_of(self, tile_id: int) -> str:
        return self.classes[tile_id].glyph

    @classmethod
    def from_json(cls, text: str) -> "TileRegistry":
        raw = json.loads(text)
        return cls([TileClass(int(r["id"]), str(r["glyph"]), str(r["name"])) for r in raw])

    def to_json(self) -> str:
        return json.dumps([{"id": c.id, "glyph": c.glyph, "name": c.name} for c in self.classes], indent=2)


def _load_default() -> TileRegistry:
    data = resources.files("patterncraft.data").joinpath(REGISTRY_FILE).read_text("utf-8")
    return TileRegistry.from_json(data)


DEFAULT_REGISTRY = _load_default()
