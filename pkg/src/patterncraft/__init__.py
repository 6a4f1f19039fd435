"""patterncraft: co-creative level design with personal pattern vocabularies.

Levels are grids over a 30-class tile taxonomy; designers annotate 8x8 chunks
with their own pattern names; a random forest propagates those labels; a
label-conditioned convolutional autoencoder learns to generate and
self-label new structure, with a fast student-teacher transfer path for
interactive retraining.
"""

from .tiles import DEFAULT_REGISTRY, TileClass, TileRegistry
from .levels import LevelGrid, parse_level, serialize_level
from .chunks import (
    Chunk,
    LabelVocabulary,
    LabeledChunk,
    PatternAnnotation,
    annotation_to_examples,
    decode_chunk,
    encode_chunk,
    sample_negatives,
)
from .corpus import Corpus, CorpusSpec, make_synthetic_corpus
from .autoenc import AeConfig, AutoencoderModel, build, generate, reconstruct, train, transfer
from .forest import ForestConfig, ForestModel, autolabel, fit, incremental_update, predict

__version__ = "0.1.0"

__all__ = [
    "AeConfig",
    "AutoencoderModel",
    "Chunk",
    "Corpus",
    "CorpusSpec",
    "DEFAULT_REGISTRY",
    "ForestConfig",
    "ForestModel",
    "LabelVocabulary",
    "LabeledChunk",
    "LevelGrid",
    "PatternAnnotation",
    "TileClass",
    "TileRegistry",
    "annotation_to_examples",
    "autolabel",
    "build",
    "decode_chunk",
    "encode_chunk",
    "fit",
    "generate",
    "incremental_update",
    "make_synthetic_corpus",
    "parse_level",
    "predict",
    "reconstruct",
    "sample_negatives",
    "serialize_level",
    "train",
    "transfer",
]
