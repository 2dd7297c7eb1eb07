"""Synthetic document engine: text sampling, glyph rendering, transforms, dataset files."""
from .corpus import sample_corpus
from .dataset import (GenerationError, check_disjoint, generate_dataset, generate_samples, load_dataset,
                      read_pgm, write_pgm)
from .render import GlyphAtlas, LayoutError, ScenarioSpec, SlotSpec, render
from .scenarios import PRESETS, Scenario, card, passport, ticket
from .transforms import TransformSpec, transform_and_noise

__all__ = [
    "GenerationError", "GlyphAtlas", "LayoutError", "PRESETS", "Scenario", "ScenarioSpec", "SlotSpec",
    "TransformSpec", "card", "check_disjoint", "generate_dataset", "generate_samples", "load_dataset",
    "passport", "read_pgm", "render", "sample_corpus", "ticket", "transform_and_noise", "write_pgm",
]
