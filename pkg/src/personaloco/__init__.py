"""Characteristics-aware real-time locomotion: conditional motion diffusion
with body-shape and trait-text personas, plus training, fine-tuning,
evaluation and interactive serving."""

__version__ = "0.1.0"
