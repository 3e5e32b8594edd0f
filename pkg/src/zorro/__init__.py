"""Masked multimodal transformers with modality-pure output streams."""

__version__ = "0.1.0"
