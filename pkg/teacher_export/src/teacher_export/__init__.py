"""All-layer teacher representation export for distillation."""

__version__ = "0.1.0"
