"""Desk-scale transducer ASR training with teacher-representation distillation."""

__version__ = "0.1.0"
