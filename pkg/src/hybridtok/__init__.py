"""Hybrid visual tokenizer: discrete pixel tokens plus distilled learnable tokens."""

__version__ = "0.1.0"
