"""Desk-scale seq2seq lab for forward-backward decoding regularization."""

__version__ = "0.1.0"

from .kernels import BACKEND as kernel_backend  # noqa: F401
