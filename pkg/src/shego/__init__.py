"""Schema-graph prompted dialogue state tracking on a frozen toy seq2seq backbone."""

__version__ = "0.1.0"
