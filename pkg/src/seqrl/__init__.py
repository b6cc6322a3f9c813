"""Sequence-level policy-gradient fine-tuning for small seq2seq models.

Subpackages cover the full loop: synthetic translation tasks, an
encoder-decoder policy with a built-in reverse-mode gradient engine,
sentence-level MT rewards, candidate sampling and reward shaping,
off- and on-policy objectives, and an asynchronous worker/learner
runtime with a bounded trajectory queue.
"""

__version__ = "0.1.0"
