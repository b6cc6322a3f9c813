"""Training data: synthetic translation tasks, vocabulary, and corpus files.

Reserved ids 0..3 are pad/bos/eos/unk; content tokens follow.  A TokenSeq
holds content-token ids only — specials never appear in stored sequences.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .model import BOS_ID, EOS_ID, PAD_ID, UNK_ID

RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

TASK_KINDS = ("copy", "reverse", "cipher", "cipher-reverse")


@dataclass(frozen=True)
class TokenSeq:
    """A tokenized sentence: content ids, display surface, termination flag.

    `terminated` is False only for sampled hypotheses cut off at the decode
    length cap; reference data is always terminated.  Equality (and thus
    candidate deduplication) covers tokens and the flag.
    """

    tokens: tuple[int, ...]
    surface: str = field(default="", compare=False)
    terminated: bool = field(default=True, compare=True)

    def __post_init__(self):
        if any(t < 0 for t in self.tokens):
            raise ValueError("token ids must be non-negative")

    def __len__(self):
        return len(self.tokens)


class Vocabulary:
    """Bijection between token strings and ids, with fixed reserved ids."""

    def __init__(self, content_tokens: list[str]):
        tokens = list(RESERVED_TOKENS) + list(content_tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self._tokens = tokens
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self):
        return len(self._tokens)

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, text: str) -> TokenSeq:
        ids = tuple(self._ids.get(tok, UNK_ID) for tok in text.split())
        return TokenSeq(tokens=ids, surface=self.decode(ids))

    def decode(self, ids) -> str:
        return " ".join(self._tokens[i] for i in ids)

    def seq(self, ids, terminated: bool = True) -> TokenSeq:
        ids = tuple(int(i) for i in ids)
        return TokenSeq(tokens=ids, surface=self.decode(ids), terminated=terminated)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok in self._tokens:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError(f"{path}: reserved tokens missing or reordered")
        return cls(tokens[len(RESERVED_TOKENS):])


def build_vocab(paths, max_size: int) -> Vocabulary:
    """Frequency-ranked whitespace tokens from the given files, truncated."""
    counts: Counter[str] = Counter()
    for path in paths:
        for line in _read_lines(path):
            counts.update(line.split())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([tok for tok, _ in ranked[:max_size]])


@dataclass(frozen=True)
class SyntheticTaskSpec:
    kind: str = "cipher-reverse"
    vocab_size: int = 50
    length_range: tuple[int, int] = (5, 20)
    sizes: tuple[int, int, int] = (10000, 500, 500)
    seed: int = 13
    cipher_seed: int = 1

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        lo, hi = self.length_range
        if lo < 1 or hi < lo:
            raise ValueError("length_range must satisfy 1 <= lo <= hi")
        if self.vocab_size < 2 or any(n < 0 for n in self.sizes):
            raise ValueError("vocab_size must be >= 2 and split sizes non-negative")


@dataclass(frozen=True)
class ParallelCorpus:
    vocab: Vocabulary
    train: list[tuple[TokenSeq, TokenSeq]]
    dev: list[tuple[TokenSeq, TokenSeq]]
    test: list[tuple[TokenSeq, TokenSeq]]

    def split(self, name: str) -> list[tuple[TokenSeq, TokenSeq]]:
        try:
            return {"train": self.train, "dev": self.dev, "test": self.test}[name]
        except KeyError:
            raise ValueError(f"unknown split {name!r}") from None


def content_vocabulary(vocab_size: int) -> Vocabulary:
    width = max(2, len(str(vocab_size - 1)))
    return Vocabulary([f"w{i:0{width}d}" for i in range(vocab_size)])


def cipher_permutation(spec: SyntheticTaskSpec) -> dict[int, int]:
    """Bijection over content ids, fixed by cipher_seed."""
    first = len(RESERVED_TOKENS)
    ids = np.arange(first, first + spec.vocab_size)
    shuffled = np.random.default_rng(spec.cipher_seed).permutation(ids)
    return {int(a): int(b) for a, b in zip(ids, shuffled)}


def task_target(kind: str, perm: dict[int, int], src: tuple[int, ...]) -> tuple[int, ...]:
    """The task's ground-truth translation of a source id sequence."""
    if kind == "copy":
        return tuple(src)
    if kind == "reverse":
        return tuple(reversed(src))
    if kind == "cipher":
        return tuple(perm[t] for t in src)
    if kind == "cipher-reverse":
        return tuple(reversed([perm[t] for t in src]))
    raise ValueError(f"unknown task kind {kind!r}")


def generate_synthetic(spec: SyntheticTaskSpec) -> ParallelCorpus:
    """Deterministic corpus from the spec; dev/test sources never occur in train."""
    vocab = content_vocabulary(spec.vocab_size)
    perm = cipher_permutation(spec)
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.length_range
    first = len(RESERVED_TOKENS)

    def draw_source() -> tuple[int, ...]:
        length = int(rng.integers(lo, hi + 1))
        return tuple(int(t) for t in rng.integers(first, first + spec.vocab_size, size=length))

    splits: list[list[tuple[TokenSeq, TokenSeq]]] = []
    train_sources: set[tuple[int, ...]] = set()
    for split_idx, size in enumerate(spec.sizes):
        pairs = []
        for _ in range(size):
            src = draw_source()
            while split_idx > 0 and src in train_sources:
                src = draw_source()
            if split_idx == 0:
                train_sources.add(src)
            tgt = task_target(spec.kind, perm, src)
            pairs.append((vocab.seq(src), vocab.seq(tgt)))
        splits.append(pairs)
    return ParallelCorpus(vocab=vocab, train=splits[0], dev=splits[1], test=splits[2])


def sample_training_pair(corpus: ParallelCorpus, rng: np.random.Generator) -> tuple[TokenSeq, TokenSeq]:
    if not corpus.train:
        raise ValueError("train split is empty")
    return corpus.train[int(rng.integers(len(corpus.train)))]


def _read_lines(path) -> list[str]:
    """UTF-8 lines; a decode failure reports the 1-based line number."""
    with open(path, "rb") as f:
        raw_lines = f.read().splitlines()
    lines = []
    for i, raw in enumerate(raw_lines, start=1):
        try:
            lines.append(raw.decode("utf-8"))
        except UnicodeDecodeError as e:
            raise ValueError(f"{path}: line {i} is not valid UTF-8") from e
    return lines


def load_pairs(src_path, tgt_path, vocab: Vocabulary) -> list[tuple[TokenSeq, TokenSeq]]:
    """Parallel line-aligned files to encoded pairs; OOV tokens become unk."""
    src_lines = _read_lines(src_path)
    tgt_lines = _read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise ValueError(
            f"line count mismatch: {src_path} has {len(src_lines)} lines, "
            f"{tgt_path} has {len(tgt_lines)}"
        )
    pairs = []
    for s, t in zip(src_lines, tgt_lines):
        src, tgt = vocab.encode(s), vocab.encode(t)
        if len(src) == 0 or len(tgt) == 0:
            raise ValueError("empty sentence in corpus files")
        pairs.append((src, tgt))
    return pairs


def load_corpus(prefixes: dict[str, tuple[str, str]], vocab: Vocabulary) -> ParallelCorpus:
    """Builds a corpus from {split: (src_path, tgt_path)}; missing splits are empty."""
    splits = {name: load_pairs(*paths, vocab) for name, paths in prefixes.items()}
    return ParallelCorpus(
        vocab=vocab,
        train=splits.get("train", []),
        dev=splits.get("dev", []),
        test=splits.get("test", []),
    )


__all__ = [
    "TokenSeq", "Vocabulary", "ParallelCorpus", "SyntheticTaskSpec",
    "TASK_KINDS", "RESERVED_TOKENS",
    "build_vocab", "generate_synthetic", "sample_training_pair",
    "load_pairs", "load_corpus", "content_vocabulary",
    "cipher_permutation", "task_target",
]
