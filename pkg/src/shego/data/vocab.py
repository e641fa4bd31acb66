"""Word-level tokenizer and the reserved-range vocabulary.

Id layout::

    [specials | base words | sentinels <M1>..<Mk> | slot tokens | shared prompts]

The backbone embeds and predicts only the "text" prefix (specials, words,
sentinels). Slot and prompt ids exist so every trainable prompt row has a
stable vocabulary identity; their vectors live in the prompt bank.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

PAD, EOS, UNK, SYS, USR = "<pad>", "<eos>", "<unk>", "<sys>", "<usr>"
SPECIALS = (PAD, EOS, UNK, SYS, USR)
COLON = ":"
NONE_VALUE = "none"

_WORD_RE = re.compile(r"\w+|[^\w\s]")


def segment(text: str) -> list[str]:
    """Lowercase, then split into word runs and single punctuation marks."""
    return _WORD_RE.findall(text.lower())


def normalize_text(text: str) -> str:
    return " ".join(segment(text))


def sentinel(j: int) -> str:
    """Sentinel token for the j-th slot of a service (1-based)."""
    return f"<M{j}>"


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]
    num_sentinels: int
    slot_tokens: tuple[str, ...] = ()
    num_prompts: int = 0

    @classmethod
    def build(cls, texts: Iterable[str], num_sentinels: int, slot_tokens: Sequence[str] = (),
              num_prompts: int = 0, extra_words: Iterable[str] = ()) -> "Vocabulary":
        words = set(extra_words)
        words.add(COLON)
        words.add(NONE_VALUE)
        for text in texts:
            words.update(segment(text))
        words.difference_update(SPECIALS)
        return cls(tuple(sorted(words)), num_sentinels, tuple(slot_tokens), num_prompts)

    @cached_property
    def tokens(self) -> list[str]:
        return (list(SPECIALS) + list(self.words)
                + [sentinel(j) for j in range(1, self.num_sentinels + 1)]
                + list(self.slot_tokens)
                + [f"<prompt{i}>" for i in range(self.num_prompts)])

    @cached_property
    def _ids(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    # id ranges, half-open
    @property
    def base_range(self) -> range:
        return range(0, len(SPECIALS) + len(self.words))

    @property
    def sentinel_range(self) -> range:
        start = self.base_range.stop
        return range(start, start + self.num_sentinels)

    @property
    def slot_range(self) -> range:
        start = self.sentinel_range.stop
        return range(start, start + len(self.slot_tokens))

    @property
    def prompt_range(self) -> range:
        start = self.slot_range.stop
        return range(start, start + self.num_prompts)

    @property
    def text_size(self) -> int:
        """Number of ids the backbone embeds and predicts."""
        return self.sentinel_range.stop

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    @property
    def unk_id(self) -> int:
        return 2

    def id(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def sentinel_id(self, j: int) -> int:
        if not 1 <= j <= self.num_sentinels:
            raise IndexError(f"sentinel {j} outside 1..{self.num_sentinels}")
        return self.sentinel_range.start + j - 1

    def sentinel_number(self, idx: int) -> int | None:
        """Inverse of ``sentinel_id``; None for non-sentinel ids."""
        if idx in self.sentinel_range:
            return idx - self.sentinel_range.start + 1
        return None

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def to_dict(self) -> dict:
        return {"words": list(self.words), "num_sentinels": self.num_sentinels,
                "slot_tokens": list(self.slot_tokens), "num_prompts": self.num_prompts}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(tuple(d["words"]), d["num_sentinels"], tuple(d["slot_tokens"]), d["num_prompts"])


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return vocab.encode(segment(text))


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    skip = {vocab.pad_id, vocab.eos_id}
    return " ".join(vocab.token(i) for i in ids if i not in skip)
