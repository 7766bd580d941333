"""Corpus loading, rule tokenization, vocabulary, and sample encoding.

Dataset files are JSON Lines with keys ``context`` (array of strings, last
entry is the post), ``knowledge`` (array of strings) and ``response``
(string). Encoding keeps the latest ``m_max`` context utterances, truncates
the response to ``max_target_len`` ids including BOS/EOS, and appends
knowledge sentences in order until the separator-joined concatenation would
exceed ``max_source_len``; a sentence that does not fit is dropped whole,
along with everything after it, so per-sentence labels stay aligned.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field

PAD, BOS, EOS, UNK, SEP = 0, 1, 2, 3, 4
RESERVED_TOKENS = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"]


class DatasetError(ValueError):
    """A dataset file failed structural or record-level validation."""


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, detach punctuation as 1-char tokens."""
    tokens = []
    word = []
    for ch in text.lower():
        if ch.isalnum():
            word.append(ch)
        else:
            if word:
                tokens.append("".join(word))
                word = []
            if not ch.isspace():
                tokens.append(ch)
    if word:
        tokens.append("".join(word))
    return tokens


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


@dataclass
class DialogueSample:
    """One grounded conversation turn; the last context utterance is the post."""

    context: list[str]
    knowledge: list[str]
    response: str


def load_jsonl(path) -> list[DialogueSample]:
    """Parse a dataset file, reporting malformed lines by line number."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetError(f"line {lineno}: invalid JSON ({err.msg})") from err
            samples.append(_validate_record(obj, lineno))
    return samples


def _validate_record(obj, lineno: int) -> DialogueSample:
    if not isinstance(obj, dict):
        raise DatasetError(f"line {lineno}: record is not an object")
    for key, typ in (("context", list), ("knowledge", list), ("response", str)):
        if key not in obj:
            raise DatasetError(f"line {lineno}: missing field '{key}'")
        if not isinstance(obj[key], typ):
            raise DatasetError(f"line {lineno}: field '{key}' has wrong type")
    context, knowledge, response = obj["context"], obj["knowledge"], obj["response"]
    if not context:
        raise DatasetError(f"line {lineno}: context must contain at least one utterance")
    if not knowledge:
        raise DatasetError(f"line {lineno}: knowledge must contain at least one sentence")
    for name, seq in (("context", context), ("knowledge", knowledge)):
        for i, s in enumerate(seq):
            if not isinstance(s, str):
                raise DatasetError(f"line {lineno}: {name}[{i}] is not a string")
            if not tokenize(s):
                raise DatasetError(f"line {lineno}: {name}[{i}] tokenizes to nothing")
    if not tokenize(response):
        raise DatasetError(f"line {lineno}: response tokenizes to nothing")
    return DialogueSample(list(context), list(knowledge), response)


class Vocabulary:
    """Token/id bijection with fixed reserved ids 0..4."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = RESERVED_TOKENS + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.id_to_token:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            lines = [line.rstrip("\n") for line in fh]
        while lines and lines[-1] == "":
            lines.pop()
        if lines[:5] != RESERVED_TOKENS:
            raise ValueError(f"{path}: missing 5-line reserved header")
        return cls(lines[5:])


def build_vocab(samples: list[DialogueSample], min_freq: int = 1, max_size: int = 50000) -> Vocabulary:
    """Frequency-sorted vocabulary; ties break lexicographically."""
    if not samples:
        raise ValueError("cannot build a vocabulary from zero samples")
    counts = Counter()
    for s in samples:
        for text in s.context + s.knowledge + [s.response]:
            counts.update(tokenize(text))
    kept = [t for t, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept[:max_size])


@dataclass
class EncodeConfig:
    m_max: int = 10
    max_source_len: int = 1024
    max_target_len: int = 64


@dataclass
class EncodedSample:
    """Token-id form of a sample plus the segment layout of the concatenation."""

    context_ids: list[list[int]]
    knowledge_ids: list[list[int]]
    response_ids: list[int]
    segment_lengths: list[int]
    context_tokens: list[list[str]] = field(repr=False, default_factory=list)
    knowledge_tokens: list[list[str]] = field(repr=False, default_factory=list)
    response_tokens: list[str] = field(repr=False, default_factory=list)

    @property
    def m(self) -> int:
        return len(self.context_ids)

    @property
    def l(self) -> int:  # noqa: E741
        return len(self.knowledge_ids)

    def source_ids(self) -> list[int]:
        """Segments joined by a single SEP id, in context-then-knowledge order."""
        out: list[int] = []
        for seg in self.context_ids + self.knowledge_ids:
            if out:
                out.append(SEP)
            out.extend(seg)
        return out

    def segment_offsets(self) -> list[tuple[int, int]]:
        """(offset, length) of each segment inside source_ids, skipping SEPs."""
        offsets = []
        pos = 0
        for length in self.segment_lengths:
            offsets.append((pos, length))
            pos += length + 1  # the trailing SEP
        return offsets


def kept_segments(
    sample: DialogueSample, config: EncodeConfig
) -> tuple[list[list[str]], list[list[str]], list[str]]:
    """Apply truncation rules on the token level, before any id mapping.

    Returns (context token lists, knowledge token lists, response tokens);
    the response here excludes BOS/EOS but honours the id budget.
    """
    context = [tokenize(u) for u in sample.context[-config.m_max :]]

    post = context[-1]
    if len(post) > config.max_source_len:
        warnings.warn("post alone exceeds max_source_len; truncating from the left")
        context = [post[-config.max_source_len :]]
    else:
        # Drop the oldest kept utterances until the context side fits.
        while len(context) > 1 and sum(map(len, context)) + len(context) - 1 > config.max_source_len:
            context = context[1:]

    budget = config.max_source_len - (sum(map(len, context)) + len(context) - 1)
    knowledge: list[list[str]] = []
    for sent in sample.knowledge:
        toks = tokenize(sent)
        if len(toks) + 1 > budget:  # +1 for the SEP joining it
            break
        knowledge.append(toks)
        budget -= len(toks) + 1

    response = tokenize(sample.response)[: config.max_target_len - 2]
    return context, knowledge, response


def encode_sample(sample: DialogueSample, vocab: Vocabulary, config: EncodeConfig | None = None) -> EncodedSample:
    config = config or EncodeConfig()
    context, knowledge, response = kept_segments(sample, config)
    context_ids = [vocab.encode(seg) for seg in context]
    knowledge_ids = [vocab.encode(seg) for seg in knowledge]
    response_ids = [BOS] + vocab.encode(response) + [EOS]
    return EncodedSample(
        context_ids=context_ids,
        knowledge_ids=knowledge_ids,
        response_ids=response_ids,
        segment_lengths=[len(s) for s in context_ids + knowledge_ids],
        context_tokens=context,
        knowledge_tokens=knowledge,
        response_tokens=response,
    )
