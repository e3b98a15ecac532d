"""Transaction-sentence grammar.

A transaction renders as ``[TYPE] <DEBIT|CREDIT> [AMT] <bucket> [NAME] <desc>``
and an account history renders as sentences joined by `` [SEP] ``. The parser
is the exact inverse of the renderer on its image, so every serialized
document round-trips.

Descriptions are normalized before rendering: reserved marker substrings are
scrubbed (case-insensitively, replaced by a space), text is lowercased,
whitespace runs collapse to single spaces. Because all structural tokens are
uppercase and normalized text is lowercase, no description can ever collide
with a marker or structural atom.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

DEBIT = "DEBIT"
CREDIT = "CREDIT"
DIRECTIONS = (DEBIT, CREDIT)

RESERVED_MARKERS = ("[TYPE]", "[AMT]", "[NAME]", "[SEP]", "[CLS]", "[MASK]", "[PAD]")
EMPTY_DESC = "EMPTY_DESC"

DEFAULT_WIDTH_CENTS = 5000
DEFAULT_MAX_INDEX = 200

_MARKER_RE = re.compile(
    "|".join(re.escape(m) for m in RESERVED_MARKERS), flags=re.IGNORECASE
)
_SENTENCE_RE = re.compile(
    r"^\[TYPE\] (DEBIT|CREDIT) \[AMT\] (\S+) \[NAME\] (.+)$", flags=re.DOTALL
)
_BUCKET_TOKEN_RE = re.compile(r"^AMT_(\d+)_(\d+|INF)$")


class MalformedSentence(ValueError):
    """Raised when text does not match the sentence or document grammar."""


@dataclass(frozen=True)
class BucketConfig:
    """Amount discretization: fixed-width bins with a clamped top bin."""

    width_cents: int = DEFAULT_WIDTH_CENTS
    max_index: int = DEFAULT_MAX_INDEX

    def __post_init__(self):
        if self.width_cents <= 0:
            raise ValueError("width_cents must be positive")
        if self.max_index < 0:
            raise ValueError("max_index must be non-negative")


@dataclass(frozen=True)
class AmountBucket:
    index: int
    width_cents: int = DEFAULT_WIDTH_CENTS
    max_index: int = DEFAULT_MAX_INDEX

    def __post_init__(self):
        if not 0 <= self.index <= self.max_index:
            raise ValueError(f"bucket index {self.index} outside [0, {self.max_index}]")

    @property
    def token(self) -> str:
        lo = self.index * self.width_cents // 100
        if self.index == self.max_index:
            return f"AMT_{lo}_INF"
        hi = (self.index + 1) * self.width_cents // 100
        return f"AMT_{lo}_{hi}"


def bucket_tokens(config: BucketConfig = BucketConfig()) -> list[str]:
    """All bucket tokens in index order (vocabulary reservation order)."""
    return [
        AmountBucket(i, config.width_cents, config.max_index).token
        for i in range(config.max_index + 1)
    ]


def bucket_amount(
    amount_cents: int,
    width_cents: int = DEFAULT_WIDTH_CENTS,
    max_index: int = DEFAULT_MAX_INDEX,
) -> AmountBucket:
    """Map a positive amount to its bucket: min(floor(amount/width), max_index).

    Direction is not encoded here; the sentence's type field carries it.
    """
    if amount_cents <= 0:
        raise ValueError("amount_cents must be positive")
    if width_cents <= 0:
        raise ValueError("width_cents must be positive")
    index = min(amount_cents // width_cents, max_index)
    return AmountBucket(index, width_cents, max_index)


def normalize_description(text: str) -> str:
    """Scrub reserved markers, lowercase, collapse whitespace, strip."""
    prev = None
    while prev != text:
        prev = text
        text = _MARKER_RE.sub(" ", text)
    text = text.lower()
    return " ".join(text.split())


@dataclass(frozen=True)
class Sentence:
    direction_token: str
    amount_bucket: AmountBucket
    description_text: str

    def __post_init__(self):
        if self.direction_token not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction_token!r}")

    def render(self) -> str:
        desc = self.description_text if self.description_text else EMPTY_DESC
        return (
            f"[TYPE] {self.direction_token} "
            f"[AMT] {self.amount_bucket.token} "
            f"[NAME] {desc}"
        )


@dataclass(frozen=True)
class Document:
    account_id: str
    sentences: tuple[Sentence, ...] = field(default_factory=tuple)

    def render(self) -> str:
        return " [SEP] ".join(s.render() for s in self.sentences)


def serialize_transaction(txn, bucket_config: BucketConfig = BucketConfig()) -> Sentence:
    """Render one transaction as a sentence; normalization always succeeds."""
    bucket = bucket_amount(
        txn.amount_cents, bucket_config.width_cents, bucket_config.max_index
    )
    return Sentence(txn.direction, bucket, normalize_description(txn.description))


def serialize_document(
    account_id: str,
    transactions: Sequence,
    bucket_config: BucketConfig = BucketConfig(),
) -> Document:
    """Serialize a history chronologically; rejects empty histories."""
    if not transactions:
        raise ValueError("cannot serialize an empty transaction list")
    ordered = sorted(transactions, key=lambda t: t.timestamp)
    return Document(
        account_id,
        tuple(serialize_transaction(t, bucket_config) for t in ordered),
    )


def _parse_bucket_token(token: str, config: BucketConfig) -> AmountBucket:
    m = _BUCKET_TOKEN_RE.match(token)
    if not m:
        raise MalformedSentence(f"unparseable bucket token {token!r}")
    lo_cents = int(m.group(1)) * 100
    if lo_cents % config.width_cents:
        raise MalformedSentence(f"bucket token {token!r} off the configured grid")
    index = lo_cents // config.width_cents
    try:
        bucket = AmountBucket(index, config.width_cents, config.max_index)
    except ValueError as exc:
        raise MalformedSentence(str(exc)) from exc
    if bucket.token != token:
        raise MalformedSentence(f"bucket token {token!r} inconsistent with config")
    return bucket


def parse_sentence(text: str, bucket_config: BucketConfig = BucketConfig()) -> Sentence:
    """Inverse of Sentence.render on its image."""
    m = _SENTENCE_RE.match(text)
    if not m:
        raise MalformedSentence(f"not a sentence: {text!r}")
    direction, bucket_token, desc = m.groups()
    bucket = _parse_bucket_token(bucket_token, bucket_config)
    if desc == EMPTY_DESC:
        desc = ""
    return Sentence(direction, bucket, desc)


def parse_document(
    text: str,
    account_id: str = "",
    bucket_config: BucketConfig = BucketConfig(),
) -> Document:
    """Split on `` [SEP] `` and parse each sentence, reporting failure position."""
    if not text:
        raise MalformedSentence("empty document at sentence position 0")
    sentences = []
    for pos, chunk in enumerate(text.split(" [SEP] ")):
        try:
            sentences.append(parse_sentence(chunk, bucket_config))
        except MalformedSentence as exc:
            raise MalformedSentence(f"sentence position {pos}: {exc}") from exc
    return Document(account_id, tuple(sentences))


def render_corpus_lines(documents: Iterable[Document]) -> Iterable[str]:
    """One rendered document per line, the tokenizer-training text format."""
    for doc in documents:
        yield doc.render()
