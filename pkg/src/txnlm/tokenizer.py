"""Subword vocabulary over rendered documents.

Structural grammar atoms (markers, directions, bucket tokens) are pre-seeded
at fixed ids and never merged or split. Description words are segmented with
greedy longest-match against a vocabulary learned by BPE-style pair merging;
non-initial pieces carry the ``##`` continuation prefix. Normalized
descriptions are lowercase while every structural atom is uppercase, so the
two namespaces cannot collide.
"""

from __future__ import annotations

import heapq
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .grammar import BucketConfig, bucket_tokens

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3
MASK_ID = 4
TYPE_ID = 5
AMT_ID = 6
NAME_ID = 7
DEBIT_ID = 8
CREDIT_ID = 9
EMPTY_DESC_ID = 10

SPECIAL_TOKENS = (
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "[TYPE]", "[AMT]", "[NAME]", "DEBIT", "CREDIT", "EMPTY_DESC",
)  # fmt: skip

# Lowest id whose token may be masked during pretraining: directions, bucket
# tokens, EMPTY_DESC and description subwords; everything below is structure.
MASKABLE_MIN_ID = DEBIT_ID

VOCAB_FORMAT_VERSION = 1
_HEADER_RE = re.compile(
    r"^# txnlm-vocab v(\d+) max_index=(\d+) width_cents=(\d+)"
    r"(?: config_hash=(\S+) seed=(-?\d+))?$"
)


def reserved_tokens(bucket_config: BucketConfig = BucketConfig()) -> list[str]:
    return list(SPECIAL_TOKENS) + bucket_tokens(bucket_config)


@dataclass
class Vocabulary:
    """Bijective token<->id mapping with reserved structural ids."""

    id_to_token: list[str]
    bucket_config: BucketConfig = field(default_factory=BucketConfig)
    merges: list[tuple[str, str]] = field(default_factory=list, repr=False)
    token_to_id: dict[str, int] = field(init=False, repr=False)
    _word_cache: dict[str, tuple[int, ...]] = field(
        init=False, repr=False, default_factory=dict
    )

    def __post_init__(self):
        expected = reserved_tokens(self.bucket_config)
        if self.id_to_token[: len(expected)] != expected:
            raise ValueError("reserved tokens are not at their fixed ids")
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate token in vocabulary")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @property
    def reserved_size(self) -> int:
        return len(SPECIAL_TOKENS) + self.bucket_config.max_index + 1

    def is_reserved(self, token: str) -> bool:
        tid = self.token_to_id.get(token)
        return tid is not None and tid < self.reserved_size

    def word_pieces(self, word: str) -> tuple[int, ...]:
        """Greedy longest-match segmentation; unknown atoms fall back to [UNK]."""
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        ids: list[int] = []
        pos = 0
        n = len(word)
        while pos < n:
            prefix = "##" if pos > 0 else ""
            end = n
            match_id = None
            while end > pos:
                piece = prefix + word[pos:end]
                pid = self.token_to_id.get(piece)
                # reserved atoms are not reachable via subword matching
                if pid is not None and pid >= self.reserved_size:
                    match_id = pid
                    break
                end -= 1
            if match_id is None:
                ids.append(UNK_ID)
                pos += 1
            else:
                ids.append(match_id)
                pos = end
        out = tuple(ids)
        self._word_cache[word] = out
        return out


@dataclass
class TokenSequence:
    ids: np.ndarray  # int32, length max_context
    attention_mask: np.ndarray  # uint8, 1 on real tokens, 0 on the pad suffix

    @property
    def length(self) -> int:
        return int(self.attention_mask.sum())


def _description_words(corpus_lines) -> Counter:
    """Word frequency over description text only (non-structural tokens)."""
    structural = set(SPECIAL_TOKENS)
    counts: Counter = Counter()
    bucket_re = re.compile(r"^AMT_\d+_(?:\d+|INF)$")
    for line in corpus_lines:
        for tok in line.split(" "):
            if not tok or tok in structural or bucket_re.match(tok):
                continue
            counts[tok] += 1
    return counts


def train_vocab(
    corpus_lines,
    target_size: int = 8192,
    min_frequency: int = 2,
    bucket_config: BucketConfig = BucketConfig(),
) -> Vocabulary:
    """Learn subword pieces by greedy pair merging over description words.

    Ties between equally frequent pairs break toward the lexicographically
    smaller pair, making training deterministic for a given corpus.
    """
    reserved = reserved_tokens(bucket_config)
    if target_size <= len(reserved):
        raise ValueError(
            f"target_size {target_size} must exceed reserved count {len(reserved)}"
        )
    word_freqs = _description_words(corpus_lines)
    if not word_freqs:
        raise ValueError("corpus has no description words")

    words = sorted(word_freqs)  # fixed iteration order
    freqs = [word_freqs[w] for w in words]
    pieces = [[w[0]] + ["##" + c for c in w[1:]] for w in words]

    alphabet = sorted({p for ps in pieces for p in ps})
    if len(reserved) + len(alphabet) > target_size:
        raise ValueError("target_size too small to hold the corpus alphabet")

    pair_counts: Counter = Counter()
    pair_words: dict[tuple[str, str], set[int]] = {}
    for wi, ps in enumerate(pieces):
        f = freqs[wi]
        for a, b in zip(ps, ps[1:]):
            pair_counts[(a, b)] += f
            pair_words.setdefault((a, b), set()).add(wi)

    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    vocab_tokens = reserved + alphabet
    seen = set(vocab_tokens)
    merges: list[tuple[str, str]] = []

    def merged_token(pair: tuple[str, str]) -> str:
        return pair[0] + pair[1].removeprefix("##")

    while len(vocab_tokens) < target_size and heap:
        neg, pair = heapq.heappop(heap)
        count = pair_counts.get(pair, 0)
        if -neg != count:
            continue  # stale heap entry
        if count < min_frequency:
            break
        new_tok = merged_token(pair)
        merges.append(pair)
        if new_tok not in seen:
            vocab_tokens.append(new_tok)
            seen.add(new_tok)

        touched: Counter = Counter()
        for wi in sorted(pair_words.get(pair, ())):
            ps = pieces[wi]
            f = freqs[wi]
            out = []
            i = 0
            changed = False
            while i < len(ps):
                if i + 1 < len(ps) and ps[i] == pair[0] and ps[i + 1] == pair[1]:
                    out.append(new_tok)
                    i += 2
                    changed = True
                else:
                    out.append(ps[i])
                    i += 1
            if not changed:
                continue
            for a, b in zip(ps, ps[1:]):
                touched[(a, b)] -= f
                pair_words.get((a, b), set()).discard(wi)
            for a, b in zip(out, out[1:]):
                touched[(a, b)] += f
                pair_words.setdefault((a, b), set()).add(wi)
            pieces[wi] = out
        for p, delta in touched.items():
            if delta == 0:
                continue
            pair_counts[p] = pair_counts.get(p, 0) + delta
            if pair_counts[p] <= 0:
                pair_counts.pop(p, None)
            else:
                heapq.heappush(heap, (-pair_counts[p], p))

    return Vocabulary(vocab_tokens, bucket_config, merges)


def encode(document_text: str, vocab: Vocabulary, max_context: int = 512) -> TokenSequence:
    """[CLS]-prefixed ids, truncated to the most recent complete sentences.

    Oldest sentences are dropped first; if even the newest sentence does not
    fit, its oldest tokens are dropped so the window always ends on the
    newest activity.
    """
    sentence_ids: list[list[int]] = []
    for chunk in document_text.split(" [SEP] "):
        ids: list[int] = []
        for tok in chunk.split(" "):
            if not tok:
                continue
            tid = vocab.token_to_id.get(tok)
            if tid is not None and tid < vocab.reserved_size:
                ids.append(tid)
            else:
                ids.extend(vocab.word_pieces(tok))
        sentence_ids.append(ids)

    capacity = max_context - 1
    kept: list[list[int]] = []
    cost = 0
    for sent in reversed(sentence_ids):
        extra = len(sent) + (1 if kept else 0)
        if cost + extra > capacity:
            break
        kept.append(sent)
        cost += extra
    kept.reverse()
    if not kept:
        flat = sentence_ids[-1][-capacity:] if sentence_ids else []
    else:
        flat = []
        for i, sent in enumerate(kept):
            if i:
                flat.append(SEP_ID)
            flat.extend(sent)

    ids = np.full(max_context, PAD_ID, dtype=np.int32)
    mask = np.zeros(max_context, dtype=np.uint8)
    ids[0] = CLS_ID
    ids[1 : 1 + len(flat)] = flat
    mask[: 1 + len(flat)] = 1
    return TokenSequence(ids, mask)


def decode(ids, vocab: Vocabulary) -> str:
    """Inverse of encode on in-vocabulary input, modulo [CLS] and padding."""
    parts: list[str] = []
    for i, tid in enumerate(np.asarray(ids).tolist()):
        if tid < 0 or tid >= vocab.size:
            raise ValueError(f"unknown token id {tid}")
        if tid == PAD_ID or (i == 0 and tid == CLS_ID):
            continue
        tok = vocab.id_to_token[tid]
        if tok.startswith("##") and parts:
            parts[-1] += tok[2:]
        else:
            parts.append(tok)
    return " ".join(parts)


def save_vocab(path: str, vocab: Vocabulary, cfg_hash: str | None = None, seed: int | None = None) -> None:
    provenance = ""
    if cfg_hash is not None:
        provenance = f" config_hash={cfg_hash} seed={seed if seed is not None else 0}"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"# txnlm-vocab v{VOCAB_FORMAT_VERSION}"
            f" max_index={vocab.bucket_config.max_index}"
            f" width_cents={vocab.bucket_config.width_cents}"
            f"{provenance}\n"
        )
        for tok in vocab.id_to_token:
            fh.write(tok + "\n")


def load_vocab(path: str) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        m = _HEADER_RE.match(header)
        if not m:
            raise ValueError(f"{path}: bad vocabulary header {header!r}")
        if int(m.group(1)) != VOCAB_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported vocab format v{m.group(1)}")
        bucket_config = BucketConfig(width_cents=int(m.group(3)), max_index=int(m.group(2)))
        tokens = [line.rstrip("\n") for line in fh]
    return Vocabulary(tokens, bucket_config)
