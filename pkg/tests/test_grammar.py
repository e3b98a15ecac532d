"""Transaction sentence grammar: rendering, parsing, normalization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from txnlm.grammar import (
    CREDIT, DEBIT, DEFAULT_MAX_INDEX, DEFAULT_WIDTH_CENTS, EMPTY_DESC,
    RESERVED_MARKERS, AmountBucket, BucketConfig, MalformedSentence,
    bucket_amount, bucket_tokens, normalize_description, parse_document,
    parse_sentence, serialize_document, serialize_transaction,
)
from txnlm.synthgen import Transaction


# ---------------------------------------------------------------------------
# amount bucketing

def test_bucket_amount_basic_arithmetic():
    # width $50: floor(amount / width), clamped at max_index
    assert bucket_amount(1).index == 0
    assert bucket_amount(4999).index == 0
    assert bucket_amount(5000).index == 1
    assert bucket_amount(5001).index == 1
    assert bucket_amount(999999).index == 199
    assert bucket_amount(1000000).index == 200
    assert bucket_amount(10**9).index == 200


def test_bucket_token_rendering():
    assert AmountBucket(0).token == "AMT_0_50"
    assert AmountBucket(1).token == "AMT_50_100"
    assert AmountBucket(199).token == "AMT_9950_10000"
    assert AmountBucket(200).token == "AMT_10000_INF"


def test_bucket_tokens_cover_all_indices():
    toks = bucket_tokens()
    assert len(toks) == DEFAULT_MAX_INDEX + 1
    assert toks[0] == "AMT_0_50"
    assert toks[-1] == "AMT_10000_INF"
    assert len(set(toks)) == len(toks)


def test_bucket_amount_rejects_nonpositive():
    with pytest.raises(ValueError):
        bucket_amount(0)
    with pytest.raises(ValueError):
        bucket_amount(-100)


def test_custom_bucket_config():
    cfg = BucketConfig(width_cents=100, max_index=5)
    assert bucket_amount(250, cfg.width_cents, cfg.max_index).index == 2
    assert bucket_amount(10_000, cfg.width_cents, cfg.max_index).index == 5
    assert AmountBucket(5, 100, 5).token == "AMT_5_INF"


# ---------------------------------------------------------------------------
# description normalization

def test_normalize_scrubs_reserved_markers():
    assert normalize_description("pay [SEP] ment") == "pay ment"
    assert normalize_description("[CLS][MASK]x") == "x"
    # case-insensitive scrub
    assert normalize_description("a [sep] b [Type] c") == "a b c"


def test_normalize_marker_scrub_leaves_no_marker():
    # markers are replaced with spaces, so nested text cannot reassemble one
    assert normalize_description("[SE[SEP]P] coffee") == "[se p] coffee"
    for marker in RESERVED_MARKERS:
        assert marker.lower() not in normalize_description("[SE[SEP]P] coffee")
    assert normalize_description("[[SEP]SEP]") == "[ sep]"


def test_normalize_lowercase_and_whitespace():
    assert normalize_description("  STARBUCKS   #1234\tستارbucks ") == \
        "starbucks #1234 ستارbucks"
    assert normalize_description("A  B") == "a b"


def test_serialize_empty_description_uses_placeholder():
    txn = Transaction(0, DEBIT, 100, "[SEP]")
    s = serialize_transaction(txn)
    assert s.description_text == ""
    assert s.render() == "[TYPE] DEBIT [AMT] AMT_0_50 [NAME] EMPTY_DESC"


# ---------------------------------------------------------------------------
# sentence and document render/parse

def test_sentence_render_example():
    txn = Transaction(10, CREDIT, 432155, "Payroll ACME Corp")
    s = serialize_transaction(txn)
    assert s.render() == "[TYPE] CREDIT [AMT] AMT_4300_4350 [NAME] payroll acme corp"


def test_parse_sentence_roundtrip_simple():
    text = "[TYPE] DEBIT [AMT] AMT_0_50 [NAME] coffee shop"
    s = parse_sentence(text)
    assert s.direction_token == DEBIT
    assert s.amount_bucket.index == 0
    assert s.description_text == "coffee shop"
    assert s.render() == text


def test_parse_rejects_malformed():
    for bad in [
        "",
        "[TYPE] SIDEWAYS [AMT] AMT_0_50 [NAME] x",
        "[TYPE] DEBIT [AMT] AMT_1_49 [NAME] x",  # not a valid bucket token
        "[TYPE] DEBIT [AMT] AMT_0_50 [NAME] ",  # missing description
        "[AMT] AMT_0_50 [TYPE] DEBIT [NAME] x",  # wrong order
    ]:
        with pytest.raises(MalformedSentence):
            parse_sentence(bad)


def test_parse_document_reports_sentence_position():
    good = "[TYPE] DEBIT [AMT] AMT_0_50 [NAME] ok"
    bad = "[TYPE] DEBIT [AMT] nope [NAME] x"
    with pytest.raises(MalformedSentence) as err:
        parse_document(f"{good} [SEP] {bad} [SEP] {good}")
    assert "1" in str(err.value)  # zero-based position of the bad sentence


def test_document_orders_by_timestamp():
    txns = [
        Transaction(30, DEBIT, 100, "late"),
        Transaction(10, CREDIT, 100, "early"),
        Transaction(20, DEBIT, 100, "middle"),
    ]
    doc = serialize_document("acct", txns)
    descs = [s.description_text for s in doc.sentences]
    assert descs == ["early", "middle", "late"]


def test_empty_document_rejected():
    with pytest.raises(ValueError):
        serialize_document("acct", [])
    with pytest.raises(MalformedSentence):
        parse_document("")


# ---------------------------------------------------------------------------
# property-based round trip

# raw descriptions must be non-empty (the generator never emits empty text);
# empty-after-normalization is covered by the EMPTY_DESC placeholder tests
_descs = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=40)
_txns = st.builds(
    Transaction,
    st.integers(min_value=0, max_value=10**9),
    st.sampled_from([DEBIT, CREDIT]),
    st.integers(min_value=1, max_value=10**8),
    _descs,
)


@settings(max_examples=300, deadline=None)
@given(_txns)
def test_fuzz_single_transaction_roundtrip(txn):
    s = serialize_transaction(txn)
    parsed = parse_sentence(s.render())
    assert parsed == s


@settings(max_examples=100, deadline=None)
@given(st.lists(_txns, min_size=1, max_size=8))
def test_fuzz_document_roundtrip(txns):
    # distinct timestamps keep document order deterministic for comparison
    txns = [Transaction(i, t.direction, t.amount_cents, t.description)
            for i, t in enumerate(txns)]
    doc = serialize_document("acct", txns)
    assert parse_document(doc.render(), account_id="acct") == doc


@settings(max_examples=200, deadline=None)
@given(_descs)
def test_fuzz_normalized_descriptions_never_contain_markers(desc):
    out = normalize_description(desc)
    for marker in RESERVED_MARKERS:
        assert marker.lower() not in out
    assert out == out.strip()
    assert "  " not in out
