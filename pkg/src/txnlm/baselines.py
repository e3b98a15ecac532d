"""Non-transformer comparators: FeatEng aggregates and a CoLES encoder.

FeatEng builds fixed-schema aggregation statistics over signed amounts
(credit positive, debit negative), overall and per direction group, with
presence indicators for empty groups. Description text is deliberately
excluded: feature engineering cannot see unstructured content.

CoLES trains a single-layer GRU over per-transaction features with a
softmax-contrastive loss: random contiguous subsequences of the same
account are attracted, subsequences of other in-batch accounts repelled.
All gradients are exact and hand-derived (numpy only).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .grammar import CREDIT, DEBIT, normalize_description
from .pretrain import AdamState, adam_step
from .util import derived_rng, load_container, save_container, stable_hash

# ---------------------------------------------------------------------------
# FeatEng

_STAT_NAMES = ("sum", "count", "mean", "min", "max", "std")
_GROUPS = ("overall", "debit", "credit")


def feat_eng_schema() -> dict[str, int]:
    """Stable feature-name → column-index manifest."""
    names = []
    for group in _GROUPS:
        names.extend(f"{group}_{s}" for s in _STAT_NAMES)
        if group != "overall":
            names.append(f"{group}_present")
    return {name: i for i, name in enumerate(names)}


FEAT_ENG_DIM = len(feat_eng_schema())


def _stats6(values: np.ndarray) -> list[float]:
    if values.size == 0:
        return [0.0] * 6
    # population std; a single element gives exactly 0
    return [float(values.sum()), float(values.size), float(values.mean()),
            float(values.min()), float(values.max()), float(values.std())]


def feat_eng(transactions: Sequence) -> np.ndarray:
    """Aggregate signed dollar amounts into the fixed feature schema."""
    if not transactions:
        raise ValueError("feat_eng requires at least one transaction")
    signed = np.array([
        (t.amount_cents / 100.0) * (1.0 if t.direction == CREDIT else -1.0)
        for t in transactions
    ])
    is_credit = np.array([t.direction == CREDIT for t in transactions])
    features: list[float] = []
    for group in _GROUPS:
        if group == "overall":
            vals = signed
        elif group == "debit":
            vals = signed[~is_credit]
        else:
            vals = signed[is_credit]
        features.extend(_stats6(vals))
        if group != "overall":
            features.append(1.0 if vals.size else 0.0)
    return np.asarray(features, dtype=np.float64)


def feat_eng_table(histories: dict[str, Sequence]) -> tuple[list[str], np.ndarray]:
    """Feature matrix over all accounts, rows ordered by account id."""
    account_ids = sorted(histories)
    mat = np.zeros((len(account_ids), FEAT_ENG_DIM))
    for i, acct in enumerate(account_ids):
        mat[i] = feat_eng(histories[acct])
    return account_ids, mat


# ---------------------------------------------------------------------------
# CoLES: per-transaction features

N_TRIGRAM_BUCKETS = 64
TXN_FEATURE_DIM = 1 + 2 + N_TRIGRAM_BUCKETS

_trigram_buckets: dict[str, int] = {}


def _trigram_bucket(tri: str) -> int:
    b = _trigram_buckets.get(tri)
    if b is None:
        b = stable_hash("coles-trigram", tri) % N_TRIGRAM_BUCKETS
        _trigram_buckets[tri] = b
    return b


def txn_feature_matrix(transactions: Sequence) -> np.ndarray:
    """(T, 67) inputs: signed log-amount, direction one-hot, trigram bag."""
    if not transactions:
        raise ValueError("feature matrix requires at least one transaction")
    x = np.zeros((len(transactions), TXN_FEATURE_DIM), dtype=np.float32)
    for i, t in enumerate(transactions):
        sign = 1.0 if t.direction == CREDIT else -1.0
        x[i, 0] = sign * math.log1p(t.amount_cents / 100.0)
        x[i, 1] = 1.0 if t.direction == DEBIT else 0.0
        x[i, 2] = 1.0 if t.direction == CREDIT else 0.0
        text = f"#{normalize_description(t.description)}#"
        n_tri = max(1, len(text) - 2)
        w = 1.0 / n_tri
        for j in range(len(text) - 2):
            x[i, 3 + _trigram_bucket(text[j:j + 3])] += w
    return x


# ---------------------------------------------------------------------------
# CoLES: config, sampling, GRU encoder

@dataclass(frozen=True)
class ColesConfig:
    hidden_dim: int = 64
    n_subsequences: int = 5
    min_len: int = 10
    max_len: int = 100
    temperature: float = 0.1
    batch_accounts: int = 8
    lr: float = 1e-3

    def __post_init__(self):
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if self.hidden_dim <= 0 or self.n_subsequences < 2 or self.batch_accounts < 2:
            raise ValueError("hidden_dim > 0, n_subsequences >= 2, batch_accounts >= 2")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def coles_sample_pairs(n_txns_list: Sequence[int], config: ColesConfig,
                       rng: np.random.Generator):
    """Sample contiguous view windows for a batch of accounts.

    Returns (views, skipped) where views is a list of (account_slot, start,
    end) and skipped counts accounts shorter than min_len, which contribute
    nothing. Window length is uniform on [min_len, min(max_len, n)].
    """
    if len(n_txns_list) < 2:
        raise ValueError("batch must contain at least 2 accounts")
    views: list[tuple[int, int, int]] = []
    skipped = 0
    for slot, n in enumerate(n_txns_list):
        if n < config.min_len:
            skipped += 1
            continue
        hi = min(config.max_len, n)
        for _ in range(config.n_subsequences):
            length = int(rng.integers(config.min_len, hi + 1))
            start = int(rng.integers(0, n - length + 1))
            views.append((slot, start, start + length))
    return views, skipped


def pair_index_sets(view_accounts: Sequence[int]):
    """Anchor → (positive indices, negative indices) over a view batch."""
    acc = np.asarray(view_accounts)
    out = []
    for i in range(acc.size):
        same = np.flatnonzero(acc == acc[i])
        out.append((i, same[same != i], np.flatnonzero(acc != acc[i])))
    return out


def init_coles_params(config: ColesConfig, seed: int,
                      dtype=np.float32) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    F, D = TXN_FEATURE_DIM, config.hidden_dim
    params = {}
    for gate in ("z", "r", "h"):
        params["w" + gate] = (rng.standard_normal((F, D)) / math.sqrt(F)).astype(dtype)
        params["u" + gate] = (rng.standard_normal((D, D)) / math.sqrt(D)).astype(dtype)
        params["b" + gate] = np.zeros(D, dtype=dtype)
    return params


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_forward(params, x: np.ndarray, lengths: np.ndarray, need_cache=False):
    """Run the GRU over padded (B, T, F) inputs; return final hidden states.

    Steps at or beyond each row's length leave its hidden state unchanged,
    so the result equals running each sequence unpadded.
    """
    B, T, _ = x.shape
    D = params["bz"].shape[0]
    dtype = params["wz"].dtype
    h = np.zeros((B, D), dtype=dtype)
    steps = []
    for t in range(T):
        xt = x[:, t, :]
        z = _sigmoid(xt @ params["wz"] + h @ params["uz"] + params["bz"])
        r = _sigmoid(xt @ params["wr"] + h @ params["ur"] + params["br"])
        hhat = np.tanh(xt @ params["wh"] + (r * h) @ params["uh"] + params["bh"])
        cand = (1.0 - z) * h + z * hhat
        m = (t < lengths).astype(dtype)[:, None]
        h_new = m * cand + (1.0 - m) * h
        if need_cache:
            steps.append((xt, h, z, r, hhat, m))
        h = h_new
    return (h, steps) if need_cache else h


def gru_backward(params, steps, dh_final):
    """Exact backpropagation through time; returns parameter gradients."""
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dh = dh_final.astype(params["wz"].dtype)
    for xt, h_prev, z, r, hhat, m in reversed(steps):
        dcand = dh * m
        dh_prev = dh * (1.0 - m)
        dz = dcand * (hhat - h_prev)
        dhhat = dcand * z
        dh_prev += dcand * (1.0 - z)

        da_h = dhhat * (1.0 - hhat * hhat)
        grads["wh"] += xt.T @ da_h
        grads["uh"] += (r * h_prev).T @ da_h
        grads["bh"] += da_h.sum(axis=0)
        drh = da_h @ params["uh"].T
        dr = drh * h_prev
        dh_prev += drh * r

        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        grads["wz"] += xt.T @ da_z
        grads["uz"] += h_prev.T @ da_z
        grads["bz"] += da_z.sum(axis=0)
        grads["wr"] += xt.T @ da_r
        grads["ur"] += h_prev.T @ da_r
        grads["br"] += da_r.sum(axis=0)

        dh = dh_prev + da_z @ params["uz"].T + da_r @ params["ur"].T
    return grads


# ---------------------------------------------------------------------------
# CoLES: contrastive loss and training

def contrastive_loss(embeddings: np.ndarray, view_accounts: Sequence[int],
                     temperature: float):
    """Softmax-contrastive loss over cosine similarities.

    Each (anchor, positive) pair forms one softmax against the anchor's
    in-batch negatives (views of other accounts). Returns (loss, d loss /
    d embeddings).
    """
    acc = np.asarray(view_accounts)
    V = embeddings.shape[0]
    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    norms = np.maximum(norms, 1e-12)
    unit = embeddings / norms
    sims = (unit @ unit.T) / temperature

    dS = np.zeros_like(sims)
    total, n_pairs = 0.0, 0
    for i in range(V):
        pos = np.flatnonzero((acc == acc[i]) & (np.arange(V) != i))
        neg = np.flatnonzero(acc != acc[i])
        if pos.size == 0 or neg.size == 0:
            continue
        for j in pos:
            logits = np.concatenate(([sims[i, j]], sims[i, neg]))
            mx = logits.max()
            e = np.exp(logits - mx)
            p = e / e.sum()
            total += -math.log(max(p[0], 1e-300))
            n_pairs += 1
            dS[i, j] += p[0] - 1.0
            dS[i, neg] += p[1:]
    if n_pairs == 0:
        raise ValueError("batch produced no positive pairs")
    dS /= n_pairs
    loss = total / n_pairs

    dunit = ((dS + dS.T) @ unit) / temperature
    # back through row normalization e / ||e||
    demb = (dunit - unit * (dunit * unit).sum(axis=1, keepdims=True)) / norms
    return loss, demb.astype(embeddings.dtype)


def retrieval_accuracy(embeddings: np.ndarray, view_accounts: Sequence[int]):
    """(hit rate, chance rate): is the nearest candidate a positive?"""
    acc = np.asarray(view_accounts)
    V = embeddings.shape[0]
    unit = embeddings / np.maximum(np.linalg.norm(embeddings, axis=1, keepdims=True), 1e-12)
    sims = unit @ unit.T
    hits, chance, n = 0.0, 0.0, 0
    for i in range(V):
        cand = np.flatnonzero(np.arange(V) != i)
        pos = set(np.flatnonzero((acc == acc[i]) & (np.arange(V) != i)).tolist())
        if not pos or len(pos) == cand.size:
            continue
        best = cand[np.argmax(sims[i, cand])]
        hits += 1.0 if int(best) in pos else 0.0
        chance += len(pos) / cand.size
        n += 1
    if n == 0:
        raise ValueError("no anchors with both positives and negatives")
    return hits / n, chance / n


def _view_batch(feats: list[np.ndarray], views) -> tuple[np.ndarray, np.ndarray, list[int]]:
    lengths = np.array([end - start for _, start, end in views])
    T = int(lengths.max())
    x = np.zeros((len(views), T, TXN_FEATURE_DIM), dtype=np.float32)
    accounts = []
    for k, (slot, start, end) in enumerate(views):
        x[k, :end - start] = feats[slot][start:end]
        accounts.append(slot)
    return x, lengths, accounts


def coles_train(histories: dict[str, Sequence], config: ColesConfig, steps: int,
                seed: int, quiet: bool = False):
    """Train the GRU contrastively; returns (params, loss_history)."""
    eligible = sorted(a for a, txns in histories.items() if len(txns) >= config.min_len)
    if len(eligible) < config.batch_accounts:
        raise ValueError("not enough accounts of length >= min_len for a batch")
    feats = {a: txn_feature_matrix(histories[a]) for a in eligible}

    params = init_coles_params(config, seed)
    adam = AdamState.zeros(params)
    loss_history: list[tuple[int, float]] = []
    per_epoch = max(1, len(eligible) // config.batch_accounts)
    for step in range(steps):
        epoch, slot = divmod(step, per_epoch)
        order = derived_rng(seed, "coles-order", epoch).permutation(len(eligible))
        picked = order[slot * config.batch_accounts:(slot + 1) * config.batch_accounts]
        batch_ids = [eligible[i] for i in picked]
        rng = derived_rng(seed, "coles-step", step)
        views, _ = coles_sample_pairs([len(histories[a]) for a in batch_ids],
                                      config, rng)
        x, lengths, accounts = _view_batch([feats[a] for a in batch_ids], views)
        h, cache = gru_forward(params, x, lengths, need_cache=True)
        loss, dh = contrastive_loss(h, accounts, config.temperature)
        grads = gru_backward(params, cache, dh)
        adam_step(params, grads, adam, config.lr)
        loss_history.append((step, loss))
        if not quiet and step % 50 == 0:
            print(f"[coles] step {step:>5d} loss {loss:.4f}")
    return params, loss_history


def coles_embed(transactions: Sequence, params: dict[str, np.ndarray]) -> np.ndarray:
    """Final hidden state over the FULL sequence (no context cap)."""
    x = txn_feature_matrix(transactions)[None, :, :]
    lengths = np.array([x.shape[1]])
    return gru_forward(params, x, lengths)[0]


def coles_embed_table(histories: dict[str, Sequence],
                      params: dict[str, np.ndarray]) -> tuple[list[str], np.ndarray]:
    account_ids = sorted(histories)
    D = params["bz"].shape[0]
    mat = np.zeros((len(account_ids), D), dtype=np.float32)
    for i, acct in enumerate(account_ids):
        mat[i] = coles_embed(histories[acct], params)
    return account_ids, mat.astype(np.float64)


def save_coles_checkpoint(path: str, config: ColesConfig, params, seed: int,
                          steps: int) -> None:
    header = {"kind": "txnlm-coles", "version": 1, "coles_config": config.to_dict(),
              "seed": seed, "steps": steps}
    save_container(path, header, dict(params))


def load_coles_checkpoint(path: str):
    header, arrays = load_container(path)
    if header.get("kind") != "txnlm-coles":
        raise ValueError(f"{path}: not a CoLES checkpoint")
    config = ColesConfig(**header["coles_config"])
    return config, arrays, header
