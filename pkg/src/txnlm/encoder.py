"""Bidirectional transformer encoder with exact analytic gradients.

Pure numpy: token + learned position embeddings, pre-norm multi-head
self-attention and GELU feed-forward blocks, a final layer norm, and an MLM
head whose output projection is tied to the token embedding table. The
backward pass mirrors the forward pass exactly; correctness is pinned by
finite-difference checks in float64.

Padding is handled so that outputs at every position are exactly invariant
to the ids stored at padded positions: padded embeddings are zeroed and
padded keys receive -inf attention scores, which makes their softmax weights
(and therefore all their gradients) exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import erf

from .util import load_container, save_container

Params = dict[str, np.ndarray]

INIT_STD = 0.02
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    max_context: int = 512
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 4
    d_ff: int = 512
    dropout_rate: float = 0.1
    layernorm_epsilon: float = 1e-5

    def __post_init__(self):
        dims = (self.vocab_size, self.max_context, self.d_model,
                self.n_heads, self.n_layers, self.d_ff)
        if any(d <= 0 for d in dims):
            raise ValueError("all model dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_spec(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Checkpoint ordering: every learnable array with its shape."""
    d, f, v, c = config.d_model, config.d_ff, config.vocab_size, config.max_context
    spec: list[tuple[str, tuple[int, ...]]] = [
        ("tok_emb", (v, d)),
        ("pos_emb", (c, d)),
    ]
    for i in range(config.n_layers):
        p = f"layer{i}."
        spec += [
            (p + "ln1.g", (d,)), (p + "ln1.b", (d,)),
            (p + "attn.wq", (d, d)), (p + "attn.bq", (d,)),
            (p + "attn.wk", (d, d)), (p + "attn.bk", (d,)),
            (p + "attn.wv", (d, d)), (p + "attn.bv", (d,)),
            (p + "attn.wo", (d, d)), (p + "attn.bo", (d,)),
            (p + "ln2.g", (d,)), (p + "ln2.b", (d,)),
            (p + "ffn.w1", (d, f)), (p + "ffn.b1", (f,)),
            (p + "ffn.w2", (f, d)), (p + "ffn.b2", (d,)),
        ]
    spec += [
        ("final_ln.g", (d,)), ("final_ln.b", (d,)),
        ("mlm_bias", (v,)),
    ]
    return spec


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> Params:
    """Scaled-normal weights (std 0.02), zero biases, unit layernorm gains.

    The MLM output projection is the token embedding table itself (weight
    tying), so no separate head matrix exists.
    """
    rng = np.random.default_rng(seed)
    params: Params = {}
    for name, shape in param_spec(config):
        if name.rsplit(".", 1)[-1] == "g":
            arr = np.ones(shape, dtype=dtype)
        elif len(shape) == 1:
            arr = np.zeros(shape, dtype=dtype)
        else:
            arr = (rng.standard_normal(shape) * INIT_STD).astype(dtype)
        params[name] = arr
    return params


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


@dataclass
class ForwardOutput:
    hidden_states: np.ndarray  # (B, L, d_model)
    cls_vector: np.ndarray  # (B, d_model); equals hidden_states[:, 0]
    mlm_logits: Optional[np.ndarray]  # (M, vocab) at the requested positions


@dataclass
class MlmLossSpec:
    """Masked positions (batch row, sequence column) and their original ids."""

    rows: np.ndarray
    cols: np.ndarray
    target_ids: np.ndarray


@dataclass
class DistillLossSpec:
    """Distillation targets: teacher logits plus hard labels at masked positions."""

    rows: np.ndarray
    cols: np.ndarray
    target_ids: np.ndarray
    teacher_logits: np.ndarray  # (M, vocab)
    temperature: float = 2.0
    w_soft: float = 0.7
    w_hard: float = 0.3


def _as_batch(ids, mask):
    ids = np.asarray(ids)
    mask = np.asarray(mask)
    if ids.ndim == 1:
        ids = ids[None, :]
        mask = mask[None, :]
    return ids.astype(np.int64), mask


def _layernorm_fwd(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    istd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * istd
    return xhat * g + b, (xhat, istd)


def _layernorm_bwd(dy, g, cache):
    xhat, istd = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = istd * (dxhat - m1 - xhat * m2)
    return dx, dg, db


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _gelu_fwd(x):
    phi = 0.5 * (1.0 + erf(x * _SQRT1_2))
    return x * phi, phi


def _gelu_bwd(dy, x, phi):
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dy * (phi + x * pdf)


def _dropout_mask(rng, shape, rate, dtype):
    keep = (rng.random(shape) >= rate).astype(dtype)
    return keep / (1.0 - rate)


def _forward_internal(params: Params, ids, mask, config: ModelConfig,
                      train_mode: bool, rng, positions, need_cache: bool):
    ids, mask = _as_batch(ids, mask)
    B, L = ids.shape
    if L > config.max_context:
        raise ValueError(f"sequence length {L} exceeds max_context {config.max_context}")
    dtype = params["tok_emb"].dtype
    fmask = mask.astype(dtype)[..., None]  # (B, L, 1)
    use_dropout = train_mode and config.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ValueError("train_mode with dropout requires an rng")

    h = (params["tok_emb"][ids] + params["pos_emb"][:L]) * fmask
    demb = None
    if use_dropout:
        demb = _dropout_mask(rng, h.shape, config.dropout_rate, dtype)
        h = h * demb

    # additive key mask: padded keys get -inf scores, hence exactly 0 weight
    key_bias = np.where(mask[:, None, None, :].astype(bool),
                        0.0, -np.inf).astype(dtype)

    H, Dh = config.n_heads, config.d_head
    scale = 1.0 / math.sqrt(Dh)
    caches = []
    for i in range(config.n_layers):
        p = f"layer{i}."
        n1, ln1_cache = _layernorm_fwd(h, params[p + "ln1.g"], params[p + "ln1.b"],
                                       config.layernorm_epsilon)
        q = n1 @ params[p + "attn.wq"] + params[p + "attn.bq"]
        k = n1 @ params[p + "attn.wk"] + params[p + "attn.bk"]
        v = n1 @ params[p + "attn.wv"] + params[p + "attn.bv"]
        qh = q.reshape(B, L, H, Dh).transpose(0, 2, 1, 3)
        kh = k.reshape(B, L, H, Dh).transpose(0, 2, 1, 3)
        vh = v.reshape(B, L, H, Dh).transpose(0, 2, 1, 3)
        scores = np.matmul(qh, kh.transpose(0, 1, 3, 2)) * scale + key_bias
        smax = scores.max(axis=-1, keepdims=True)
        expd = np.exp(scores - smax)
        attn = expd / expd.sum(axis=-1, keepdims=True)
        ctxh = np.matmul(attn, vh)
        ctx = ctxh.transpose(0, 2, 1, 3).reshape(B, L, config.d_model)
        o = ctx @ params[p + "attn.wo"] + params[p + "attn.bo"]
        dattn_mask = None
        if use_dropout:
            dattn_mask = _dropout_mask(rng, o.shape, config.dropout_rate, dtype)
            o = o * dattn_mask
        h_mid = h + o

        n2, ln2_cache = _layernorm_fwd(h_mid, params[p + "ln2.g"], params[p + "ln2.b"],
                                       config.layernorm_epsilon)
        a1 = n2 @ params[p + "ffn.w1"] + params[p + "ffn.b1"]
        gact, phi = _gelu_fwd(a1)
        fout = gact @ params[p + "ffn.w2"] + params[p + "ffn.b2"]
        dffn_mask = None
        if use_dropout:
            dffn_mask = _dropout_mask(rng, fout.shape, config.dropout_rate, dtype)
            fout = fout * dffn_mask
        h_next = h_mid + fout

        if need_cache:
            caches.append({
                "n1": n1, "ln1": ln1_cache, "qh": qh, "kh": kh, "vh": vh,
                "attn": attn, "ctx": ctx, "dattn_mask": dattn_mask,
                "n2": n2, "ln2": ln2_cache, "a1": a1, "phi": phi, "gact": gact,
                "dffn_mask": dffn_mask,
            })
        h = h_next

    hf, lnf_cache = _layernorm_fwd(h, params["final_ln.g"], params["final_ln.b"],
                                   config.layernorm_epsilon)

    mlm_logits = None
    hpos = None
    if positions is not None:
        rows, cols = positions
        hpos = hf[rows, cols]
        mlm_logits = hpos @ params["tok_emb"].T + params["mlm_bias"]

    out = ForwardOutput(hidden_states=hf, cls_vector=hf[:, 0], mlm_logits=mlm_logits)
    cache = None
    if need_cache:
        cache = {
            "ids": ids, "fmask": fmask, "demb": demb, "layers": caches,
            "lnf": lnf_cache, "hf": hf, "hpos": hpos, "positions": positions,
            "scale": scale, "B": B, "L": L,
        }
    return out, cache


def forward(params: Params, ids, mask, config: ModelConfig,
            train_mode: bool = False, rng=None, positions=None) -> ForwardOutput:
    """Encode a batch; mlm_logits are computed only at `positions` if given."""
    out, _ = _forward_internal(params, ids, mask, config, train_mode, rng,
                               positions, need_cache=False)
    return out


def cls_embedding(params: Params, ids, mask, config: ModelConfig) -> np.ndarray:
    """Position-0 contextual vector, the account representation."""
    return forward(params, ids, mask, config, train_mode=False).cls_vector


def softmax_rows(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(x):
    m = x.max(axis=-1, keepdims=True)
    s = x - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def mlm_loss_and_dlogits(logits, target_ids):
    """Mean cross-entropy over masked positions and its logits gradient."""
    target_ids = np.asarray(target_ids)
    if target_ids.size == 0:
        raise ValueError("mlm loss requires at least one target position")
    ls = log_softmax_rows(logits)
    n = logits.shape[0]
    loss = float(-ls[np.arange(n), target_ids].mean())
    dlogits = np.exp(ls)
    dlogits[np.arange(n), target_ids] -= 1.0
    dlogits /= n
    return loss, dlogits.astype(logits.dtype)


def distill_loss(student_logits, teacher_logits, hard_targets,
                 temperature: float = 2.0, w_soft: float = 0.7,
                 w_hard: float = 0.3):
    """Soft-target KL (temperature-scaled) plus hard cross-entropy.

    loss = w_soft * T^2 * KL(softmax(teacher/T) || softmax(student/T))
         + w_hard * CE(student, hard_targets),
    averaged over positions. Returns (loss, d loss / d student_logits).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if student_logits.shape != teacher_logits.shape:
        raise ValueError("student and teacher logits must have equal shapes")
    n = student_logits.shape[0]
    T = float(temperature)
    ls_student_T = log_softmax_rows(student_logits / T)
    lp_teacher_T = log_softmax_rows(teacher_logits / T)
    pt = np.exp(lp_teacher_T)
    kl = float((pt * (lp_teacher_T - ls_student_T)).sum(axis=-1).mean())
    loss = w_soft * T * T * kl
    dlogits = (w_soft * T / n) * (np.exp(ls_student_T) - pt)
    if w_hard != 0.0:
        ce, dce = mlm_loss_and_dlogits(student_logits, hard_targets)
        loss += w_hard * ce
        dlogits = dlogits + w_hard * dce
    return float(loss), dlogits.astype(student_logits.dtype)


def _loss_from_spec(logits, loss_spec):
    if isinstance(loss_spec, MlmLossSpec):
        return mlm_loss_and_dlogits(logits, loss_spec.target_ids)
    if isinstance(loss_spec, DistillLossSpec):
        return distill_loss(logits, loss_spec.teacher_logits, loss_spec.target_ids,
                            loss_spec.temperature, loss_spec.w_soft, loss_spec.w_hard)
    raise TypeError(f"unsupported loss spec {type(loss_spec)!r}")


def backward(params: Params, ids, mask, loss_spec, config: ModelConfig,
             train_mode: bool = False, rng=None):
    """Scalar loss and exact gradients for every parameter array."""
    positions = (np.asarray(loss_spec.rows), np.asarray(loss_spec.cols))
    out, cache = _forward_internal(params, ids, mask, config, train_mode, rng,
                                   positions, need_cache=True)
    loss, dlogits = _loss_from_spec(out.mlm_logits, loss_spec)

    grads = zeros_like_params(params)
    B, L = cache["B"], cache["L"]
    H, Dh = config.n_heads, config.d_head
    rows, cols = cache["positions"]

    # MLM head (projection tied to tok_emb)
    grads["mlm_bias"] += dlogits.sum(axis=0)
    grads["tok_emb"] += dlogits.T @ cache["hpos"]
    dhf = np.zeros_like(cache["hf"])
    np.add.at(dhf, (rows, cols), dlogits @ params["tok_emb"])

    dh, dg, db = _layernorm_bwd(dhf, params["final_ln.g"], cache["lnf"])
    grads["final_ln.g"] += dg
    grads["final_ln.b"] += db

    for i in reversed(range(config.n_layers)):
        p = f"layer{i}."
        c = cache["layers"][i]

        # FFN block
        dfout = dh if c["dffn_mask"] is None else dh * c["dffn_mask"]
        gact_flat = c["gact"].reshape(-1, config.d_ff)
        grads[p + "ffn.w2"] += gact_flat.T @ dfout.reshape(-1, config.d_model)
        grads[p + "ffn.b2"] += dfout.sum(axis=(0, 1))
        dgact = dfout @ params[p + "ffn.w2"].T
        da1 = _gelu_bwd(dgact, c["a1"], c["phi"])
        n2_flat = c["n2"].reshape(-1, config.d_model)
        grads[p + "ffn.w1"] += n2_flat.T @ da1.reshape(-1, config.d_ff)
        grads[p + "ffn.b1"] += da1.sum(axis=(0, 1))
        dn2 = da1 @ params[p + "ffn.w1"].T
        dh_mid, dg2, db2 = _layernorm_bwd(dn2, params[p + "ln2.g"], c["ln2"])
        grads[p + "ln2.g"] += dg2
        grads[p + "ln2.b"] += db2
        dh_mid = dh_mid + dh  # residual

        # attention block
        do = dh_mid if c["dattn_mask"] is None else dh_mid * c["dattn_mask"]
        ctx_flat = c["ctx"].reshape(-1, config.d_model)
        grads[p + "attn.wo"] += ctx_flat.T @ do.reshape(-1, config.d_model)
        grads[p + "attn.bo"] += do.sum(axis=(0, 1))
        dctx = do @ params[p + "attn.wo"].T
        dctxh = dctx.reshape(B, L, H, Dh).transpose(0, 2, 1, 3)
        dattn = np.matmul(dctxh, c["vh"].transpose(0, 1, 3, 2))
        dvh = np.matmul(c["attn"].transpose(0, 1, 3, 2), dctxh)
        inner = (dattn * c["attn"]).sum(axis=-1, keepdims=True)
        dscores = c["attn"] * (dattn - inner) * cache["scale"]
        dqh = np.matmul(dscores, c["kh"])
        dkh = np.matmul(dscores.transpose(0, 1, 3, 2), c["qh"])

        dq = dqh.transpose(0, 2, 1, 3).reshape(B, L, config.d_model)
        dk = dkh.transpose(0, 2, 1, 3).reshape(B, L, config.d_model)
        dv = dvh.transpose(0, 2, 1, 3).reshape(B, L, config.d_model)
        n1_flat = c["n1"].reshape(-1, config.d_model)
        grads[p + "attn.wq"] += n1_flat.T @ dq.reshape(-1, config.d_model)
        grads[p + "attn.bq"] += dq.sum(axis=(0, 1))
        grads[p + "attn.wk"] += n1_flat.T @ dk.reshape(-1, config.d_model)
        grads[p + "attn.bk"] += dk.sum(axis=(0, 1))
        grads[p + "attn.wv"] += n1_flat.T @ dv.reshape(-1, config.d_model)
        grads[p + "attn.bv"] += dv.sum(axis=(0, 1))
        dn1 = (dq @ params[p + "attn.wq"].T
               + dk @ params[p + "attn.wk"].T
               + dv @ params[p + "attn.wv"].T)
        dh_in, dg1, db1 = _layernorm_bwd(dn1, params[p + "ln1.g"], c["ln1"])
        grads[p + "ln1.g"] += dg1
        grads[p + "ln1.b"] += db1
        dh = dh_in + dh_mid  # residual

    if cache["demb"] is not None:
        dh = dh * cache["demb"]
    dh = dh * cache["fmask"]
    np.add.at(grads["tok_emb"], cache["ids"], dh)
    grads["pos_emb"][:L] += dh.sum(axis=0)

    return loss, grads


def save_checkpoint(path: str, config: ModelConfig, params: Params,
                    header_extra: dict | None = None,
                    arrays_extra: dict[str, np.ndarray] | None = None) -> None:
    """Deterministic container: config + seed lineage header, flat arrays."""
    header = {
        "kind": "txnlm-checkpoint",
        "version": CHECKPOINT_VERSION,
        "model_config": config.to_dict(),
    }
    if header_extra:
        header.update(header_extra)
    arrays = {"param." + name: params[name] for name, _ in param_spec(config)}
    if arrays_extra:
        arrays.update(arrays_extra)
    save_container(path, header, arrays)


def load_checkpoint(path: str):
    header, arrays = load_container(path)
    if header.get("kind") != "txnlm-checkpoint":
        raise ValueError(f"{path}: not a model checkpoint")
    config = ModelConfig.from_dict(header["model_config"])
    params = {}
    for name, shape in param_spec(config):
        arr = arrays.pop("param." + name)
        if tuple(arr.shape) != tuple(shape):
            raise ValueError(f"checkpoint array {name} has shape {arr.shape}, want {shape}")
        params[name] = arr
    return config, params, header, arrays
