"""Transformer encoder: exact gradients, masking semantics, persistence."""

import numpy as np
import pytest

from txnlm.encoder import (
    DistillLossSpec, MlmLossSpec, ModelConfig, backward, cls_embedding,
    distill_loss, forward, init_params, load_checkpoint, mlm_loss_and_dlogits,
    param_spec, save_checkpoint, softmax_rows,
)

TINY = ModelConfig(vocab_size=29, max_context=16, d_model=8, n_heads=2,
                   n_layers=2, d_ff=12, dropout_rate=0.0)


def _params64(config, seed=0):
    return init_params(config, seed=seed, dtype=np.float64)


def _batch(config, seed=0, batch=2, length=11):
    rng = np.random.default_rng(seed)
    ids = rng.integers(5, config.vocab_size, size=(batch, length)).astype(np.int32)
    mask = np.ones((batch, length), dtype=np.uint8)
    mask[0, 8:] = 0  # ragged: first sequence is shorter
    ids[0, 8:] = 0
    spec = MlmLossSpec(
        rows=np.array([0, 0, 1, 1, 1]),
        cols=np.array([1, 4, 2, 6, 10]),
        target_ids=rng.integers(5, config.vocab_size, size=5),
    )
    return ids, mask, spec


# ---------------------------------------------------------------------------
# parameter layout

def test_param_count_closed_form():
    cfg = ModelConfig(vocab_size=100, max_context=32, d_model=16, n_heads=4,
                      n_layers=3, d_ff=40)
    d, ff, V = cfg.d_model, cfg.d_ff, cfg.vocab_size
    per_layer = (2 * d                       # ln1
                 + 4 * (d * d + d)           # q, k, v, o projections
                 + 2 * d                     # ln2
                 + d * ff + ff + ff * d + d) # two ffn matmuls
    expected = (V * d + cfg.max_context * d
                + cfg.n_layers * per_layer
                + 2 * d + V)                 # final ln + mlm bias
    spec = param_spec(cfg)
    assert sum(int(np.prod(shape)) for _, shape in spec) == expected
    params = init_params(cfg, seed=1)
    assert sum(p.size for p in params.values()) == expected
    assert [n for n, _ in spec] == list(params.keys())


def test_init_rules():
    params = init_params(TINY, seed=3)
    for name, arr in params.items():
        if name.endswith(".g"):
            assert np.all(arr == 1.0), name
        elif arr.ndim == 1:
            assert np.all(arr == 0.0), name
        else:
            assert abs(arr.std() - 0.02) < 0.01, name
    again = init_params(TINY, seed=3)
    assert all(np.array_equal(params[k], again[k]) for k in params)
    other = init_params(TINY, seed=4)
    assert not np.array_equal(params["tok_emb"], other["tok_emb"])


# ---------------------------------------------------------------------------
# gradient correctness against central finite differences

def _fd_check(config, loss_spec_factory, seed):
    params = _params64(config, seed=seed)
    ids, mask, spec = _batch(config, seed=seed)
    spec = loss_spec_factory(spec, params, ids, mask, config)

    loss, grads = backward(params, ids, mask, spec, config)

    def f(p):
        out = forward(p, ids, mask, config,
                      positions=(spec.rows, spec.cols))
        if isinstance(spec, DistillLossSpec):
            return distill_loss(out.mlm_logits, spec.teacher_logits,
                                spec.target_ids, spec.temperature,
                                spec.w_soft, spec.w_hard)[0]
        return mlm_loss_and_dlogits(out.mlm_logits, spec.target_ids)[0]

    assert np.isclose(loss, f(params))
    # central differences at the near-optimal step carry ~1e-10 absolute
    # noise (cancellation of ~3.4-scale losses); the denominator floor keeps
    # that noise from dominating near-zero gradients while real gradients
    # still have to agree to 1e-4 relative
    eps = 1e-5
    rng = np.random.default_rng(seed + 17)
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        for idx in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + eps
            hi = f(params)
            flat[idx] = orig - eps
            lo = f(params)
            flat[idx] = orig
            num = (hi - lo) / (2 * eps)
            ana = grads[name].reshape(-1)[idx]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-5)
            worst = max(worst, rel)
            assert rel < 1e-4, f"{name}[{idx}]: analytic {ana} vs fd {num}"

    # directional derivative along a unit vector over all parameters:
    # catches any systematic error the per-coordinate floor could hide
    dir_rng = np.random.default_rng(seed + 23)
    direction = {k: dir_rng.standard_normal(v.shape) for k, v in params.items()}
    norm = np.sqrt(sum(float((d * d).sum()) for d in direction.values()))
    direction = {k: d / norm for k, d in direction.items()}
    deps = 1e-6
    shifted = lambda s: {k: params[k] + s * direction[k] for k in params}
    fd_dir = (f(shifted(deps)) - f(shifted(-deps))) / (2 * deps)
    ana_dir = sum(float((grads[k] * direction[k]).sum()) for k in params)
    assert abs(ana_dir - fd_dir) / max(abs(fd_dir), 1e-8) < 1e-6
    return worst


def test_gradcheck_mlm():
    worst = _fd_check(TINY, lambda s, *_: s, seed=11)
    assert worst < 1e-4


def test_gradcheck_distill():
    def make(spec, params, ids, mask, config):
        teacher = init_params(config, seed=99, dtype=np.float64)
        t_out = forward(teacher, ids, mask, config,
                        positions=(spec.rows, spec.cols))
        return DistillLossSpec(rows=spec.rows, cols=spec.cols,
                               target_ids=spec.target_ids,
                               teacher_logits=t_out.mlm_logits,
                               temperature=2.0, w_soft=0.7, w_hard=0.3)

    worst = _fd_check(TINY, make, seed=12)
    assert worst < 1e-4


def test_gradcheck_with_dropout_rng_replay():
    cfg = ModelConfig(vocab_size=29, max_context=16, d_model=8, n_heads=2,
                      n_layers=1, d_ff=12, dropout_rate=0.25)
    params = _params64(cfg, seed=5)
    ids, mask, spec = _batch(cfg, seed=5)

    loss, grads = backward(params, ids, mask, spec, cfg,
                           train_mode=True, rng=np.random.default_rng(7))

    def f(p):
        out = forward(p, ids, mask, cfg, train_mode=True,
                      rng=np.random.default_rng(7),
                      positions=(spec.rows, spec.cols))
        return mlm_loss_and_dlogits(out.mlm_logits, spec.target_ids)[0]

    assert np.isclose(loss, f(params))
    eps = 1e-6
    direction = {k: np.random.default_rng(31).standard_normal(v.shape)
                 for k, v in params.items()}
    shifted = lambda s: {k: params[k] + s * direction[k] for k in params}
    fd_dir = (f(shifted(eps)) - f(shifted(-eps))) / (2 * eps)
    ana_dir = sum(float((grads[k] * direction[k]).sum()) for k in params)
    assert abs(ana_dir - fd_dir) / max(abs(fd_dir), 1e-8) < 1e-6


# ---------------------------------------------------------------------------
# masking semantics

def test_pad_content_cannot_leak():
    params = _params64(TINY, seed=2)
    ids, mask, _ = _batch(TINY, seed=2)
    out1 = forward(params, ids, mask, TINY)
    tampered = ids.copy()
    tampered[0, 8:] = 17  # rewrite padded slots
    out2 = forward(params, tampered, mask, TINY)
    real = mask.astype(bool)
    assert np.array_equal(out1.hidden_states[real], out2.hidden_states[real])
    assert np.array_equal(out1.cls_vector, out2.cls_vector)


def test_pad_length_invariance():
    params = _params64(TINY, seed=2)
    rng = np.random.default_rng(0)
    core = rng.integers(5, TINY.vocab_size, size=9).astype(np.int32)

    def run(total):
        ids = np.zeros((1, total), dtype=np.int32)
        ids[0, :9] = core
        mask = np.zeros((1, total), dtype=np.uint8)
        mask[0, :9] = 1
        return forward(params, ids, mask, TINY).hidden_states[0, :9]

    h_short, h_long = run(9), run(15)
    np.testing.assert_allclose(h_short, h_long, rtol=0, atol=1e-12)


def test_cls_vector_is_position_zero():
    params = _params64(TINY, seed=6)
    ids, mask, _ = _batch(TINY, seed=6)
    out = forward(params, ids, mask, TINY)
    assert np.array_equal(out.cls_vector, out.hidden_states[:, 0])
    assert np.array_equal(cls_embedding(params, ids, mask, TINY),
                          out.cls_vector)


def test_context_overflow_raises():
    params = _params64(TINY)
    ids = np.zeros((1, TINY.max_context + 1), dtype=np.int32)
    mask = np.ones_like(ids, dtype=np.uint8)
    with pytest.raises(ValueError):
        forward(params, ids, mask, TINY)


# ---------------------------------------------------------------------------
# MLM head: tied projection

def test_mlm_head_is_tied_to_token_embedding():
    params = _params64(TINY, seed=8)
    assert not any("head" in k for k in params)
    ids, mask, spec = _batch(TINY, seed=8)
    out = forward(params, ids, mask, TINY, positions=(spec.rows, spec.cols))
    manual = (out.hidden_states[spec.rows, spec.cols] @ params["tok_emb"].T
              + params["mlm_bias"])
    assert np.array_equal(out.mlm_logits, manual)
    assert out.mlm_logits.shape == (5, TINY.vocab_size)


def test_mlm_logits_none_without_positions():
    params = _params64(TINY)
    ids, mask, _ = _batch(TINY)
    assert forward(params, ids, mask, TINY).mlm_logits is None


# ---------------------------------------------------------------------------
# loss functions

def test_mlm_loss_uniform_logits_is_log_vocab():
    logits = np.zeros((4, 37))
    loss, dlog = mlm_loss_and_dlogits(logits, np.array([0, 5, 9, 36]))
    assert np.isclose(loss, np.log(37))
    np.testing.assert_allclose(dlog.sum(axis=1), 0.0, atol=1e-12)


def test_mlm_loss_hand_case():
    # two positions, three classes; compare against direct formula
    logits = np.array([[2.0, 0.0, -1.0], [0.5, 0.5, 0.5]])
    targets = np.array([0, 2])
    p0 = np.exp(2.0) / (np.exp(2.0) + 1.0 + np.exp(-1.0))
    expected = -(np.log(p0) + np.log(1.0 / 3.0)) / 2
    loss, _ = mlm_loss_and_dlogits(logits, targets)
    assert np.isclose(loss, expected)


def test_mlm_loss_rejects_empty():
    with pytest.raises(ValueError):
        mlm_loss_and_dlogits(np.zeros((0, 5)), np.zeros(0, dtype=int))


def test_distill_equal_logits_zero_soft_loss():
    rng = np.random.default_rng(3)
    logits = rng.standard_normal((6, 19))
    loss, dlog = distill_loss(logits, logits.copy(), np.zeros(6, dtype=int),
                              temperature=2.0, w_soft=1.0, w_hard=0.0)
    assert abs(loss) < 1e-12
    assert np.max(np.abs(dlog)) < 1e-12


def test_distill_hard_only_matches_mlm_loss():
    rng = np.random.default_rng(4)
    s = rng.standard_normal((5, 11))
    t = rng.standard_normal((5, 11))
    targets = rng.integers(0, 11, size=5)
    dl, dgrad = distill_loss(s, t, targets, temperature=3.0,
                             w_soft=0.0, w_hard=1.0)
    ml, mgrad = mlm_loss_and_dlogits(s, targets)
    assert np.isclose(dl, ml)
    np.testing.assert_allclose(dgrad, mgrad, atol=1e-12)


def test_distill_loss_is_convex_combination():
    rng = np.random.default_rng(5)
    s = rng.standard_normal((7, 13))
    t = rng.standard_normal((7, 13))
    targets = rng.integers(0, 13, size=7)
    soft, _ = distill_loss(s, t, targets, 2.0, 1.0, 0.0)
    hard, _ = distill_loss(s, t, targets, 2.0, 0.0, 1.0)
    both, _ = distill_loss(s, t, targets, 2.0, 0.7, 0.3)
    assert np.isclose(both, 0.7 * soft + 0.3 * hard)


def test_softmax_rows_stability():
    x = np.array([[1000.0, 1000.0], [-1000.0, 0.0]])
    p = softmax_rows(x)
    np.testing.assert_allclose(p, [[0.5, 0.5], [0.0, 1.0]], atol=1e-12)


# ---------------------------------------------------------------------------
# training dynamics smoke test

def test_sgd_descends_on_fixed_batch():
    params = _params64(TINY, seed=10)
    ids, mask, spec = _batch(TINY, seed=10)
    first, _ = backward(params, ids, mask, spec, TINY)
    loss = first
    for _ in range(60):
        loss, grads = backward(params, ids, mask, spec, TINY)
        for k in params:
            params[k] -= 0.1 * grads[k]
    assert loss < 0.5 * first


# ---------------------------------------------------------------------------
# persistence

def test_checkpoint_roundtrip_and_determinism(tmp_path):
    params = init_params(TINY, seed=21)
    p1 = str(tmp_path / "a.bin")
    p2 = str(tmp_path / "b.bin")
    save_checkpoint(p1, TINY, params, header_extra={"stage": "test"},
                    arrays_extra={"extra.x": np.arange(3.0)})
    save_checkpoint(p2, TINY, params, header_extra={"stage": "test"},
                    arrays_extra={"extra.x": np.arange(3.0)})
    assert open(p1, "rb").read() == open(p2, "rb").read()

    config, loaded, header, extra = load_checkpoint(p1)
    assert config == TINY
    assert header["stage"] == "test"
    assert set(loaded) == set(params)
    for k in params:
        assert np.array_equal(loaded[k], params[k])
        assert loaded[k].dtype == params[k].dtype
    assert np.array_equal(extra["extra.x"], np.arange(3.0))


def test_checkpoint_rejects_wrong_kind(tmp_path):
    from txnlm.util import save_container
    path = str(tmp_path / "bad.bin")
    save_container(path, {"kind": "other"}, {"x": np.zeros(1)})
    with pytest.raises(ValueError):
        load_checkpoint(path)
