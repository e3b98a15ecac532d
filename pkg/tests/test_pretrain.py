"""MLM pretraining loop: masking, Adam, scheduling, resume determinism."""

import os

import numpy as np
import pytest

from txnlm.encoder import ModelConfig, forward, init_params
from txnlm.grammar import serialize_document
from txnlm.pretrain import (
    AdamState, Dataset, DistillConfig, MaskingConfig, TrainConfig, adam_step,
    apply_masking, encode_dataset, eval_mlm_loss, load_train_checkpoint,
    lr_at_step, maskable_positions, pretrain, split_dataset,
)
from txnlm.synthgen import GeneratorConfig, generate_corpus
from txnlm.tokenizer import MASK_ID, MASKABLE_MIN_ID, train_vocab


# ---------------------------------------------------------------------------
# masking

def _eligible_batch(rng, vocab_size=500, shape=(64, 48)):
    ids = rng.integers(MASKABLE_MIN_ID, vocab_size, size=shape).astype(np.int32)
    mask = np.ones(shape, dtype=np.uint8)
    mask[:, 40:] = 0
    ids[:, 40:] = 0
    ids[:, 0] = 2  # [CLS]
    return ids, mask


def test_masking_rate_and_proportions():
    rng = np.random.default_rng(0)
    ids, mask = _eligible_batch(rng)
    masking = MaskingConfig()
    n_sel = n_mask = n_rand = n_keep = 0
    trials = 60
    for _ in range(trials):
        masked, spec = apply_masking(ids, mask, masking, rng, vocab_size=500)
        sel = spec.rows.size
        n_sel += sel
        at = masked[spec.rows, spec.cols]
        n_mask += int((at == MASK_ID).sum())
        changed = (at != spec.target_ids) & (at != MASK_ID)
        n_rand += int(changed.sum())
        n_keep += int((at == spec.target_ids).sum())
    eligible_per_trial = int(maskable_positions(ids, mask).sum())
    total_eligible = trials * eligible_per_trial
    # selection is Bernoulli(0.15) over eligible slots
    p = n_sel / total_eligible
    sigma = np.sqrt(0.15 * 0.85 / total_eligible)
    assert abs(p - 0.15) < 4 * sigma
    # corruption split 80/10/10; random draws collide with the original
    # token at rate 1/(V - 8) ~= 0.2%, which the 4-sigma margin absorbs
    for observed, expect in ((n_mask, 0.8), (n_rand, 0.1), (n_keep, 0.1)):
        sig = np.sqrt(expect * (1 - expect) / n_sel)
        assert abs(observed / n_sel - expect) < 4 * sig + 0.003


def test_masking_never_touches_structural_or_padding():
    rng = np.random.default_rng(1)
    ids, mask = _eligible_batch(rng)
    for _ in range(20):
        masked, spec = apply_masking(ids, mask, MaskingConfig(), rng, 500)
        assert np.all(ids[spec.rows, spec.cols] >= MASKABLE_MIN_ID)
        assert np.all(mask[spec.rows, spec.cols] == 1)
        # untouched everywhere else
        untouched = np.ones_like(ids, dtype=bool)
        untouched[spec.rows, spec.cols] = False
        assert np.array_equal(masked[untouched], ids[untouched])
        # corrupted tokens are never structural
        assert np.all((masked[spec.rows, spec.cols] >= MASKABLE_MIN_ID)
                      | (masked[spec.rows, spec.cols] == MASK_ID))


def test_masking_targets_are_originals():
    rng = np.random.default_rng(2)
    ids, mask = _eligible_batch(rng)
    _, spec = apply_masking(ids, mask, MaskingConfig(), rng, 500)
    assert np.array_equal(spec.target_ids, ids[spec.rows, spec.cols])


def test_masking_forces_one_position():
    ids = np.array([[2, 9, 8, 0]], dtype=np.int32)
    mask = np.array([[1, 1, 1, 0]], dtype=np.uint8)
    masking = MaskingConfig(mask_rate=1e-12)
    _, spec = apply_masking(ids, mask, masking, np.random.default_rng(0), 500)
    assert spec.rows.size == 1


def test_masking_requires_eligible_positions():
    ids = np.array([[2, 3, 5, 0]], dtype=np.int32)  # structural only
    mask = np.array([[1, 1, 1, 0]], dtype=np.uint8)
    with pytest.raises(ValueError):
        apply_masking(ids, mask, MaskingConfig(), np.random.default_rng(0), 500)


def test_masking_deterministic_given_rng():
    ids, mask = _eligible_batch(np.random.default_rng(3))
    a = apply_masking(ids, mask, MaskingConfig(), np.random.default_rng(42), 500)
    b = apply_masking(ids, mask, MaskingConfig(), np.random.default_rng(42), 500)
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1].rows, b[1].rows)


def test_masking_config_validation():
    with pytest.raises(ValueError):
        MaskingConfig(mask_rate=0.0)
    with pytest.raises(ValueError):
        MaskingConfig(mask_token_prob=0.8, random_token_prob=0.3)
    assert np.isclose(MaskingConfig().keep_prob, 0.1)


# ---------------------------------------------------------------------------
# schedule and optimizer

def test_lr_warmup_then_constant():
    cfg = TrainConfig(total_steps=1000, lr=3e-4, warmup_frac=0.01, seed=0)
    assert cfg.warmup_steps == 10
    assert np.isclose(lr_at_step(cfg, 0), 3e-5)
    assert np.isclose(lr_at_step(cfg, 4), 1.5e-4)
    assert np.isclose(lr_at_step(cfg, 9), 3e-4)
    assert np.isclose(lr_at_step(cfg, 10), 3e-4)
    assert np.isclose(lr_at_step(cfg, 999), 3e-4)
    rates = [lr_at_step(cfg, s) for s in range(20)]
    assert all(b >= a for a, b in zip(rates, rates[1:]))


def test_adam_first_step_is_signed_lr():
    params = {"x": np.array([1.0, -2.0, 3.0])}
    grads = {"x": np.array([0.5, -0.25, 4.0])}
    state = AdamState.zeros(params)
    adam_step(params, grads, state, lr=0.1)
    # bias correction makes step one exactly lr * g / (|g| + eps)
    expected = np.array([1.0, -2.0, 3.0]) - 0.1 * np.sign([0.5, -0.25, 4.0])
    np.testing.assert_allclose(params["x"], expected, atol=1e-6)
    assert state.t == 1


def test_adam_minimizes_quadratic():
    params = {"x": np.array([5.0, -7.0])}
    state = AdamState.zeros(params)
    for _ in range(600):
        grads = {"x": 2.0 * params["x"]}
        adam_step(params, grads, state, lr=0.05)
    # constant-rate Adam settles into an lr-sized neighborhood of the optimum
    assert np.max(np.abs(params["x"])) < 0.05


def test_adam_zero_gradient_is_noop():
    params = {"x": np.array([1.5, 2.5])}
    state = AdamState.zeros(params)
    adam_step(params, {"x": np.zeros(2)}, state, lr=0.1)
    np.testing.assert_array_equal(params["x"], [1.5, 2.5])


# ---------------------------------------------------------------------------
# dataset plumbing

@pytest.fixture(scope="module")
def tiny_setup():
    corpus, _ = generate_corpus(GeneratorConfig(n_accounts=60, seed=7))
    docs = {a: serialize_document(a, t).render() for a, t in corpus}
    lines = list(docs.values())
    vocab = train_vocab(lines, target_size=700, min_frequency=2)
    data = encode_dataset(docs, vocab, max_context=64)
    model = ModelConfig(vocab_size=vocab.size, max_context=64, d_model=16,
                        n_heads=2, n_layers=1, d_ff=32, dropout_rate=0.1)
    return docs, vocab, data, model


def test_encode_dataset_sorted_and_shapes(tiny_setup):
    docs, vocab, data, _ = tiny_setup
    assert data.account_ids == sorted(docs)
    assert data.ids.shape == (60, 64)
    assert data.ids.dtype == np.int32
    assert data.attention_mask.dtype == np.uint8
    assert len(data) == 60


def test_split_dataset_is_account_stable(tiny_setup):
    _, _, data, _ = tiny_setup
    train_idx, eval_idx = split_dataset(data, 0.1)
    assert set(train_idx) | set(eval_idx) == set(range(len(data)))
    assert not set(train_idx) & set(eval_idx)
    eval_accounts = {data.account_ids[i] for i in eval_idx}
    # restricting the dataset must not move any account across the split
    sub = Dataset(ids=data.ids[:30], attention_mask=data.attention_mask[:30],
                  account_ids=data.account_ids[:30])
    _, sub_eval = split_dataset(sub, 0.1)
    assert {sub.account_ids[i] for i in sub_eval} == {
        a for a in eval_accounts if a in set(sub.account_ids)}


def test_split_dataset_rejects_empty_train():
    data = Dataset(ids=np.zeros((2, 4), np.int32),
                   attention_mask=np.ones((2, 4), np.uint8),
                   account_ids=["x", "y"])
    with pytest.raises(ValueError):
        split_dataset(data, 0.999999)


def test_eval_mlm_loss_near_log_vocab_at_init(tiny_setup):
    _, vocab, data, model = tiny_setup
    params = init_params(model, seed=0)
    _, eval_idx = split_dataset(data, 0.3)
    loss1 = eval_mlm_loss(params, model, data, eval_idx, MaskingConfig(),
                          seed=0, vocab_size=vocab.size)
    loss2 = eval_mlm_loss(params, model, data, eval_idx, MaskingConfig(),
                          seed=0, vocab_size=vocab.size)
    assert loss1 == loss2  # fixed evaluation masking stream
    assert abs(loss1 - np.log(vocab.size)) / np.log(vocab.size) < 0.1


def test_eval_mlm_loss_empty_eval_is_nan(tiny_setup):
    _, vocab, data, model = tiny_setup
    params = init_params(model, seed=0)
    loss = eval_mlm_loss(params, model, data, np.array([], dtype=int),
                         MaskingConfig(), seed=0, vocab_size=vocab.size)
    assert np.isnan(loss)


# ---------------------------------------------------------------------------
# the training loop

def _train_cfg(**kw):
    base = dict(total_steps=30, batch_size=8, lr=1e-3, seed=3,
                eval_fraction=0.1, eval_every=15, checkpoint_every=10,
                log_every=5)
    base.update(kw)
    return TrainConfig(**base)


def test_pretrain_writes_artifacts_and_learns(tiny_setup, tmp_path):
    _, vocab, data, model = tiny_setup
    out = str(tmp_path / "run")
    result = pretrain(data, model, _train_cfg(), out, quiet=True)

    assert os.path.exists(os.path.join(out, "pretrain_loss.csv"))
    assert os.path.exists(os.path.join(out, "checkpoint_step000010.bin"))
    assert os.path.exists(os.path.join(out, "checkpoint_step000020.bin"))
    assert os.path.exists(result.final_checkpoint)
    assert os.path.exists(os.path.join(out, "pretrain_eval_loss.csv"))

    with open(os.path.join(out, "pretrain_loss.csv")) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "step,loss,lr"
    steps = [int(l.split(",")[0]) for l in lines[1:]]
    assert steps == [0, 5, 10, 15, 20, 25, 29]

    losses = [loss for _, loss, _ in result.loss_history]
    assert losses[-1] < losses[0]  # it must actually descend
    assert len(result.eval_history) == 2
    assert all(np.isfinite(ev) for _, ev in result.eval_history)


def test_log_every_zero_logs_only_final_step(tiny_setup, tmp_path):
    _, _, data, model = tiny_setup
    result = pretrain(data, model, _train_cfg(log_every=0),
                      str(tmp_path / "run"), quiet=True)
    assert [s for s, _, _ in result.loss_history] == [29]


def test_pretrain_is_deterministic(tiny_setup, tmp_path):
    _, _, data, model = tiny_setup
    r1 = pretrain(data, model, _train_cfg(), str(tmp_path / "a"), quiet=True)
    r2 = pretrain(data, model, _train_cfg(), str(tmp_path / "b"), quiet=True)
    assert open(r1.final_checkpoint, "rb").read() == \
        open(r2.final_checkpoint, "rb").read()


def test_resume_matches_uninterrupted_run(tiny_setup, tmp_path):
    _, _, data, model = tiny_setup
    straight = pretrain(data, model, _train_cfg(), str(tmp_path / "full"),
                        quiet=True)
    ckpt = str(tmp_path / "full" / "checkpoint_step000020.bin")
    resumed = pretrain(data, model, _train_cfg(), str(tmp_path / "resume"),
                       resume_from=ckpt, quiet=True)
    assert open(straight.final_checkpoint, "rb").read() == \
        open(resumed.final_checkpoint, "rb").read()


def test_resume_rejects_config_mismatch(tiny_setup, tmp_path):
    _, _, data, model = tiny_setup
    import dataclasses
    run = pretrain(data, model, _train_cfg(total_steps=10, checkpoint_every=5),
                   str(tmp_path / "r"), quiet=True)
    other = dataclasses.replace(model, d_ff=64)
    with pytest.raises(ValueError):
        pretrain(data, other, _train_cfg(), str(tmp_path / "r2"),
                 resume_from=run.final_checkpoint, quiet=True)


def test_checkpoint_restores_optimizer_state(tiny_setup, tmp_path):
    _, _, data, model = tiny_setup
    run = pretrain(data, model, _train_cfg(total_steps=10, checkpoint_every=5),
                   str(tmp_path / "r"), quiet=True)
    cfg, params, adam, step, header = load_train_checkpoint(run.final_checkpoint)
    assert step == 10 and adam.t == 10
    assert cfg == model
    assert header["stage"] == "pretrain"
    assert any(np.abs(v).max() > 0 for v in adam.m.values())


def test_probe_hook_cadence(tiny_setup, tmp_path):
    _, _, data, model = tiny_setup
    calls = []

    def hook(step, params):
        calls.append(step)
        return [("gender", "acc", 0.5 + step / 1000)]

    out = str(tmp_path / "hooked")
    pretrain(data, model, _train_cfg(probe_every=10), out,
             probe_hook=hook, quiet=True)
    assert calls == [10, 20, 30]
    with open(os.path.join(out, "probe_log.csv")) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "step,task,metric,score"
    assert lines[1] == "10,gender,acc,0.510000"
    assert len(lines) == 4


def test_distillation_smoke(tiny_setup, tmp_path):
    _, _, data, model = tiny_setup
    teacher = pretrain(data, model, _train_cfg(total_steps=20),
                       str(tmp_path / "teacher"), quiet=True)
    import dataclasses
    student_model = dataclasses.replace(model, d_ff=16)
    out = str(tmp_path / "student")
    result = pretrain(data, student_model, _train_cfg(total_steps=20), out,
                      teacher=(teacher.params, model),
                      distill=DistillConfig(), quiet=True)
    assert os.path.exists(os.path.join(out, "distill_loss.csv"))
    _, _, _, _, header = load_train_checkpoint(result.final_checkpoint)
    assert header["stage"] == "distill"
    assert all(np.isfinite(l) for _, l, _ in result.loss_history)


def test_distillation_rejects_vocab_mismatch(tiny_setup, tmp_path):
    _, _, data, model = tiny_setup
    import dataclasses
    teacher_model = dataclasses.replace(model, vocab_size=model.vocab_size + 1)
    t_params = init_params(teacher_model, seed=0)
    with pytest.raises(ValueError):
        pretrain(data, model, _train_cfg(total_steps=5), str(tmp_path / "x"),
                 teacher=(t_params, teacher_model), quiet=True)


def test_distill_config_validation():
    with pytest.raises(ValueError):
        DistillConfig(temperature=0.0)
    with pytest.raises(ValueError):
        DistillConfig(w_soft=-0.1)
