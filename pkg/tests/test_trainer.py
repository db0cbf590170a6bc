import numpy as np
import pytest

from gflfad import autodiff as ad
from gflfad.autodiff import backward
from gflfad.config import TrainConfig
from gflfad.data import SynthConfig, synth_corpus
from gflfad.metrics import MetricError
from gflfad.trainer import (
    LOG_HEADER,
    AdamW,
    Trainer,
    TrainingDiverged,
    adamw_step,
    compute_features,
    corpus_labels,
    cosine_lr,
    evaluate,
    sweep,
    train,
    train_and_evaluate,
    train_seed,
)

from conftest import tiny_train_overrides


@pytest.fixture(scope="module")
def corpus():
    return synth_corpus(SynthConfig(n_genuine=4, n_spoof=4, duration_s=0.25, seed=2))


@pytest.fixture(scope="module")
def cfg():
    return TrainConfig(**tiny_train_overrides())


@pytest.fixture(scope="module")
def feats(corpus, cfg):
    return compute_features(corpus, cfg), corpus_labels(corpus)


# -- optimiser ---------------------------------------------------------------


def test_adamw_fixed_point():
    p = np.array([1.0, -2.0])
    z = np.zeros(2)
    out, m, v = adamw_step(p, z, z, z, 1, lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(out, p)


def test_adamw_first_step():
    p, _, _ = adamw_step(np.array([1.0]), np.array([1.0]), np.zeros(1), np.zeros(1), 1, lr=0.1)
    # m_hat = v_hat = 1 -> p = 1 - 0.1 / (1 + 1e-8)
    assert p[0] == pytest.approx(0.9, abs=1e-8)
    assert p[0] == pytest.approx(1 - 0.1 / (1 + 1e-8), rel=1e-15)


def test_adamw_decay_only():
    p, _, _ = adamw_step(np.array([2.0, -3.0]), np.zeros(2), np.zeros(2), np.zeros(2), 1, lr=0.1, weight_decay=0.1)
    np.testing.assert_array_equal(p, np.array([2.0, -3.0]) * (1 - 0.01))


def test_adamw_shape_mismatch():
    with pytest.raises(ValueError):
        adamw_step(np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2), 1, lr=0.1)


def test_adamw_class_skips_frozen():
    a, b = ad.Parameter([1.0]), ad.Parameter([1.0])
    a.grad, b.grad = np.ones(1), np.ones(1)
    opt = AdamW({"a": a, "b": b}, weight_decay=0.0)
    opt.step(0.1, skip=frozenset({"b"}))
    assert a.data[0] < 1.0 and b.data[0] == 1.0


# -- schedule ----------------------------------------------------------------


def test_cosine_boundaries():
    assert cosine_lr(0, 100, 1e-3, 1e-5) == 1e-3
    assert cosine_lr(100, 100, 1e-3, 1e-5) == pytest.approx(1e-5, abs=1e-18)
    assert cosine_lr(50, 100, 1e-3, 1e-5) == pytest.approx((1e-3 + 1e-5) / 2, rel=1e-12)


def test_cosine_monotone():
    vals = [cosine_lr(s, 37, 1.0, 0.1) for s in range(38)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_cosine_errors():
    with pytest.raises(ValueError):
        cosine_lr(0, 0, 1.0)
    with pytest.raises(ValueError):
        cosine_lr(5, 4, 1.0)


# -- training ----------------------------------------------------------------


def test_tiny_run_writes_checkpoints(tmp_path, corpus, cfg):
    res = train(cfg, corpus, out_dir=tmp_path)
    run = res.runs[0]
    assert [p.name for p in run.checkpoints] == ["epoch001.ckpt", "epoch002.ckpt"]
    assert all(p.exists() for p in run.checkpoints)
    log = (tmp_path / "seed0" / "train_log.csv").read_text().splitlines()
    assert log[0] == LOG_HEADER == "epoch,l_ce,l_gar,l_total,lr,dev_eer"
    assert len(log) == 3


def test_runs_are_bit_identical(tmp_path, corpus, cfg):
    train(cfg, corpus, dev=corpus, out_dir=tmp_path / "a")
    train(cfg, corpus, dev=corpus, out_dir=tmp_path / "b")
    for rel in ("seed0/train_log.csv", "seed0/epoch001.ckpt", "seed0/epoch002.ckpt"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_checkpoint_resume_bit_identical(tmp_path, cfg, feats):
    x, y = feats
    ref = Trainer(cfg, 0, total_steps=10)
    ref.step(x[:4], y[:4])
    ref.save(tmp_path / "mid.ckpt")
    loaded = Trainer.load(tmp_path / "mid.ckpt")
    a, lr_a = ref.step(x[4:], y[4:])
    b, lr_b = loaded.step(x[4:], y[4:])
    assert (a, lr_a) == (b, lr_b)
    for k in ref.named:
        assert np.array_equal(ref.named[k].data, loaded.named[k].data)
        assert np.array_equal(ref.opt.m[k], loaded.opt.m[k])


def test_resume_continues_to_same_result(tmp_path, cfg, feats):
    x, y = feats
    full = train_seed(cfg, 0, x, y, out_dir=tmp_path / "full")
    one = train_seed(cfg.replace(epochs=1), 0, x, y, out_dir=tmp_path / "part")
    tr = Trainer.load(one.checkpoints[-1], cfg)
    tr.total_steps = full.trainer.total_steps
    rest = train_seed(cfg, 0, x, y, out_dir=tmp_path / "part", resume=tr)
    # the one-epoch run used a shorter schedule, so compare only structure
    assert rest.log_lines[0] == LOG_HEADER and len(rest.log_lines) == 3
    assert rest.checkpoints[-1].name == "epoch002.ckpt"


def test_loaded_shape_mismatch(tmp_path, cfg):
    Trainer(cfg, 0).save(tmp_path / "c.ckpt")
    from gflfad.checkpoint import CheckpointError

    with pytest.raises(CheckpointError):
        Trainer.load(tmp_path / "c.ckpt", cfg.replace(embed_dim=8, heads=2))


def test_total_is_ce_plus_alpha_gar(cfg, feats):
    x, y = feats
    tr = Trainer(cfg, 0)
    bundle, _ = tr.step(x, y)
    assert bundle.l_total == pytest.approx(bundle.l_ce + 0.01 * bundle.l_gar, rel=1e-12)
    assert bundle.l_gar > 0


def test_disable_gar_keeps_logged_value(cfg, feats):
    x, y = feats
    bundle, _ = Trainer(cfg.replace(disable_gar=True), 0).step(x, y)
    assert bundle.l_gar > 0
    assert bundle.l_total == bundle.l_ce


def _grads(cfg, x, y):
    tr = Trainer(cfg, 0)
    F, T = tr.grid_shape(x)
    from gflfad.model import draw_masks

    masked, visible = draw_masks(len(y), F, T, cfg.mask_ratio, np.random.default_rng(0))
    out = tr.forward(x, y, masked, visible)
    backward(out.l_total, list(tr.named.values()))
    return {k: p.grad for k, p in tr.named.items()}


def test_without_decoder_branch(cfg, feats):
    grads = _grads(cfg.replace(disable_crer_branch=True), *feats)
    assert all(np.all(g == 0) for k, g in grads.items() if k.startswith("decoder."))
    assert all(np.all(g == 0) for k, g in grads.items() if k.startswith("fusion.proj_crer"))
    assert np.abs(grads["encoder.patch_proj"]).sum() > 0


def test_without_encoder_branch(cfg, feats):
    grads = _grads(cfg.replace(disable_bn_branch=True), *feats)
    assert all(np.all(g == 0) for k, g in grads.items() if k.startswith("fusion.proj_bn"))
    assert np.abs(grads["fusion.proj_crer.weight"]).sum() > 0
    # the encoder still feeds the decoder
    assert np.abs(grads["encoder.patch_proj"]).sum() > 0


def test_both_branches_disabled_rejected():
    with pytest.raises(ValueError):
        TrainConfig(disable_bn_branch=True, disable_crer_branch=True)


def test_freeze_encoder(cfg, feats):
    x, y = feats
    tr = Trainer(cfg.replace(freeze_encoder=True), 0)
    before = {k: p.data.copy() for k, p in tr.named.items()}
    tr.step(x, y)
    for k, p in tr.named.items():
        changed = not np.array_equal(before[k], p.data)
        if k.startswith("encoder."):
            assert not changed, k
    assert not np.array_equal(before["head.fc2.weight"], tr.named["head.fc2.weight"].data)


def test_divergence_guard(cfg, feats, monkeypatch):
    tr = Trainer(cfg, 0)

    def boom(*a, **k):
        raise ad.NonFiniteError("l_total is nan")

    monkeypatch.setattr(tr, "forward", boom)
    with pytest.raises(TrainingDiverged, match="seed 0"):
        tr.step(*feats)


# -- evaluation --------------------------------------------------------------


def test_evaluate_deterministic(tmp_path, corpus, cfg):
    run = train(cfg, corpus, out_dir=tmp_path).runs[0]
    a = evaluate(run.checkpoints[-1], corpus, tmp_path / "e1")
    b = evaluate(run.checkpoints[-1], corpus, tmp_path / "e2")
    assert (tmp_path / "e1" / "scores.txt").read_bytes() == (tmp_path / "e2" / "scores.txt").read_bytes()
    assert a.eer == b.eer and a.min_tdcf == b.min_tdcf
    assert (tmp_path / "e1" / "metrics.csv").read_text().startswith("metric,value\n")


def test_single_class_eval_writes_scores(tmp_path, corpus, cfg):
    tr = Trainer(cfg, 0)
    genuine = [u for u in corpus if u.label == 1]
    with pytest.raises(MetricError):
        evaluate(tr, genuine, tmp_path)
    assert len((tmp_path / "scores.txt").read_text().splitlines()) == len(genuine)


def test_eval_ratio_zero_runs_decoder_on_all_patches(corpus, cfg):
    tr = Trainer(cfg.replace(eval_mask_ratio=0.0), 0)
    scores = tr.score(compute_features(corpus, cfg))
    assert np.all(np.isfinite(scores))


def test_untrained_model_is_near_chance():
    corpus = synth_corpus(SynthConfig(n_genuine=20, n_spoof=20, duration_s=0.25, seed=5))
    cfg = TrainConfig(**tiny_train_overrides())
    x = compute_features(corpus, cfg)
    y = corpus_labels(corpus)
    from gflfad.metrics import compute_eer

    eers = [compute_eer(Trainer(cfg, seed).score(x), y)[0] for seed in range(20)]
    # single seeds scatter widely at 20 + 20 utterances; the band applies to the seed average
    assert 0.2 <= float(np.mean(eers)) <= 0.8, eers
    assert min(eers) < 0.5 < max(eers)


# -- sweep -------------------------------------------------------------------


def test_sweep_csv(tmp_path, corpus, cfg):
    rows = sweep("alpha", [1.0, 0.01], cfg.replace(epochs=1), corpus, out_path=tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "value,eer,min_tdcf"
    assert [float(l.split(",")[0]) for l in lines[1:]] == [1.0, 0.01]
    assert len(rows) == 2


def test_one_value_sweep_matches_plain_run(corpus, cfg):
    c = cfg.replace(epochs=1)
    (row,) = sweep("mask_ratio", [0.3], c, corpus)
    plain = train_and_evaluate(c.replace(mask_ratio=0.3), corpus, corpus)
    assert row == (0.3, plain["eer"], plain["min_tdcf"])


@pytest.mark.parametrize("axis,values", [("mask_ratio", [1.0]), ("alpha", [-1.0]), ("depth", [1.0]), ("alpha", [])])
def test_sweep_rejects_bad_values(corpus, cfg, axis, values):
    with pytest.raises(ValueError):
        sweep(axis, values, cfg, corpus)


def test_sweep_needs_costs(corpus, cfg):
    with pytest.raises(ValueError, match="tdcf"):
        sweep("alpha", [0.1], cfg.replace(tdcf_c1=None), corpus)


def test_train_requires_both_classes(cfg, corpus):
    with pytest.raises(ValueError):
        train(cfg, [u for u in corpus if u.label == 0])
