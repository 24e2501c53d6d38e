"""Model assembly, optimizer behavior, and the two-stage training protocol.

Training tests run on a 120-sample micro dataset with 2 epochs so the whole
module stays in the seconds range; the full-scale behavior is covered by the
acceptance suite.
"""

import numpy as np
import pytest

from kuda import data as D
from kuda import tensor as T
from kuda.fusion import MODALITIES
from kuda.pipeline import (
    AdamW,
    KudaModel,
    TrainConfig,
    branch_attention_mass,
    component_rng,
    desk_profile,
    dominant_attention_rate,
    downstream_stage,
    evaluate,
    make_feature_batch,
    multimodal_labels,
    paper_profile,
    pretrain_stage,
)


def micro_config(**overrides):
    base = dict(epochs=2, seed=3)
    base.update(overrides)
    return desk_profile(**base)


@pytest.fixture(scope="module")
def records():
    return D.synthesize(D.GeneratorSpec(n_samples=120), seed=3)


@pytest.fixture(scope="module")
def trained(records):
    config = micro_config()
    checkpoint, _ = pretrain_stage(records, config)
    model, _ = downstream_stage(records, checkpoint, config)
    return checkpoint, model


# -- config ------------------------------------------------------------------

def test_config_validation_errors():
    with pytest.raises(ValueError):
        TrainConfig(stage="finetune").validate()
    with pytest.raises(ValueError):
        TrainConfig(ablations=["no_Everything"]).validate()
    with pytest.raises(ValueError):
        TrainConfig(fusion_strategy="late").validate()
    with pytest.raises(ValueError):
        TrainConfig(k=0.0).validate()
    with pytest.raises(ValueError):
        TrainConfig(alpha=-0.1).validate()


def test_config_json_roundtrip():
    cfg = desk_profile(seed=9, ablations=["no_SR"])
    back = TrainConfig.from_json(cfg.to_json())
    assert back == cfg
    assert isinstance(back.label_range, tuple)


def test_profiles_are_valid():
    desk_profile().validate()
    paper_profile().validate()


def test_component_rng_streams_are_split():
    a = component_rng(0, "model").normal(size=4)
    b = component_rng(0, "pretrain").normal(size=4)
    c = component_rng(0, "model").normal(size=4)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, c)


# -- batching ----------------------------------------------------------------

def test_feature_batch_carries_no_multimodal_label(records):
    batch = make_feature_batch(records[:4])
    assert not hasattr(batch, "y")
    assert batch.unimodal_labels is None
    batch2 = make_feature_batch(records[:4], with_unimodal=True)
    assert set(batch2.unimodal_labels) == set(MODALITIES)


# -- model -------------------------------------------------------------------

def test_model_params_deterministic_and_partitioned():
    a = KudaModel(micro_config())
    b = KudaModel(micro_config())
    pa, pb = a.all_params(), b.all_params()
    assert set(pa) == set(pb)
    for n in pa:
        np.testing.assert_array_equal(pa[n].data, pb[n].data)
    know = set(a.knowledge_params())
    stage1 = set(a.stage1_params())
    assert know < stage1 < set(pa)
    assert all(n.startswith("know.") for n in know)
    assert "fusion.seed" in pa


def test_model_predict_shape_and_test_mode(records):
    model = KudaModel(micro_config())
    preds = model.predict(make_feature_batch(records[:5]))
    assert preds.shape == (5,)
    assert np.all(np.isfinite(preds))


def test_forward_train_requires_label(records):
    model = KudaModel(micro_config())
    with pytest.raises(ValueError):
        model.forward(make_feature_batch(records[:4]), mode="train")
    with pytest.raises(ValueError):
        model.forward(make_feature_batch(records[:4]), mode="predict")


def test_no_sr_ablation_skips_ratio_computation(records):
    model = KudaModel(micro_config(ablations=["no_SR"]))
    out = model.forward(make_feature_batch(records[:4]), mode="train")  # no y needed
    assert out["ratio"].mode == "test"


def test_no_adapter_ablation_zeroes_knowledge(records):
    model = KudaModel(micro_config(ablations=["no_Adapter"]))
    out = model.forward_unimodal(make_feature_batch(records[:2]))
    for m in MODALITIES:
        u = out[m][0].data
        half = u.shape[-1] // 2
        np.testing.assert_array_equal(u[..., :half], 0.0)


def test_load_params_shape_mismatch_and_strict():
    model = KudaModel(micro_config())
    with pytest.raises(ValueError):
        model.load_params({"fusion.seed": np.zeros((1, 1))})
    with pytest.raises(KeyError):
        model.load_params({"nonexistent": np.zeros(1)}, strict=True)
    model.load_params({"nonexistent": np.zeros(1)})  # ignored when not strict


def test_baseline_strategies_forward(records):
    batch = make_feature_batch(records[:3])
    for strategy in ("addition", "concat"):
        model = KudaModel(micro_config(fusion_strategy=strategy))
        assert model.predict(batch).shape == (3,)
        assert model.last_attention == []


# -- optimizer ---------------------------------------------------------------

def test_adamw_minimizes_quadratic():
    p = T.param(np.array([5.0, -3.0]), "p")
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
    for _ in range(300):
        opt.zero_grad()
        T.mean(T.square(p)).backward()
        opt.step()
    assert np.abs(p.data).max() < 1e-3


def test_adamw_skips_frozen_params():
    p = T.param(np.ones(2), "p")
    q = T.param(np.ones(2), "q")
    q.requires_grad = False
    opt = AdamW({"p": p, "q": q}, lr=0.1)
    assert [n for n, _ in opt.named] == ["p"]


def test_adamw_decoupled_weight_decay():
    # zero gradient: the only update is the decay term
    p = T.param(np.array([1.0]), "p")
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.5)
    p.grad = np.zeros(1)
    opt.step()
    np.testing.assert_allclose(p.data, [1.0 - 0.1 * 0.5])


def test_adamw_clips_global_norm():
    p = T.param(np.zeros(4), "p")
    opt = AdamW({"p": p}, lr=1.0, grad_clip=1.0, weight_decay=0.0)
    p.grad = np.full(4, 100.0)
    opt.step()
    np.testing.assert_allclose(np.linalg.norm(p.grad), 1.0, atol=1e-6)


# -- two-stage protocol ------------------------------------------------------

def test_pretrain_checkpoint_covers_stage1_params(records, trained):
    checkpoint, _ = trained
    model = KudaModel(micro_config())
    assert set(checkpoint) == set(model.stage1_params())
    assert any(n.startswith("know.") for n in checkpoint)
    assert any(n.startswith("enc.") for n in checkpoint)


def test_downstream_freezes_knowledge_bitwise(records, trained):
    checkpoint, model = trained
    for name, tensor in model.knowledge_params().items():
        np.testing.assert_array_equal(tensor.data, checkpoint[name])
    # non-knowledge stage-1 params (encoders) must have moved
    moved = [
        name
        for name in checkpoint
        if name.startswith("enc.") and not np.array_equal(model.all_params()[name].data, checkpoint[name])
    ]
    assert moved


def test_no_kip_changes_predictions(records, trained):
    checkpoint, model = trained
    ablated, _ = downstream_stage(records, checkpoint, micro_config(ablations=["no_KIP"]))
    batch = make_feature_batch(D.split(records, "test"))
    assert not np.allclose(model.predict(batch), ablated.predict(batch))


def test_stage_requires_train_and_valid_splits(records):
    only_test = [r for r in records if r.split == "test"]
    with pytest.raises(ValueError):
        pretrain_stage(only_test, micro_config())
    with pytest.raises(ValueError):
        downstream_stage(only_test, None, micro_config())


# -- evaluation --------------------------------------------------------------

def test_evaluate_outputs(records, trained):
    _, model = trained
    test = D.split(records, "test")
    report, preds, attention_rows, feature_rows = evaluate(model, test)
    assert preds.shape == (len(test),)
    assert np.isfinite(report.mae)
    assert len(feature_rows) == len(test)
    # one row per sample x block x modality
    assert len(attention_rows) == len(test) * model.config.n_blocks * 3
    for row in attention_rows[:20]:
        w = np.asarray(row["weights"])
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)
        assert row["ratios"] == {m: 1.0 for m in MODALITIES}


def test_branch_attention_mass_range(records, trained):
    _, model = trained
    test = D.split(records, "test")
    _, _, attention_rows, _ = evaluate(model, test)
    mass = branch_attention_mass(attention_rows)
    assert set(mass) == {r.id for r in test}
    for per_mod in mass.values():
        for v in per_mod.values():
            assert 0.0 <= v <= 1.0


def test_dominant_attention_rate_requires_unique_dominants(records, trained):
    _, model = trained
    test = D.split(records, "test")
    _, _, attention_rows, _ = evaluate(model, test)
    rate = dominant_attention_rate(test, attention_rows)
    assert 0.0 <= rate <= 1.0
    with pytest.raises(ValueError):
        dominant_attention_rate(test, [])


def test_evaluate_prediction_independent_of_labels(records, trained):
    # altering every multimodal test label must not move a single prediction
    _, model = trained
    test = [D.SampleRecord(**{**r.__dict__}) for r in D.split(records, "test")]
    _, preds_before, _, _ = evaluate(model, test)
    for r in test:
        r.y = -r.y
    _, preds_after, _, _ = evaluate(model, test)
    np.testing.assert_array_equal(preds_before, preds_after)
