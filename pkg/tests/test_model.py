"""Fusion identities, aggregation oracle, loss identities, finetune masks."""

import numpy as np
import pytest

from cirforge import numcore as nc
from cirforge.errors import ValidationError
from cirforge.model import (
    ModelConfig,
    StoreEncoders,
    ToyEncoders,
    ComposedQueryModel,
    apply_finetune_mask,
    batch_classification_loss,
    load_checkpoint,
    save_checkpoint,
)
from cirforge.store import EmbeddingStore, ImageRecord, KIND_IMAGE, make_embedder

RNG = np.random.default_rng(7)

CORPUS = [
    ImageRecord(1, "2 red dogs sitting on the big sofa"),
    ImageRecord(2, "a blue bird resting on the small chair"),
    ImageRecord(3, "4 green frogs jumping near the old barn"),
    ImageRecord(4, "5 yellow ducks swimming in the cold river"),
    ImageRecord(5, "a small rabbit eating in the quiet garden"),
    ImageRecord(6, "3 red dogs sitting on the small sofa"),
]


def toy_model(dim=16, variant="full", finetune="freeze", seed=0, heads=4):
    config = ModelConfig(dim=dim, fusion_layers=2, heads=heads, variant=variant, finetune=finetune)
    encoders = ToyEncoders(CORPUS, dim=dim, seed=seed)
    return ComposedQueryModel.create(config, encoders, seed=seed)


class TestConfig:
    def test_dim_must_divide_heads(self):
        with pytest.raises(ValidationError):
            ModelConfig(dim=30, heads=8)

    def test_variant_and_finetune_validated(self):
        with pytest.raises(ValidationError):
            ModelConfig(dim=16, heads=4, variant="bogus")
        with pytest.raises(ValidationError):
            ModelConfig(dim=16, heads=4, finetune="bogus")

    def test_round_trip(self):
        config = ModelConfig(dim=32, fusion_layers=2, heads=8, variant="no_fusion", finetune="both")
        assert ModelConfig.from_dict(config.to_dict()) == config


class TestFusion:
    def test_spans_keep_their_shapes(self):
        model = toy_model()
        visual, _ = model.encoders.encode_image(1, model.params)
        text, _ = model.encoders.encode_text("zoom in the dogs.", model.params)
        fv, fs, fw = model.fuse(visual, model.params["fuse.sep"], text)
        assert fv.shape == visual.shape
        assert fs.shape == model.params["fuse.sep"].shape
        assert fw.shape == text.shape

    def test_zeroed_weights_and_positions_give_identity(self):
        model = toy_model()
        for name, p in model.params.items():
            if name.startswith("fuse."):
                p.data[:] = 0.0
        visual = nc.constant(RNG.normal(size=(5, 16)))
        sep = nc.constant(np.zeros((1, 16)))
        text = nc.constant(RNG.normal(size=(3, 16)))
        fv, fs, fw = model.fuse(visual, sep, text)
        assert np.array_equal(fv.data, visual.data)
        assert np.array_equal(fs.data, sep.data)
        assert np.array_equal(fw.data, text.data)

    def test_cross_modal_gradient_is_nonzero(self):
        # finite-difference probe: text output must react to visual input
        model = toy_model()
        text, _ = model.encoders.encode_text("zoom in the dogs.", model.params)
        sep = model.params["fuse.sep"]
        base_visual = RNG.normal(size=(4, 16))
        proj = RNG.normal(size=text.data.shape)

        def fw_sum(visual_array):
            _, _, fw = model.fuse(nc.constant(visual_array), sep, text)
            return float((fw.data * proj).sum())

        h = 1e-5
        bumped = base_visual.copy()
        bumped[2, 3] += h
        derivative = (fw_sum(bumped) - fw_sum(base_visual)) / h
        assert abs(derivative) > 1e-6

    def test_no_fusion_variant_refuses_fuse(self):
        model = toy_model(variant="no_fusion")
        with pytest.raises(ValidationError):
            model.fuse(nc.constant(np.zeros((1, 16))), nc.constant(np.zeros((1, 16))),
                       nc.constant(np.zeros((1, 16))))


class TestAggregation:
    def _force_weights(self, model, w1, w2, w3):
        model.params["agg.w.w"].data[:] = 0.0
        model.params["agg.w.b"].data[:] = [w1, w2, w3]

    def test_forced_100_reproduces_visual_global(self):
        model = toy_model()
        self._force_weights(model, 1.0, 0.0, 0.0)
        vg = nc.constant(RNG.normal(size=(1, 16)))
        tg = nc.constant(RNG.normal(size=(1, 16)))
        fv = nc.constant(RNG.normal(size=(4, 16)))
        fw = nc.constant(RNG.normal(size=(3, 16)))
        out = model.aggregate(fv, fw, vg, tg)
        assert np.array_equal(out.data, vg.data)

    def test_forced_001_reproduces_text_global(self):
        model = toy_model()
        self._force_weights(model, 0.0, 0.0, 1.0)
        vg = nc.constant(RNG.normal(size=(1, 16)))
        tg = nc.constant(RNG.normal(size=(1, 16)))
        fv = nc.constant(RNG.normal(size=(4, 16)))
        fw = nc.constant(RNG.normal(size=(3, 16)))
        out = model.aggregate(fv, fw, vg, tg)
        assert np.array_equal(out.data, tg.data)

    def test_weighted_mix_matches_numpy_recomputation(self):
        # independent oracle: replay the aggregation arithmetic in numpy
        model = toy_model()
        p = {name: t.data for name, t in model.params.items()}
        vg = RNG.normal(size=(1, 16))
        tg = RNG.normal(size=(1, 16))
        fv = RNG.normal(size=(4, 16))
        fw = RNG.normal(size=(3, 16))
        out = model.aggregate(nc.constant(fv), nc.constant(fw),
                              nc.constant(vg), nc.constant(tg)).data

        u = np.concatenate([fv[0:1], fw[0:1]], axis=1)
        u = np.maximum(u @ p["agg.mlp.w1"] + p["agg.mlp.b1"], 0.0)
        joint = u @ p["agg.mlp.w2"] + p["agg.mlp.b2"]
        weights = joint @ p["agg.w.w"] + p["agg.w.b"]
        expected = weights[0, 0] * vg + weights[0, 1] * joint + weights[0, 2] * tg
        assert np.abs(out - expected).max() < 1e-12

    def test_linear_in_the_three_terms_for_fixed_weights(self):
        model = toy_model(variant="static_aggregation")
        model.params["agg.static_w"].data[:] = [[0.3, -0.5, 1.7]]
        vg1, tg = RNG.normal(size=(1, 16)), RNG.normal(size=(1, 16))
        vg2 = RNG.normal(size=(1, 16))
        fv, fw = RNG.normal(size=(4, 16)), RNG.normal(size=(3, 16))

        def agg(vg):
            return model.aggregate(nc.constant(fv), nc.constant(fw),
                                   nc.constant(vg), nc.constant(tg)).data

        # same fused inputs => same joint feature; output affine in vg
        lhs = agg(vg1 + vg2)
        rhs = agg(vg1) + agg(vg2) - agg(np.zeros((1, 16)))
        assert np.abs(lhs - rhs).max() < 1e-10

    def test_static_variant_ignores_joint_feature_for_weights(self):
        model = toy_model(variant="static_aggregation")
        assert "agg.w.w" not in model.params
        assert model.params["agg.static_w"].data.shape == (1, 3)


class StubEncoders:
    """Fixed globals with adjustable token features, for ablation checks."""

    IMAGE_TOKENS = 3
    MAX_TEXT_TOKENS = 3

    def __init__(self, dim, token_scale=1.0):
        self.dim = dim
        rng = np.random.default_rng(99)
        self._vg = rng.normal(size=(1, dim))
        self._tg = rng.normal(size=(1, dim))
        self._vtok = rng.normal(size=(2, dim)) * token_scale
        self._ttok = rng.normal(size=(2, dim)) * token_scale

    def param_specs(self):
        return []

    text_param_names = frozenset()
    image_param_names = frozenset()

    def encode_image(self, image_id, params):
        feats = nc.concat([nc.constant(self._vg), nc.constant(self._vtok)], axis=0)
        return feats, nc.constant(self._vg)

    def encode_text(self, caption, params):
        feats = nc.concat([nc.constant(self._tg), nc.constant(self._ttok)], axis=0)
        return feats, nc.constant(self._tg)


class TestComposeQuery:
    def test_equals_manual_composition(self):
        model = toy_model()
        visual, vg = model.encoders.encode_image(2, model.params)
        text, tg = model.encoders.encode_text("remove the chair.", model.params)
        fv, _, fw = model.fuse(visual, model.params["fuse.sep"], text)
        manual = model.aggregate(fv, fw, vg, tg).data
        assert np.array_equal(model.compose_query(2, "remove the chair.").data, manual)

    def test_no_fusion_ignores_token_features(self):
        config = ModelConfig(dim=16, heads=4, variant="no_fusion")
        enc_a = StubEncoders(16, token_scale=1.0)
        enc_b = StubEncoders(16, token_scale=123.0)
        model_a = ComposedQueryModel.create(config, enc_a, seed=1)
        model_b = ComposedQueryModel(config, enc_b, model_a.params)
        qa = model_a.compose_query(1, "anything").data
        qb = model_b.compose_query(1, "anything").data
        assert np.array_equal(qa, qb)

    def test_unknown_id_names_id(self):
        model = toy_model()
        with pytest.raises(ValidationError, match="404"):
            model.compose_query(404, "zoom in the dog.")


class TestBatchClassificationLoss:
    def test_single_element_batch_is_exactly_zero(self):
        q = nc.constant(RNG.normal(size=(1, 8)))
        assert float(batch_classification_loss(q, q, 0.01).data) == 0.0

    def test_uniform_similarities_give_log_batch_size(self):
        for batch in (2, 5, 9):
            queries = nc.constant(RNG.normal(size=(batch, 8)))
            target = RNG.normal(size=8)
            targets = nc.constant(np.tile(target, (batch, 1)))
            loss = float(batch_classification_loss(queries, targets, 0.01).data)
            assert loss == pytest.approx(np.log(batch), abs=1e-12)

    def test_orthogonal_pair_at_sharp_temperature(self):
        q = np.zeros((2, 8))
        q[0, 0] = 1.0
        q[1, 1] = 1.0
        loss = float(batch_classification_loss(nc.constant(q), nc.constant(q), 0.01).data)
        assert 0.0 <= loss < 1e-40

    def test_joint_permutation_invariance(self):
        queries = RNG.normal(size=(6, 8))
        targets = RNG.normal(size=(6, 8))
        base = float(batch_classification_loss(nc.constant(queries), nc.constant(targets), 0.01).data)
        perm = np.array([3, 0, 5, 1, 4, 2])
        permuted = float(batch_classification_loss(nc.constant(queries[perm]), nc.constant(targets[perm]), 0.01).data)
        assert permuted == pytest.approx(base, abs=1e-12)

    def test_positive_rescaling_invariance(self):
        queries = RNG.normal(size=(4, 8))
        targets = RNG.normal(size=(4, 8))
        base = float(batch_classification_loss(nc.constant(queries), nc.constant(targets), 0.01).data)
        scaled_q = queries.copy()
        scaled_q[2] *= 311.0
        scaled_t = targets.copy()
        scaled_t[1] *= 0.004
        rescaled = float(batch_classification_loss(nc.constant(scaled_q), nc.constant(scaled_t), 0.01).data)
        assert rescaled == pytest.approx(base, abs=1e-12)

    def test_loss_nonnegative_on_random_batches(self):
        for _ in range(20):
            q = nc.constant(RNG.normal(size=(5, 8)))
            t = nc.constant(RNG.normal(size=(5, 8)))
            assert float(batch_classification_loss(q, t, 0.01).data) >= 0.0

    def test_zero_norm_vector_rejected(self):
        q = np.ones((2, 8))
        t = np.ones((2, 8))
        t[1] = 0.0
        with pytest.raises(ValidationError):
            batch_classification_loss(nc.constant(q), nc.constant(t), 0.01)

    def test_temperature_validated(self):
        q = nc.constant(np.ones((2, 8)))
        with pytest.raises(ValidationError):
            batch_classification_loss(q, q, 0.0)


class TestFullLossGradient:
    def test_full_model_gradient_matches_finite_differences(self):
        """Composite oracle: d=16, B=4 toy model, all trainable tensors."""
        model = toy_model(dim=16, finetune="both", heads=4)
        batch = [(1, "zoom in the dogs.", 2), (2, "remove the chair.", 3),
                 (3, "add ducks.", 4), (4, "a small rabbit eating", 5)]

        def loss_value() -> float:
            queries = nc.concat([model.compose_query(r, c) for r, c, _ in batch], axis=0)
            targets = nc.concat([model.target_feature(t) for _, _, t in batch], axis=0)
            return batch_classification_loss(queries, targets, 0.1)

        loss = loss_value()
        grads = nc.gradients(loss, model.params)
        rng = np.random.default_rng(5)
        h = 1e-6
        for name in sorted(model.trainable_names()):
            p = model.params[name]
            flat = p.data.ravel()
            n_checks = min(flat.size, 5)
            for i in rng.choice(flat.size, size=n_checks, replace=False):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(loss_value().data)
                flat[i] = orig - h
                fm = float(loss_value().data)
                flat[i] = orig
                numeric = (fp - fm) / (2 * h)
                analytic = grads[name].ravel()[i]
                scale = max(abs(numeric), abs(analytic), 1e-3)
                assert abs(numeric - analytic) / scale < 1e-4, (name, i)


class TestFinetuneMasks:
    def test_freeze_trains_only_fusion_and_aggregation(self):
        model = toy_model(finetune="freeze")
        names = model.trainable_names()
        assert names == apply_finetune_mask(model.params, "freeze", model.encoders)
        assert all(not n.startswith("enc.") for n in names)
        assert any(n.startswith("fuse.") for n in names)
        assert any(n.startswith("agg.") for n in names)

    def test_text_only_adds_text_encoder(self):
        model = toy_model(finetune="text_only")
        names = model.trainable_names()
        assert "enc.text.embed" in names
        assert "enc.img.proj_w" not in names

    def test_both_is_strictly_larger(self):
        model = toy_model()
        freeze = apply_finetune_mask(model.params, "freeze", model.encoders)
        text_only = apply_finetune_mask(model.params, "text_only", model.encoders)
        both = apply_finetune_mask(model.params, "both", model.encoders)
        assert freeze < text_only < both
        assert both == set(model.params)

    def test_frozen_encoder_receives_zero_gradient_effect(self):
        model = toy_model(finetune="freeze")
        trainable = model.trainable_names()
        state = nc.AdamWState.create(model.params, trainable, lambda n: 1e-2, 0.01)
        before = {n: p.data.copy() for n, p in model.params.items()}
        queries = nc.concat([model.compose_query(1, "zoom in the dogs."),
                             model.compose_query(2, "remove the chair.")], axis=0)
        targets = nc.concat([model.target_feature(2), model.target_feature(3)], axis=0)
        grads = nc.gradients(batch_classification_loss(queries, targets), model.params)
        nc.adamw_step(model.params, grads, state, 0.0)
        for name in model.encoders.text_param_names | model.encoders.image_param_names:
            assert np.array_equal(model.params[name].data, before[name])
        moved = [n for n in trainable if not np.array_equal(model.params[n].data, before[n])]
        assert moved


class TestCheckpointIO:
    def test_save_load_round_trip(self, tmp_path):
        model = toy_model(dim=16, finetune="text_only")
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, extra={"adam.step": np.array(3.0)},
                        meta={"training": {"seed": 1}})
        loaded, extra, sidecar = load_checkpoint(path, model.encoders)
        assert loaded.config == model.config
        assert set(loaded.params) == set(model.params)
        for name in model.params:
            assert np.array_equal(loaded.params[name].data, model.params[name].data)
        assert extra["adam.step"] == 3.0
        assert sidecar["training"] == {"seed": 1}

    def test_store_encoders_compose(self):
        dim = 16
        embed = make_embedder(dim, seed=0)
        store = EmbeddingStore.from_entries(
            dim, KIND_IMAGE,
            [(r.id, embed(r.caption).astype(np.float32)) for r in CORPUS],
        )
        encoders = StoreEncoders(store, embed)
        config = ModelConfig(dim=dim, heads=4)
        model = ComposedQueryModel.create(config, encoders, seed=0)
        q = model.compose_query(1, "zoom in the dogs.")
        assert q.shape == (1, dim)
        with pytest.raises(ValidationError, match="404"):
            model.compose_query(404, "x")
