"""Architecture module tests: shapes, contracts, gradient-flow invariants."""

import numpy as np
import pytest

from taskdistill.autograd import ConfigurationError, Tape, Tensor4, UsageError
from taskdistill.config import TASKS, NetworkConfig
from taskdistill.decoders import decode
from taskdistill.distill import attention_map, distill_a, distill_b, distill_c
from taskdistill.frontend import (
    aggregate_scales,
    aggregated_channels,
    encoder_stages,
    reduced_channels,
)
from taskdistill.heads import heads_forward, predictions_to_features
from taskdistill.network import build_network, forward, phase1_layers
from taskdistill.ops import bilinear_resize, concat_channels, sum_all
from taskdistill.params import ParamStore


def tiny_cfg(**kw):
    base = dict(n_channels=8, encoder_stage_channels=(4, 4, 8), dilation_rates=(1, 1, 2),
                num_classes=3, distill_variant="C", active_inputs=TASKS,
                final_tasks=("depth", "parsing"), deep_supervision=True)
    base.update(kw)
    return NetworkConfig(**base).validate()


def rand_image(rng, b=1, hw=16):
    return Tensor4(rng.standard_normal((b, 3, hw, hw)) * 0.5)


class TestFrontend:
    def test_build_determinism(self):
        cfg = NetworkConfig().validate()
        a = build_network(cfg, seed=7)
        b = build_network(cfg, seed=7)
        assert a.names() == b.names()
        for name in a.names():
            np.testing.assert_array_equal(a[name].data, b[name].data)

    def test_different_seeds_differ(self):
        cfg = tiny_cfg()
        a = build_network(cfg, seed=1)
        b = build_network(cfg, seed=2)
        assert any(not np.array_equal(a[n].data, b[n].data) for n in a.names())

    def test_parameter_count_closed_form(self):
        # default desk widths: stages [16,32,64] from RGB, reducers to [8,8],
        # heads at N=32 / N/2=16, transforms to C_f=16, distill C, decoders.
        cfg = NetworkConfig().validate()
        store = build_network(cfg, seed=0)

        def conv(out, inp, k):
            return out * inp * k * k + out

        expected = (
            conv(16, 3, 3) + conv(32, 16, 3) + conv(64, 32, 3)      # stages
            + conv(8, 16, 1) + conv(8, 32, 1)                        # reducers
            + conv(32, 80, 4) + conv(1, 32, 3)                       # depth head
            + conv(32, 80, 4) + conv(6, 32, 3)                       # parsing head
            + conv(16, 80, 4) + conv(3, 16, 3)                       # normal head
            + conv(16, 80, 4) + conv(1, 16, 3)                       # contour head
            + conv(16, 1, 3) + conv(16, 6, 3)                        # transforms
            + conv(16, 3, 3) + conv(16, 1, 3)
            + 2 * conv(16, 16, 3)                                    # attention convs
            + 4 * conv(16, 16, 3)                                    # shared messages
            + 2 * (conv(8, 16, 4) + conv(4, 8, 4))                   # decoder deconvs
            + conv(1, 4, 3) + conv(6, 4, 3)                          # decoder scores
        )
        assert store.total_size() == expected

    def test_zero_stages_rejected(self):
        with pytest.raises(Exception):
            NetworkConfig(encoder_stage_channels=(), dilation_rates=()).validate()

    def test_stage_shapes(self):
        cfg = NetworkConfig().validate()
        store = build_network(cfg, seed=0)
        rng = np.random.default_rng(0)
        image = Tensor4(rng.standard_normal((1, 3, 64, 64)))
        maps = encoder_stages(store, cfg, image)
        assert [m.shape for m in maps] == [
            (1, 16, 32, 32), (1, 32, 16, 16), (1, 64, 8, 8)]

    def test_constant_input_stays_finite(self):
        cfg = tiny_cfg()
        store = build_network(cfg, seed=0)
        image = Tensor4(np.full((1, 3, 16, 16), 0.5))
        for m in encoder_stages(store, cfg, image):
            assert np.all(np.isfinite(m.data))

    def test_indivisible_input_rejected(self):
        cfg = tiny_cfg()
        store = build_network(cfg, seed=0)
        with pytest.raises(UsageError, match="divisible"):
            encoder_stages(store, cfg, Tensor4(np.zeros((1, 3, 12, 12))))

    def test_dilation_with_matching_padding_preserves_halving(self):
        cfg = NetworkConfig(dilation_rates=(1, 1, 2)).validate()
        cfg2 = NetworkConfig(dilation_rates=(1, 1, 1)).validate()
        s1 = build_network(cfg, seed=0)
        s2 = build_network(cfg2, seed=0)
        rng = np.random.default_rng(1)
        image = Tensor4(rng.standard_normal((1, 3, 64, 64)))
        assert (encoder_stages(s1, cfg, image)[-1].shape
                == encoder_stages(s2, cfg2, image)[-1].shape)

    def test_aggregated_channels(self):
        assert reduced_channels(16, 64) == 8
        assert reduced_channels(32, 64) == 8
        assert aggregated_channels(NetworkConfig().validate()) == 80

    def test_aggregate_output_is_eighth_resolution(self):
        cfg = NetworkConfig().validate()
        store = build_network(cfg, seed=0)
        rng = np.random.default_rng(2)
        for hw in (32, 64, 96):
            image = Tensor4(rng.standard_normal((1, 3, hw, hw)))
            agg = aggregate_scales(store, cfg, encoder_stages(store, cfg, image))
            assert agg.tensor.shape == (1, 80, hw // 8, hw // 8)

    def test_single_stage_aggregation_is_identity(self):
        cfg = NetworkConfig(encoder_stage_channels=(8,), dilation_rates=(1,),
                            distill_variant="none", active_inputs=(),
                            deep_supervision=False, final_tasks=("depth",)).validate()
        store = build_network(cfg, seed=0)
        rng = np.random.default_rng(3)
        image = Tensor4(rng.standard_normal((1, 3, 8, 8)))
        maps = encoder_stages(store, cfg, image)
        agg = aggregate_scales(store, cfg, maps)
        np.testing.assert_array_equal(agg.tensor.data, maps[0].data)

    def test_compositional_oracle_identity_reducers(self):
        # with reducers forced to identity, aggregation equals the concat of
        # independently resized stage maps
        cfg = NetworkConfig(encoder_stage_channels=(8, 8, 8),
                            dilation_rates=(1, 1, 1)).validate()
        store = build_network(cfg, seed=0)
        for i in (1, 2):
            w, b = store.pair(f"frontend.agg{i}")
            w.data = np.eye(8).reshape(8, 8, 1, 1)
            b.data = np.zeros_like(b.data)
        rng = np.random.default_rng(4)
        image = Tensor4(rng.standard_normal((1, 3, 32, 32)))
        maps = encoder_stages(store, cfg, image)
        agg = aggregate_scales(store, cfg, maps)
        want = concat_channels(
            [bilinear_resize(maps[0], 4, 4), bilinear_resize(maps[1], 4, 4), maps[2]]
        )
        np.testing.assert_allclose(agg.tensor.data, want.data, atol=1e-12)

    def test_gradient_reaches_every_stage(self):
        cfg = tiny_cfg()
        store = build_network(cfg, seed=0)
        rng = np.random.default_rng(5)
        image = rand_image(rng)
        with Tape() as tape:
            out = forward(store, cfg, image)
            loss = sum_all(out.final["depth"])
            tape.backward(loss)
        for i in range(1, 4):
            g = tape.grad(store[f"frontend.stage{i}.weight"])
            assert np.abs(g).max() > 0, f"stage {i} got no gradient"


class TestHeads:
    def test_score_map_resolution_chain(self):
        cfg = NetworkConfig().validate()
        store = build_network(cfg, seed=0)
        rng = np.random.default_rng(6)
        image = Tensor4(rng.standard_normal((1, 3, 64, 64)))
        agg = aggregate_scales(store, cfg, encoder_stages(store, cfg, image))
        preds = heads_forward(store, cfg, agg, (64, 64))
        assert preds.depth.shape == (1, 1, 16, 16)
        assert preds.parsing.shape == (1, 6, 16, 16)
        assert preds.normal.shape == (1, 3, 16, 16)
        assert preds.contour.shape == (1, 1, 16, 16)

    def test_head_widths_full_and_half(self):
        cfg = NetworkConfig().validate()
        store = build_network(cfg, seed=0)
        assert store["heads.depth.up.weight"].shape == (80, 32, 4, 4)
        assert store["heads.parsing.up.weight"].shape == (80, 32, 4, 4)
        assert store["heads.normal.up.weight"].shape == (80, 16, 4, 4)
        assert store["heads.contour.up.weight"].shape == (80, 16, 4, 4)

    def test_parsing_channels_follow_num_classes(self):
        for classes in (2, 5, 9):
            cfg = tiny_cfg(num_classes=classes)
            store = build_network(cfg, seed=0)
            assert store["heads.parsing.score.weight"].shape[0] == classes

    def test_transform_count_follows_active_inputs(self):
        cfg = tiny_cfg()
        store = build_network(cfg, seed=0)
        rng = np.random.default_rng(7)
        image = rand_image(rng)
        agg = aggregate_scales(store, cfg, encoder_stages(store, cfg, image))
        preds = heads_forward(store, cfg, agg, (16, 16))
        feats = predictions_to_features(store, cfg, preds)
        assert sorted(feats) == sorted(TASKS)

        cfg2 = tiny_cfg(active_inputs=("depth", "parsing"))
        store2 = build_network(cfg2, seed=0)
        feats2 = predictions_to_features(store2, cfg2,
                                         heads_forward(store2, cfg2, agg, (16, 16)))
        assert sorted(feats2) == ["depth", "parsing"]

    def test_zero_predictions_zero_biases_give_zero_features(self):
        cfg = tiny_cfg()
        store = build_network(cfg, seed=0)
        zero = Tensor4(np.zeros((1, 1, 4, 4)))
        zero3 = Tensor4(np.zeros((1, 3, 4, 4)))
        zeroc = Tensor4(np.zeros((1, 3, 4, 4)))
        from taskdistill.heads import IntermediatePredictions

        preds = IntermediatePredictions(depth=zero, parsing=zeroc, normal=zero3,
                                        contour=zero)
        feats = predictions_to_features(store, cfg, preds)
        for t, f in feats.items():
            np.testing.assert_array_equal(f.data, 0.0)

    def test_empty_active_inputs_with_distillation_rejected(self):
        from taskdistill.config import ConfigError

        with pytest.raises(ConfigError, match="active"):
            tiny_cfg(active_inputs=())

    def test_deep_supervision_gradient_without_distillation(self):
        # intermediate losses reach the front end even with distillation off
        cfg = tiny_cfg(distill_variant="none", active_inputs=())
        store = build_network(cfg, seed=0)
        rng = np.random.default_rng(8)
        image = rand_image(rng)
        with Tape() as tape:
            out = forward(store, cfg, image)
            tape.backward(sum_all(out.intermediate.parsing))
        g = tape.grad(store["frontend.stage1.weight"])
        assert np.abs(g).max() > 0


class TestDecoders:
    def test_channel_halving_and_resolution(self):
        cfg = NetworkConfig().validate()
        store = build_network(cfg, seed=0)
        assert store["decoder.depth.up1.weight"].shape == (16, 8, 4, 4)
        assert store["decoder.depth.up2.weight"].shape == (8, 4, 4, 4)
        rng = np.random.default_rng(9)
        fused = Tensor4(rng.standard_normal((1, 16, 16, 16)))
        out = decode(store, cfg, fused, "depth")
        assert out.shape == (1, 1, 64, 64)

    def test_full_pipeline_output_resolution(self):
        cfg = tiny_cfg()
        store = build_network(cfg, seed=0)
        rng = np.random.default_rng(10)
        out = forward(store, cfg, rand_image(rng, hw=16))
        assert out.final["depth"].shape == (1, 1, 16, 16)
        assert out.final["parsing"].shape == (1, 3, 16, 16)

    def test_too_few_fused_channels_rejected(self):
        cfg = tiny_cfg(encoder_stage_channels=(2,), dilation_rates=(1,),
                       distill_variant="none", active_inputs=(),
                       deep_supervision=False, final_tasks=("depth",))
        with pytest.raises(ConfigurationError, match="halve"):
            build_network(cfg, seed=0)

    def test_decoder_isolation(self):
        cfg = tiny_cfg()
        store = build_network(cfg, seed=0)
        rng = np.random.default_rng(11)
        image = rand_image(rng)
        with Tape() as tape:
            out = forward(store, cfg, image)
            tape.backward(sum_all(out.final["depth"]))
        for name in store.names():
            if name.startswith("decoder.parsing."):
                np.testing.assert_array_equal(tape.grad(store[name]), 0.0)


class TestVariantsForward:
    @pytest.mark.parametrize("variant", ["none", "A", "B", "C"])
    def test_all_variants_produce_full_resolution(self, variant):
        cfg = tiny_cfg(distill_variant=variant,
                       active_inputs=() if variant == "none" else TASKS,
                       deep_supervision=True)
        store = build_network(cfg, seed=0)
        rng = np.random.default_rng(12)
        out = forward(store, cfg, rand_image(rng, hw=16))
        assert set(out.final) == {"depth", "parsing"}
        for t, m in out.final.items():
            assert m.shape[2:] == (16, 16)

    def test_shape_contract_across_ablation_grid(self):
        from taskdistill.config import apply_variant, experiment_from_dict
        from taskdistill.cli import desk_config_dict
        from taskdistill.variants import REGISTRY

        base = experiment_from_dict(desk_config_dict())
        rng = np.random.default_rng(13)
        for variant in REGISTRY.values():
            exp = apply_variant(base, variant)
            store = build_network(exp.network, seed=0)
            out = forward(store, exp.network, Tensor4(rng.standard_normal((1, 3, 32, 32))))
            assert set(out.final) == set(variant.final_tasks)
            for m in out.final.values():
                assert m.shape[2:] == (32, 32)

    def test_phase1_layer_sets(self):
        cfg = tiny_cfg()
        store = build_network(cfg, seed=0)
        layers = phase1_layers(cfg, store)
        assert all(l.startswith(("frontend.", "heads.parsing.")) for l in layers)
        assert any(l.startswith("heads.parsing.") for l in layers)

        cfg2 = tiny_cfg(distill_variant="none", active_inputs=(),
                        deep_supervision=False, final_tasks=("parsing",))
        store2 = build_network(cfg2, seed=0)
        layers2 = phase1_layers(cfg2, store2)
        assert any(l.startswith("decoder.parsing.") for l in layers2)

        cfg3 = tiny_cfg(distill_variant="none", active_inputs=(),
                        deep_supervision=False, final_tasks=("depth",))
        store3 = build_network(cfg3, seed=0)
        assert phase1_layers(cfg3, store3) == []
