"""
Tests for gated cross-scale interaction and the gate presets.
"""

import numpy as np
import pytest

from network.bgc import StructuralBuffer
from network.gcs import (
    GATE_ALIASES, GATE_PRESETS, UNIT_GATE, GatedCrossScaleInteraction, LogitHead, UnknownGateConfig,
    coarse_logits, resolve_gate,
)
from utils.tensor import Tensor


def _buffer(rng, batch=2, tokens=16, dim=8):
    return StructuralBuffer(keys=Tensor(rng.normal(size=(batch, tokens, dim))),
                            values=Tensor(rng.normal(size=(batch, tokens, dim))), height=4, width=4)


class TestPresets:

    def test_aliases_resolve_to_presets(self) -> None:
        for alias, name in GATE_ALIASES.items():
            assert resolve_gate(alias) is GATE_PRESETS[name]
            assert resolve_gate(name) is GATE_PRESETS[name]

    def test_every_preset_includes_ca(self) -> None:
        assert all('CA' in preset.inputs for preset in GATE_PRESETS.values())

    def test_unit_gate(self) -> None:
        assert resolve_gate(UNIT_GATE) is None

    def test_unknown(self) -> None:
        with pytest.raises(UnknownGateConfig):
            resolve_gate('4-way')


class TestInteraction:

    def test_attention_rows_sum_to_one(self, rng) -> None:
        module = GatedCrossScaleInteraction(embed_dim=8, rng=rng)
        readout = module.cross_scale_attention(Tensor(rng.normal(size=(2, 8, 2, 2))), _buffer(rng))
        assert readout.attention.shape == (2, 4, 16)
        np.testing.assert_allclose(readout.attention.data.sum(axis=-1), 1.0)
        assert readout.f_cs.shape == readout.tb.shape == (2, 8, 2, 2)

    def test_zero_init_gate_is_one_half(self, rng) -> None:
        """All gate projections at zero give g = 0.5 and T3 = T2 + F_cs / 2."""
        module = GatedCrossScaleInteraction(embed_dim=8, zero_init_gate=True, rng=rng)
        t2 = Tensor(rng.normal(size=(2, 8, 2, 2)))
        t0 = Tensor(rng.normal(size=(2, 8, 2, 2)))
        t3, g, readout = module(t2, _buffer(rng), t0)
        np.testing.assert_array_equal(g.data, 0.5)
        np.testing.assert_allclose(t3.data, t2.data + 0.5 * readout.f_cs.data)

    def test_fuse_runs_once_per_forward(self, rng) -> None:
        module = GatedCrossScaleInteraction(embed_dim=8, rng=rng)
        t2 = Tensor(rng.normal(size=(1, 8, 2, 2)))
        for _ in range(2):
            module(t2, _buffer(rng, batch=1), t2)
            assert module.fuse_calls == 1

    @pytest.mark.parametrize('name', list(GATE_PRESETS))
    def test_presets_only_create_their_parameters(self, name, rng) -> None:
        module = GatedCrossScaleInteraction(embed_dim=8, gate=name, rng=rng)
        preset = GATE_PRESETS[name]
        assert hasattr(module, 'w_b') == preset.uses_tb
        assert hasattr(module, 'tb_value_proj') == preset.uses_tb
        assert hasattr(module, 'w_0') == preset.uses_t0

    def test_gate_ignores_t0_when_disabled(self, rng) -> None:
        """Without T0 in the preset the gate does not depend on T0."""
        module = GatedCrossScaleInteraction(embed_dim=8, gate='ca', rng=rng)
        t2 = Tensor(rng.normal(size=(1, 8, 2, 2)))
        f_cs = Tensor(rng.normal(size=(1, 8, 2, 2)))
        a = module.gate(t2, f_cs, t0=Tensor(np.zeros((1, 8, 2, 2)))).data
        b = module.gate(t2, f_cs, t0=Tensor(np.ones((1, 8, 2, 2)))).data
        np.testing.assert_array_equal(a, b)
        assert np.all((a > 0) & (a < 1))

    def test_unit_gate_adds_f_cs(self, rng) -> None:
        module = GatedCrossScaleInteraction(embed_dim=8, gate=UNIT_GATE, rng=rng)
        assert not hasattr(module, 'w_t')
        t2 = Tensor(rng.normal(size=(2, 8, 2, 2)))
        t3, g, readout = module(t2, _buffer(rng), t2)
        np.testing.assert_array_equal(g.data, 1.0)
        np.testing.assert_allclose(t3.data, t2.data + readout.f_cs.data)
        assert readout.tb is None


def test_logit_head_upsamples(rng) -> None:
    """Head logits come back at input resolution."""
    head = LogitHead(embed_dim=8, num_classes=6, rng=rng)
    out = coarse_logits(head, Tensor(rng.normal(size=(2, 8, 2, 2))), 32, 32)
    assert out.shape == (2, 6, 32, 32)


class TestCrossScaleReadout:

    def test_constant_values_give_constant_readout(self, rng) -> None:
        """Attention rows sum to one, so identical value tokens come back unchanged everywhere."""
        module = GatedCrossScaleInteraction(embed_dim=8, rng=rng)
        value = rng.normal(size=8)
        buffer = StructuralBuffer(keys=Tensor(rng.normal(size=(2, 16, 8))),
                                  values=Tensor(np.broadcast_to(value, (2, 16, 8)).copy()), height=4, width=4)
        f_cs = module.cross_scale_attention(Tensor(rng.normal(size=(2, 8, 2, 2))), buffer).f_cs.data
        np.testing.assert_allclose(f_cs, np.broadcast_to(value[None, :, None, None], f_cs.shape), atol=1e-12)

    def test_saturated_keys_select_one_value_token(self, rng) -> None:
        """Every query is e_0; key 0 is 100 e_0 and key 1 is -100 e_0, so attention is one-hot on token 0."""
        module = GatedCrossScaleInteraction(embed_dim=2, key_dim=2, rng=rng)
        module.query_proj.weight.assign(np.zeros((2, 2)))
        module.query_proj.bias.assign(np.array([1.0, 0.0]))
        keys = np.array([[[100.0, 0.0], [-100.0, 0.0]]])
        values = np.array([[[3.0, -1.0], [7.0, 5.0]]])
        buffer = StructuralBuffer(keys=Tensor(keys), values=Tensor(values), height=1, width=2)
        readout = module.cross_scale_attention(Tensor(rng.normal(size=(1, 2, 1, 2))), buffer)
        np.testing.assert_allclose(readout.attention.data, [[[1.0, 0.0], [1.0, 0.0]]], atol=1e-12)
        np.testing.assert_allclose(readout.f_cs.data[0, :, 0, 0], [3.0, -1.0], atol=1e-12)
        np.testing.assert_allclose(readout.f_cs.data[0, :, 0, 1], [3.0, -1.0], atol=1e-12)

    @pytest.mark.parametrize('name', list(GATE_PRESETS))
    def test_correction_is_bounded_by_readout(self, name, rng) -> None:
        """``g`` lies in (0, 1), so ``|T3 - T2| <= |F_cs|`` elementwise."""
        module = GatedCrossScaleInteraction(embed_dim=8, gate=name, rng=rng)
        t2 = Tensor(rng.normal(size=(2, 8, 2, 2)))
        t3, g, readout = module(t2, _buffer(rng), Tensor(rng.normal(size=(2, 8, 2, 2))))
        assert np.all((g.data > 0) & (g.data < 1))
        assert np.all(np.abs(t3.data - t2.data) <= np.abs(readout.f_cs.data) + 1e-12)
