import numpy as np
import pytest
import torch

from promptloc.nn import LocalizerNet, ModelConfig
from promptloc.nn.conformer import Conformer, ConformerBlock, ConformerConfig, MultiHeadAttention
from promptloc.nn.fusion import AblationFuser, PromptFusion, broadcast_visual, fuse
from promptloc.nn.mask import DoAHead, MaskGenerator, apply_mask, assemble_clean
from promptloc.nn.matching import PromptAligner, SemanticSpatialMatching, resample_index
from promptloc.nn.ssm import ConMambaLayer, SelectiveSSM, selective_scan, selective_scan_torch


def _scan_inputs(dtype=torch.float64, S=2, n=9, d=4, N=3, seed=0):
    g = torch.Generator().manual_seed(seed)
    u = torch.randn(S, n, d, generator=g, dtype=dtype)
    delta = torch.rand(S, n, d, generator=g, dtype=dtype) * 0.5 + 0.01
    A = -(torch.rand(d, N, generator=g, dtype=dtype) * 5 + 0.5)
    B = torch.randn(S, n, N, generator=g, dtype=dtype)
    C = torch.randn(S, n, N, generator=g, dtype=dtype)
    return u, delta, A, B, C


# ---------------------------------------------------------------- ssm

def test_scan_matches_torch_reference():
    ins = _scan_inputs()
    torch.testing.assert_close(selective_scan(*ins), selective_scan_torch(*ins), rtol=1e-12, atol=1e-12)


def test_scan_gradcheck():
    ins = [x.requires_grad_(True) for x in _scan_inputs(S=1, n=5, d=2, N=2)]
    assert torch.autograd.gradcheck(selective_scan, ins, eps=1e-6, atol=1e-7)


def test_scan_grads_match_autograd_reference():
    ins = [x.requires_grad_(True) for x in _scan_inputs(seed=2)]
    w = torch.randn(2, 9, 4, dtype=torch.float64)
    g1 = torch.autograd.grad((selective_scan(*ins) * w).sum(), ins)
    g2 = torch.autograd.grad((selective_scan_torch(*ins) * w).sum(), ins)
    for a, b in zip(g1, g2):
        torch.testing.assert_close(a, b, rtol=1e-10, atol=1e-10)


def test_scan_is_causal():
    u, delta, A, B, C = _scan_inputs()
    y = selective_scan(u, delta, A, B, C)
    u2 = u.clone()
    u2[:, 5:] += 1.0
    y2 = selective_scan(u2, delta, A, B, C)
    assert torch.equal(y[:, :5], y2[:, :5])
    assert not torch.allclose(y[:, 5:], y2[:, 5:])


def test_ssm_A_negative_and_shapes():
    ssm = SelectiveSSM(6, 4)
    assert (ssm.A < 0).all()
    assert ssm(torch.randn(2, 7, 6)).shape == (2, 7, 6)
    layer = ConMambaLayer(6, 4, bidirectional=True)
    assert layer(torch.randn(3, 5, 6)).shape == (3, 5, 6)


def test_conmamba_causal_unidirectional():
    layer = ConMambaLayer(6, 4).double()
    x = torch.randn(1, 8, 6, dtype=torch.float64)
    x2 = x.clone()
    x2[:, 6:] = 0
    with torch.no_grad():
        assert torch.allclose(layer(x)[:, :6], layer(x2)[:, :6])


# ---------------------------------------------------------------- conformer / fusion

def test_conformer_config_validation():
    with pytest.raises(ValueError):
        ConformerConfig(model_dim=10, heads=4)
    with pytest.raises(ValueError):
        ConformerConfig(model_dim=8, heads=2, conv_kernel=4)


def test_attention_rows_sum_to_one():
    attn = MultiHeadAttention(8, 2)
    out = attn(torch.randn(3, 5, 8), torch.randn(3, 7, 8))
    assert out.shape == (3, 5, 8)
    assert attn.last_weights.shape == (3, 2, 5, 7)
    torch.testing.assert_close(attn.last_weights.sum(-1), torch.ones(3, 2, 5))


def test_conformer_block_zeroed_is_layernorm():
    block = ConformerBlock(8, 2)
    block.zero_residual_branches()
    x = torch.randn(2, 4, 8)
    torch.testing.assert_close(block(x), block.out_norm(x))


def test_prompt_fusion_shapes():
    fusion = PromptFusion(d_audio=4, d_visual=4, heads=2, layers=1)
    assert fusion.out_dim == 8
    assert fusion(torch.randn(2, 4), torch.randn(2, 3, 4)).shape == (2, 3, 8)
    assert fuse(torch.randn(3, 4), torch.randn(3, 4), fusion).shape == (3, 8)
    with pytest.raises(ValueError):
        fusion(torch.randn(2, 2, 4), torch.randn(2, 3, 4))
    assert broadcast_visual(torch.randn(2, 5), 3).shape == (2, 3, 5)
    with pytest.raises(ValueError):
        broadcast_visual(torch.randn(5), 0)
    assert Conformer(ConformerConfig(8, 2, layer_count=3))(torch.randn(1, 2, 8)).shape == (1, 2, 8)


def test_film_neutral_is_identity():
    film = AblationFuser("film", 6, 6)
    film.set_neutral()
    spatial = torch.randn(2, 3, 4, 6)
    torch.testing.assert_close(film(torch.randn(2, 3, 6), spatial), spatial)


def test_ablation_fuser_validation():
    assert AblationFuser("concat", 5, 6)(torch.randn(2, 3, 5), torch.randn(2, 3, 4, 6)).shape == (2, 3, 4, 6)
    with pytest.raises(ValueError):
        AblationFuser("sum", 6, 6)
    with pytest.raises(ValueError):
        AblationFuser("film", 6, 6, d_out=4)


# ---------------------------------------------------------------- matching / mask / head

def test_resample_index():
    assert resample_index(1, 5).tolist() == [0] * 5
    assert resample_index(2, 4).tolist() == [0, 0, 1, 1]
    aligner = PromptAligner(8, 4)
    assert aligner(torch.randn(2, 2, 8), 14).shape == (2, 14, 4)


def test_matching_depends_on_prompt():
    torch.manual_seed(0)
    ssm = SemanticSpatialMatching(8)
    spatial = torch.randn(1, 4, 3, 8)
    a = ssm(torch.randn(1, 4, 8), spatial)
    b = ssm(torch.randn(1, 4, 8), spatial)
    assert a.shape == (1, 4, 3, 8)
    assert not torch.allclose(a, b)


def test_apply_mask_and_assemble():
    x = torch.randn(2, 2, 3, 4)
    m = torch.rand(2, 3, 4)
    torch.testing.assert_close(apply_mask(x, m)[:, 1], x[:, 1] * m)
    with pytest.raises(ValueError):
        apply_mask(x, torch.rand(2, 4, 3))
    clean = assemble_clean(x, -x)
    assert clean.shape == (2, 4, 3, 4)
    assert torch.equal(clean[:, 2:], -x)
    with pytest.raises(ValueError):
        assemble_clean(x, x[..., :2])


def test_mask_generator_range_and_head_posterior():
    gen = MaskGenerator(8, 4, 1)
    m = gen(torch.randn(2, 3, 5, 8) * 10)
    assert m.shape == (2, 3, 5) and m.min() >= 0 and m.max() <= 1
    head = DoAHead(5, 4, 16)
    post = head(torch.randn(2, 4, 3, 5))
    assert post.shape == (2, 180)
    torch.testing.assert_close(post.sum(-1), torch.ones(2))


# ---------------------------------------------------------------- full model

def _inputs(cfg, B=2, T=6):
    return (torch.randn(B, 2, T, cfg.n_freq), torch.randn(B, 2, T, cfg.n_freq),
            torch.randn(B, cfg.d_visual), torch.randn(B, 2, cfg.d_audio))


@pytest.mark.parametrize("alignment", ["matching", "concat", "film"])
def test_model_forward_all_alignments(alignment):
    cfg = ModelConfig.desk(n_freq=10, alignment=alignment)
    out = LocalizerNet(cfg)(*_inputs(cfg))
    assert out["posterior"].shape == (2, 180)
    assert out["mask"].shape == (2, 6, 10)
    assert out["x_m"].shape == (2, 2, 6, 10)


def test_prompt_none_ignores_prompt():
    torch.manual_seed(1)
    cfg = ModelConfig.desk(n_freq=10, prompt_mode="none")
    model = LocalizerNet(cfg).eval()
    x_r, x_i, fv, fa = _inputs(cfg)
    with torch.no_grad():
        a = model(x_r, x_i, fv, fa)["posterior"]
        b = model(x_r, x_i, torch.randn_like(fv), torch.randn_like(fa))["posterior"]
    assert torch.equal(a, b)


def test_prompt_av_uses_prompt():
    torch.manual_seed(1)
    cfg = ModelConfig.desk(n_freq=10)
    model = LocalizerNet(cfg).eval()
    x_r, x_i, fv, fa = _inputs(cfg)
    with torch.no_grad():
        assert not torch.allclose(model(x_r, x_i, fv, fa)["mask"], model(x_r, x_i, -fv, fa)["mask"])


def test_mask_imag_option():
    torch.manual_seed(2)
    cfg = ModelConfig.desk(n_freq=10, mask_imag=True)
    model = LocalizerNet(cfg).eval()
    x_r, x_i, fv, fa = _inputs(cfg)
    with torch.no_grad():
        a = model(x_r, x_i, fv, fa)["posterior"]
        model.cfg.mask_imag = False
        b = model(x_r, x_i, fv, fa)["posterior"]
    assert not torch.allclose(a, b)


def test_model_config_round_trip_and_presets():
    cfg = ModelConfig.desk(n_freq=33)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert ModelConfig.from_dict({**cfg.to_dict(), "unknown": 1}) == cfg
    full = ModelConfig()
    assert (full.d_hidden, full.d_state, full.freq_layers, full.temporal_layers) == (32, 16, 2, 2)


def test_model_gradients_reach_every_parameter():
    cfg = ModelConfig.desk(n_freq=10)
    model = LocalizerNet(cfg)
    out = model(*_inputs(cfg))
    (out["posterior"][:, 3].sum() + out["x_m"].pow(2).mean()).backward()
    missing = [n for n, p in model.named_parameters() if p.grad is None or not torch.isfinite(p.grad).all()]
    assert missing == []


def test_model_deterministic_given_seed():
    def build():
        torch.manual_seed(5)
        return LocalizerNet(ModelConfig.desk(n_freq=10))

    a, b = build(), build()
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and torch.equal(pa, pb)
    assert np.isclose(sum(p.numel() for p in a.parameters()), sum(p.numel() for p in b.parameters()))
