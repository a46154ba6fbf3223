import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch import nn

from nsdial.encdec import DecoderStep, Encoder, EncoderOutput, attend, fuse, gate, vocab_distribution
from nsdial.kb import parse_kb
from nsdial.vocab import EOS_ID, OutputSpace, Vocab, build_vocabs


def _encoder():
    torch.manual_seed(0)
    return Encoder(vocab_size=20, emb_dim=6, hidden=5, dec_hidden=7).eval()


def test_encoder_state_count_and_shapes():
    enc = _encoder()
    out = enc([[5, 6, 7], [8]])
    assert out.states_proj.shape == (2, 4, 7)
    assert out.mask.tolist() == [[True] * 4, [True, True, False, False]]
    assert out.h_cls_proj.shape == (2, 7)
    assert torch.equal(out.h_cls_proj, out.states_proj[:, 0])


def test_encoder_deterministic_in_eval():
    enc = _encoder()
    a, b = enc([[5, 6, 7]]), enc([[5, 6, 7]])
    assert torch.equal(a.states_proj, b.states_proj)


def test_encoder_padding_does_not_change_states():
    enc = _encoder()
    alone = enc([[8, 9]])
    batched = enc([[8, 9], [1, 2, 3, 4, 5]])
    assert torch.allclose(alone.states_proj[0], batched.states_proj[0, :3], atol=1e-6)


def test_encoder_rejects_empty_history():
    with pytest.raises(ValueError):
        _encoder()([[]])


def _enc_out(states, mask=None):
    states = torch.as_tensor(states, dtype=torch.float32)
    if mask is None:
        mask = torch.ones(states.shape[:2], dtype=torch.bool)
    return EncoderOutput(states[:, 0], states, mask)


def test_attend_single_state_gets_all_weight():
    step = attend(torch.randn(1, 3), _enc_out(torch.randn(1, 1, 3)))
    assert step.attn.tolist() == [[1.0]]


def test_attend_orthogonal_query_is_uniform():
    states = torch.tensor([[[0.0, 1.0, 0.0], [0.0, 0.0, 2.0], [0.0, -3.0, 1.0]]])
    step = attend(torch.tensor([[1.0, 0.0, 0.0]]), _enc_out(states))
    assert torch.allclose(step.attn, torch.full((1, 3), 1 / 3))
    assert torch.allclose(step.context, torch.cat([step.h_dec, step.h_dec_attn], -1))


def test_attend_ignores_masked_positions():
    states = torch.randn(1, 3, 4)
    mask = torch.tensor([[True, True, False]])
    step = attend(torch.randn(1, 4), _enc_out(states, mask))
    assert step.attn[0, 2] == 0 and abs(float(step.attn.sum()) - 1) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 10_000))
def test_attention_weights_sum_to_one(L, B, seed):
    g = torch.Generator().manual_seed(seed)
    step = attend(torch.randn(B, 5, generator=g), _enc_out(torch.randn(B, L, 5, generator=g)))
    assert torch.allclose(step.attn.sum(-1), torch.ones(B), atol=1e-6)


def _step(H=3, B=2):
    h = torch.randn(B, H)
    a = torch.randn(B, H)
    return DecoderStep(h, a, torch.cat([h, a], -1), torch.ones(B, 1))


def test_vocab_distribution_zero_weights_uniform():
    U1 = nn.Linear(6, 4)
    nn.init.zeros_(U1.weight)
    nn.init.zeros_(U1.bias)
    p = vocab_distribution(_step(), U1)
    assert torch.allclose(p, torch.full((2, 4), 0.25))


def test_gate_uses_attended_state_first():
    U2 = nn.Linear(6, 1, bias=False)
    with torch.no_grad():
        U2.weight.copy_(torch.tensor([[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]]))
    st_ = _step()
    assert torch.allclose(gate(st_, U2).squeeze(-1), torch.sigmoid(st_.h_dec_attn.sum(-1)))


def _fuse_case():
    p_vocab = torch.tensor([[0.5, 0.3, 0.2]])
    p_kb = torch.tensor([[0.0, 1.0]])
    kb_to_out = torch.tensor([3, 4])
    return p_vocab, p_kb, kb_to_out


def test_fuse_gate_extremes():
    pv, pk, k2o = _fuse_case()
    assert torch.allclose(fuse(pv, pk, torch.ones(1, 1), k2o, 5), torch.tensor([[0.5, 0.3, 0.2, 0.0, 0.0]]))
    assert torch.allclose(fuse(pv, pk, torch.zeros(1, 1), k2o, 5), torch.tensor([[0.0, 0.0, 0.0, 0.0, 1.0]]))
    half = fuse(pv, pk, torch.full((1, 1), 0.5), k2o, 5)
    assert abs(float(half.sum()) - 1) < 1e-6


def test_fuse_zero_kb_mass_forces_vocab():
    pv, _, k2o = _fuse_case()
    out = fuse(pv, torch.zeros(1, 2), torch.zeros(1, 1), k2o, 5)
    assert torch.allclose(out[:, :3], pv)


def test_fuse_rejects_out_of_range():
    pv, _, k2o = _fuse_case()
    with pytest.raises(ValueError):
        fuse(pv, torch.tensor([[1.5, 0.0]]), torch.zeros(1, 1), k2o, 5)


def test_fuse_without_soft_switch_sums():
    pv, pk, k2o = _fuse_case()
    out = fuse(pv, pk, torch.zeros(1, 1), k2o, 5, soft_switch=False)
    assert torch.allclose(out, torch.tensor([[0.25, 0.15, 0.1, 0.0, 0.5]]))


def test_shared_surface_token_sums_both_channels():
    pv = torch.tensor([[0.4, 0.6]])
    pk = torch.tensor([[1.0]])
    out = fuse(pv, pk, torch.full((1, 1), 0.5), torch.tensor([1]), 3)
    assert torch.allclose(out, torch.tensor([[0.2, 0.8, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8), st.integers(1, 6), st.integers(0, 10_000))
def test_fuse_is_a_distribution(v, n, seed):
    g = torch.Generator().manual_seed(seed)
    pv = torch.softmax(torch.randn(3, v, generator=g), -1)
    pk = torch.softmax(torch.randn(3, n, generator=g), -1)
    gate_ = torch.rand(3, 1, generator=g)
    out = fuse(pv, pk, gate_, torch.arange(v, v + n), v + n)
    assert torch.allclose(out.sum(-1), torch.ones(3), atol=1e-6) and (out >= 0).all()


def test_output_space_routing():
    kb = parse_kb("cinema_a|shows|film_b\n")
    enc, space = build_vocabs([["hi", "cinema_a"]], [["it", "shows", "film_b", "."]], kb)
    assert "film_b" not in space.vocab and "shows" in space.vocab
    assert space.kb_to_out[kb.id("shows")] == space.vocab.stoi["shows"]
    ids = space.encode(["it", "shows", "film_b"])
    assert space.decode(ids) == ["it", "shows", "film_b"]
    assert space.kb_token(ids[2]) == kb.id("film_b")
    assert space.kb_token(ids[0]) is None
    assert "cinema_a" in enc and "film_b" in enc
    assert space.vocab.itos[EOS_ID] == "<eos>"


def test_vocab_unknown_maps_to_unk():
    v = Vocab(["a"])
    assert v.encode(["a", "zzz"]) == [5, 1]
    space = OutputSpace(v, parse_kb(""))
    assert space.size == len(v)
