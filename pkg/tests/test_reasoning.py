import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from nsdial.kb import TokenKind, Triple, parse_kb
from nsdial.reasoning import (
    ReasonerConfig,
    ReasoningEngine,
    ScoreMode,
    belief,
    belief_score,
    build_proof_tree,
    decode_vector,
    kb_distribution,
    kb_log_distribution,
    kb_matrix,
    kind_mask,
    nearest_triples,
)

KB_TEXT = "a|r|b\nb|s|c\nc|r|d\n"


def _setup(E=4, seed=0):
    torch.manual_seed(seed)
    kb = parse_kb(KB_TEXT)
    emb = torch.randn(kb.n, E)
    triples = torch.tensor([list(t) for t in kb.triples])
    return kb, emb, kb_matrix(emb, triples)


def test_expand_inherits_and_shares_bridge():
    eng = ReasoningEngine(4, 6)
    root = torch.randn(2, 3, 4)
    left, right = eng.expand(root)
    assert torch.equal(left[:, 0], root[:, 0]) and torch.equal(right[:, 2], root[:, 2])
    assert torch.equal(left[:, 2], right[:, 0])


@pytest.mark.parametrize("D", [1, 2, 3, 5])
def test_levels_have_two_to_the_l_nodes(D):
    eng = ReasoningEngine(4, 6)
    levels = eng.build_levels(torch.randn(3, 3, 4), D)
    assert [lvl.shape[-3] for lvl in levels] == [2**l for l in range(D + 1)]


def test_level_chain_links_head_to_tail():
    eng = ReasoningEngine(4, 6)
    root = torch.randn(3, 4)
    leaves = eng.build_levels(root, 2)[-1]
    assert torch.equal(leaves[0, 0], root[0]) and torch.equal(leaves[-1, 2], root[2])
    for j in range(3):
        assert torch.equal(leaves[j, 2], leaves[j + 1, 0])


def test_reasoner_config_bounds():
    with pytest.raises(ValueError):
        ReasonerConfig(depth=0)
    with pytest.raises(ValueError):
        ReasonerConfig(depth=6)
    assert ReasonerConfig(2, "fixed_depth").mode is ScoreMode.FIXED_DEPTH


def test_exact_leaves_give_alpha_one():
    kb, emb, kbm = _setup()
    leaves = torch.stack([kbm[0].view(3, 4), kbm[2].view(3, 4)])
    bt = belief([emb[[0, 1, 2]].unsqueeze(0), leaves], kbm, ScoreMode.FIXED_DEPTH)
    assert float(bt.alpha) == pytest.approx(1.0, abs=1e-6)


def test_ln2_leaf_gives_half():
    kb, emb, kbm = _setup()
    offset = torch.zeros(12)
    offset[0] = math.log(2.0)
    # nudge far from every other triple so the nearest stays triple 0
    leaves = torch.stack([kbm[1], kbm[0] + offset]).view(2, 3, 4)
    bt = belief([leaves[:1], leaves], kbm, ScoreMode.FIXED_DEPTH)
    d0 = torch.cdist(leaves.view(2, 12), kbm).min(-1).values
    assert float(d0[1]) == pytest.approx(math.log(2), abs=1e-6)
    assert float(bt.alpha) == pytest.approx(0.5, abs=1e-6)


def test_nearest_triples_matches_direct_distances():
    kb, emb, kbm = _setup()
    x = torch.randn(50, 12)
    d, i = nearest_triples(x, kbm)
    ref = torch.cdist(x.double(), kbm.double())
    assert torch.equal(i, ref.argmin(-1))
    assert torch.allclose(d.double(), ref.min(-1).values, atol=1e-5)


def test_exact_match_has_zero_gradient():
    kb, emb, kbm = _setup()
    x = kbm[1].clone().requires_grad_(True)
    d, _ = nearest_triples(x.unsqueeze(0), kbm)
    d.sum().backward()
    assert torch.isfinite(x.grad).all() and x.grad.abs().max() < 1e-6


def test_empty_kb_raises():
    with pytest.raises(ValueError):
        nearest_triples(torch.randn(2, 6), torch.zeros(0, 6))


def test_decode_vector_roundtrip_and_filter():
    kb, emb, _ = _setup()
    assert decode_vector(emb, emb).tolist() == list(range(kb.n))
    rel = kind_mask(kb, TokenKind.RELATION)
    got = decode_vector(emb, emb, rel)
    assert all(kb.kind(int(t)) is TokenKind.RELATION for t in got)


def test_decode_vector_small_noise():
    kb, emb, _ = _setup()
    gaps = torch.cdist(emb, emb) + torch.eye(kb.n) * 1e9
    radius = 0.5 * float(gaps.min())
    g = torch.Generator().manual_seed(0)
    for _ in range(100):
        noise = torch.randn(kb.n, emb.shape[1], generator=g)
        noise = noise / noise.norm(dim=-1, keepdim=True) * radius * 0.99
        assert decode_vector(emb + noise, emb).tolist() == list(range(kb.n))


def test_decode_ties_go_to_smaller_id():
    emb = torch.tensor([[1.0, 0.0], [-1.0, 0.0]])
    assert int(decode_vector(torch.zeros(2), emb)) == 0


def test_kb_distribution_rules():
    assert kb_distribution([3], [1.0], 5) == [0, 0, 0, 1.0, 0]
    assert kb_distribution([1, 1], [0.3, 0.7], 3)[1] == 0.7
    assert kb_distribution([], [], 3) == [0.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        kb_distribution([1], [0.3, 0.2], 3)
    with pytest.raises(ValueError):
        kb_distribution([1], [1.2], 3)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 7), st.floats(0.0, 1.0)), max_size=10))
def test_log_distribution_matches_symbolic(pairs):
    cands = [c for c, _ in pairs]
    alphas = [a for _, a in pairs]
    ref = kb_distribution(cands, alphas, 8)
    if not pairs:
        return
    with torch.no_grad():
        la = torch.log(torch.tensor(alphas, dtype=torch.float64))
        got = kb_log_distribution(torch.tensor(cands), la, 8).exp()
    assert torch.allclose(got, torch.tensor(ref, dtype=torch.float64))


def test_best_depth_catches_one_hop_fact():
    kb, emb, kbm = _setup()
    eng = ReasoningEngine(4, 6)
    root = kbm[0].view(3, 4)  # a true KB triple
    levels = eng.build_levels(root, 2)
    with torch.no_grad():
        fixed = belief(levels, kbm, ScoreMode.FIXED_DEPTH)
        best = belief(levels, kbm, ScoreMode.BEST_DEPTH)
    assert float(best.alpha) == pytest.approx(1.0) and int(best.best_depth) == 0
    assert float(best.alpha) >= float(fixed.alpha)


def test_proof_tree_symbolic():
    kb, emb, _ = _setup()
    eng = ReasoningEngine(4, 6)
    cfg = ReasonerConfig(1)
    tree = build_proof_tree(eng, emb[[0, 1, 2]], cfg, emb, kb, root_triple=Triple(0, 1, 2))
    assert len(tree.nodes()) == 3 and len(tree.leaves) == 2
    assert tree.root.decoded == Triple(0, 1, 2)
    assert tree.leaves[0].decoded.head == 0 and tree.leaves[1].decoded.tail == 2
    assert tree.leaves[0].decoded.tail == tree.leaves[1].decoded.head  # shared bridge
    score = belief_score(tree, kb, emb, cfg)
    assert 0 < score.alpha <= 1 and score.best_depth in (0, 1)
    # the root is the KB triple a-r-b, so best-depth scoring finds it exactly
    assert score.alpha == pytest.approx(1.0) and score.best_depth == 0
    fixed = belief_score(tree, kb, emb, ReasonerConfig(1, "fixed_depth"))
    assert len(fixed.per_leaf_best) == 2 and fixed.alpha <= score.alpha
