import pytest
import torch

from csd.corpus import CSLabel, EmotionLabel, Role, StrategyLabel, Utterance
from csd.generation import (
    GenerationParams,
    ModelMissing,
    filter_logits,
    greedy_response,
    sample_response,
)
from csd.model import ModelBundle


def utt(role, text):
    return Utterance(role=role, text=text, cs=CSLabel.NONE,
                     emo=EmotionLabel.NONE, strategy=StrategyLabel.NONE)


def test_params_validation():
    GenerationParams()
    with pytest.raises(ValueError):
        GenerationParams(temperature=0.0)
    with pytest.raises(ValueError):
        GenerationParams(top_k=-1)
    with pytest.raises(ValueError):
        GenerationParams(top_p=0.0)
    with pytest.raises(ValueError):
        GenerationParams(top_p=1.5)
    with pytest.raises(ValueError):
        GenerationParams(max_new_tokens=0)


def test_filter_top_k_one_is_one_hot():
    logits = torch.tensor([1.0, 3.0, 2.0, 0.0])
    probs = filter_logits(logits, GenerationParams(top_k=1, top_p=1.0))
    assert probs.tolist() == [0.0, 1.0, 0.0, 0.0]


def test_filter_identity_settings_plain_softmax():
    logits = torch.tensor([0.3, -1.2, 2.5, 0.0])
    probs = filter_logits(
        logits, GenerationParams(temperature=1.0, top_k=0, top_p=1.0)
    )
    expected = torch.softmax(logits.to(torch.float64), dim=-1)
    assert torch.allclose(probs, expected, atol=1e-12)


def test_filter_temperature_sharpens():
    logits = torch.tensor([1.0, 0.0])
    cold = filter_logits(logits, GenerationParams(temperature=0.5, top_k=0, top_p=1.0))
    warm = filter_logits(logits, GenerationParams(temperature=2.0, top_k=0, top_p=1.0))
    assert float(cold[0]) > float(warm[0])
    # hand value: softmax([2, 0])
    assert float(cold[0]) == pytest.approx(
        torch.softmax(torch.tensor([2.0, 0.0]), 0)[0].item(), abs=1e-6
    )


def test_filter_top_p_hand_stepped():
    """Hand-stepped nucleus fixture.

    T=1, no top-k. probs sorted: 0.5, 0.3, 0.2.  top_p=0.6 keeps the first
    two (0.5 < 0.6 <= 0.8) and renormalizes to 0.625/0.375.
    """
    probs_in = torch.tensor([0.5, 0.3, 0.2])
    logits = torch.log(probs_in)
    out = filter_logits(logits, GenerationParams(temperature=1.0, top_k=0, top_p=0.6))
    assert float(out[0]) == pytest.approx(0.5 / 0.8, abs=1e-6)
    assert float(out[1]) == pytest.approx(0.3 / 0.8, abs=1e-6)
    assert float(out[2]) == 0.0


def test_filter_top_p_boundary_inclusive():
    probs_in = torch.tensor([0.5, 0.3, 0.2])
    logits = torch.log(probs_in)
    # exactly 0.5 cumulative -> keep only the first token
    out = filter_logits(logits, GenerationParams(temperature=1.0, top_k=0, top_p=0.5))
    assert out.tolist() == [1.0, 0.0, 0.0]


def test_filter_combined_topk_then_topp():
    probs_in = torch.tensor([0.4, 0.3, 0.2, 0.1])
    logits = torch.log(probs_in)
    # top_k=2 keeps {0.4, 0.3} -> renormalized by softmax to 4/7, 3/7;
    # top_p=0.5 then keeps just the first
    out = filter_logits(logits, GenerationParams(temperature=1.0, top_k=2, top_p=0.5))
    assert out.tolist() == [1.0, 0.0, 0.0, 0.0]


def test_filter_distribution_sums_to_one():
    torch.manual_seed(0)
    for _ in range(20):
        logits = torch.randn(50)
        probs = filter_logits(logits, GenerationParams())
        assert float(probs.sum()) == pytest.approx(1.0, abs=1e-9)
        assert (probs >= 0).all()


def test_sample_response_deterministic(tiny_bundle):
    context = [utt(Role.SPEAKER, "你最近去了哪里？")]
    params = GenerationParams(seed=11, max_new_tokens=12)
    t1, triple1 = sample_response(context, tiny_bundle, params)
    t2, triple2 = sample_response(context, tiny_bundle, params)
    assert t1 == t2
    assert triple1 == triple2
    emo, cs, strategy = triple1
    assert isinstance(emo, EmotionLabel)
    assert isinstance(cs, CSLabel)
    assert isinstance(strategy, StrategyLabel)


def test_sample_response_seed_changes_stream(tiny_bundle):
    context = [utt(Role.SPEAKER, "你最近去了哪里？")]
    outs = {
        sample_response(context, tiny_bundle, GenerationParams(seed=s, max_new_tokens=16))[0]
        for s in range(8)
    }
    assert len(outs) > 1  # random decoder: different seeds should diverge


def test_sample_response_replay_audit(tiny_bundle):
    """Every emitted token must lie in the filtered support at its step."""
    context = [utt(Role.SPEAKER, "今天天气不错")]
    params = GenerationParams(seed=3, max_new_tokens=20)
    _, _, audit = sample_response(context, tiny_bundle, params, return_audit=True)
    assert audit
    for choice, probs in audit:
        assert float(probs[choice]) > 0.0
        assert float(probs.sum()) == pytest.approx(1.0, abs=1e-9)


def test_sample_response_requires_context(tiny_bundle):
    with pytest.raises(ValueError):
        sample_response([], tiny_bundle, GenerationParams())


def test_sample_response_model_missing(tiny_bundle):
    broken = ModelBundle(
        cfg=tiny_bundle.cfg, vocab=tiny_bundle.vocab,
        classifiers={}, extra_encoder=tiny_bundle.extra_encoder,
        decoder=None,
    )
    with pytest.raises(ModelMissing):
        sample_response([utt(Role.SPEAKER, "你好")], broken, GenerationParams())


def test_greedy_response_deterministic(tiny_bundle):
    context = [utt(Role.SPEAKER, "你在哪里剪的头发？")]
    a = greedy_response(context, tiny_bundle, max_new_tokens=10)
    b = greedy_response(context, tiny_bundle, max_new_tokens=10)
    assert a == b


def test_generated_text_has_no_special_tokens(tiny_bundle):
    context = [utt(Role.SPEAKER, "你最近去了哪里？")]
    for seed in range(5):
        text, _ = sample_response(
            context, tiny_bundle, GenerationParams(seed=seed, max_new_tokens=24)
        )
        assert "[" not in text and "]" not in text
        assert "<" not in text and ">" not in text
