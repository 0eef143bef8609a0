import math
import random

import pytest
import torch

from csd.corpus import (
    Conversation,
    Corpus,
    CSLabel,
    EmotionLabel,
    Role,
    StrategyLabel,
    Utterance,
    synthesize_corpus,
    tokenize,
)
from csd.lexicons import (
    ExtractorConfig,
    LexiconSentimentExtractor,
    TfidfKeywordExtractor,
    build_dictionaries,
    builtin_va_lexicon,
    emotion_intensity,
    keyword_intensity,
)
from csd.masking import CLS, SEP, EMOTION_LAMBDAS, MaskSchedule
from csd.model import ModelConfig, Vocabulary, label_from_token, label_token
from csd.training import (
    AblationConfig,
    LengthMismatch,
    LossWeights,
    attention_targets,
    build_decoder_input,
    decoder_training_pairs,
    joint_loss,
    loss_emotion,
    loss_generation,
    loss_keyword,
    pretrain_encoder,
    train_classifiers,
    train_decoder,
)


def utt(role, text, emo=EmotionLabel.NONE, cs=CSLabel.NONE, strategy=StrategyLabel.NONE):
    return Utterance(role=role, text=text, cs=cs, emo=emo, strategy=strategy)


# ---------------------------------------------------------------------------
# losses


def test_loss_generation_prob_one_is_zero():
    logits = torch.tensor([[100.0, 0.0, 0.0]])
    target = torch.tensor([0])
    assert float(loss_generation(logits, target)) == pytest.approx(0.0, abs=1e-6)


def test_loss_generation_matches_hand_nll():
    logits = torch.tensor([[1.0, 2.0, 3.0], [0.5, 0.5, 0.5]])
    targets = torch.tensor([2, 0])
    hand = 0.0
    for row, t in zip(logits, targets):
        z = torch.logsumexp(row, dim=0)
        hand += float(z - row[t])
    assert float(loss_generation(logits, targets)) == pytest.approx(hand, abs=1e-6)


def test_loss_generation_length_mismatch():
    with pytest.raises(LengthMismatch):
        loss_generation(torch.randn(3, 5), torch.tensor([1, 2]))


def test_mse_losses():
    a = torch.tensor([0.2, 0.8])
    assert float(loss_emotion(a, a)) == 0.0
    eta = torch.tensor([0.4, 0.4])
    assert float(loss_emotion(a, eta)) == pytest.approx((0.04 + 0.16) / 2, abs=1e-7)
    assert float(loss_keyword(a, eta)) == pytest.approx((0.04 + 0.16) / 2, abs=1e-7)
    with pytest.raises(LengthMismatch):
        loss_emotion(torch.tensor([0.1]), torch.tensor([0.1, 0.2]))
    with pytest.raises(LengthMismatch):
        loss_emotion(torch.tensor([]), torch.tensor([]))


def test_joint_loss_linearity():
    g, e, k = torch.tensor(2.0), torch.tensor(3.0), torch.tensor(4.0)
    w = LossWeights(1.0, 0.5, 0.25)
    assert float(joint_loss(g, e, k, w)) == pytest.approx(2 + 1.5 + 1.0)
    w2 = LossWeights(2.0, 1.0, 0.5)
    assert float(joint_loss(g, e, k, w2)) == pytest.approx(2 * float(joint_loss(g, e, k, w)))
    with pytest.raises(ValueError):
        LossWeights(-1.0, 0.5, 0.5)


# ---------------------------------------------------------------------------
# ablations


def test_ablation_from_name():
    full = AblationConfig.from_name("full")
    assert full.append_label_tokens and full.splice_classifier_states
    ca = AblationConfig.from_name("ca")
    assert not ca.append_label_tokens and not ca.splice_classifier_states
    il = AblationConfig.from_name("il")
    assert il.append_label_tokens and not il.splice_classifier_states
    assert not AblationConfig.from_name("nm").use_progressive_mask
    assert not AblationConfig.from_name("al").use_attention_loss
    with pytest.raises(ValueError):
        AblationConfig.from_name("xx")


# ---------------------------------------------------------------------------
# decoder input assembly


def test_build_decoder_input_layout():
    utts = [
        utt(Role.SPEAKER, "你好", emo=EmotionLabel.HAPPINESS, cs=CSLabel.INQUIRY,
            strategy=StrategyLabel.QUESTION),
        utt(Role.LISTENER, "嗯嗯"),
    ]
    labels = [(u.emo, u.cs, u.strategy) for u in utts]
    built = build_decoder_input(utts, labels, max_len=64)
    toks = built.tokens
    assert toks[0] == CLS
    assert toks[1:3] == ["你", "好"]
    assert toks[3] == label_token("emotion", EmotionLabel.HAPPINESS)
    assert toks[4] == label_token("cs", CSLabel.INQUIRY)
    assert toks[5] == label_token("strategy", StrategyLabel.QUESTION)
    assert toks[6] == SEP
    slot = built.slots[0]
    assert slot.span == (1, 3)
    assert slot.label_positions == {"emo": 3, "cs": 4, "str": 5}
    # label tokens decode back to the label triple
    assert label_from_token(toks[3]) == ("emotion", EmotionLabel.HAPPINESS)
    assert label_from_token(toks[4]) == ("cs", CSLabel.INQUIRY)
    assert label_from_token(toks[5]) == ("strategy", StrategyLabel.QUESTION)


def test_build_decoder_input_no_labels():
    utts = [utt(Role.SPEAKER, "你好"), utt(Role.LISTENER, "嗯")]
    labels = [(u.emo, u.cs, u.strategy) for u in utts]
    built = build_decoder_input(utts, labels, include_label_tokens=False)
    assert built.tokens == [CLS, "你", "好", SEP, "嗯", SEP]
    assert all(not s.label_positions for s in built.slots)


def test_build_decoder_input_truncates_oldest():
    utts = [
        utt(Role.SPEAKER, "一二三四五六七八"),
        utt(Role.LISTENER, "九十"),
        utt(Role.SPEAKER, "甲乙丙"),
    ]
    labels = [(u.emo, u.cs, u.strategy) for u in utts]
    built = build_decoder_input(utts, labels, max_len=18)
    kept = [s.utterance.text for s in built.slots]
    assert kept == ["九十", "甲乙丙"]
    assert len(built.tokens) <= 18


def test_build_decoder_input_single_utterance_too_long():
    utts = [utt(Role.SPEAKER, "一二三四五六七八九十")]
    labels = [(utts[0].emo, utts[0].cs, utts[0].strategy)]
    with pytest.raises(LengthMismatch):
        build_decoder_input(utts, labels, max_len=8)


def test_decoder_training_pairs():
    corpus = synthesize_corpus(17, 10)
    pairs = decoder_training_pairs(corpus)
    n_listener = sum(
        1 for u in corpus.utterances() if u.role is Role.LISTENER
    )
    assert len(pairs) == n_listener
    for context, response in pairs:
        assert response.role is Role.LISTENER
        assert context[-1].role is Role.SPEAKER


# ---------------------------------------------------------------------------
# attention targets


def test_attention_targets_hand_values():
    corpus = synthesize_corpus(6, 30)
    lex = builtin_va_lexicon()
    kw_ext = TfidfKeywordExtractor(corpus)
    utts = [utt(Role.SPEAKER, "我今天很开心"), utt(Role.LISTENER, "嗯嗯")]
    labels = [(u.emo, u.cs, u.strategy) for u in utts]
    built = build_decoder_input(utts, labels)
    att = attention_targets(built, lex, kw_ext, rescale_eta=True)
    start, end = att.span
    span_tokens = built.tokens[start:end]
    assert span_tokens == list("我今天很开心")
    for j, tok in enumerate(span_tokens):
        assert float(att.eta_emo[j]) == pytest.approx(
            emotion_intensity(tok, lex) / 2, abs=1e-12
        )
    kw_map = keyword_intensity(span_tokens, kw_ext, k=3)
    for j in range(len(span_tokens)):
        assert float(att.eta_kw[j]) == pytest.approx(kw_map[j], abs=1e-12)
    assert float(att.eta_kw.sum()) == pytest.approx(1.0, abs=1e-6)


def test_attention_targets_no_rescale():
    corpus = synthesize_corpus(6, 10)
    lex = builtin_va_lexicon()
    kw_ext = TfidfKeywordExtractor(corpus)
    utts = [utt(Role.SPEAKER, "真好"), utt(Role.LISTENER, "嗯嗯")]
    built = build_decoder_input(utts, [(u.emo, u.cs, u.strategy) for u in utts])
    att = attention_targets(built, lex, kw_ext, rescale_eta=False)
    expected = emotion_intensity("好", lex)
    assert expected > 0
    assert float(att.eta_emo.max()) == pytest.approx(expected, abs=1e-12)
    half = attention_targets(built, lex, kw_ext, rescale_eta=True)
    assert float(half.eta_emo.max()) == pytest.approx(expected / 2, abs=1e-12)


def test_attention_targets_most_recent_speaker():
    corpus = synthesize_corpus(6, 10)
    lex = builtin_va_lexicon()
    kw_ext = TfidfKeywordExtractor(corpus)
    utts = [
        utt(Role.SPEAKER, "早先的话"),
        utt(Role.LISTENER, "嗯"),
        utt(Role.SPEAKER, "最近的话"),
    ]
    built = build_decoder_input(utts, [(u.emo, u.cs, u.strategy) for u in utts])
    att = attention_targets(built, lex, kw_ext)
    start, end = att.span
    assert built.tokens[start:end] == list("最近的话")


# ---------------------------------------------------------------------------
# training phases (small but real runs)


def small_setup():
    corpus = synthesize_corpus(30, 16)
    lex = builtin_va_lexicon()
    emo_d, kw_d = build_dictionaries(
        corpus, ExtractorConfig(),
        LexiconSentimentExtractor(lex), TfidfKeywordExtractor(corpus),
    )
    cfg = ModelConfig(d_model=32, n_heads=4, cnn_channels=8, max_len=128)
    return corpus, lex, emo_d, kw_d, cfg


def test_pretrain_loss_decreases():
    corpus, _lex, emo_d, _kw, cfg = small_setup()
    sched = MaskSchedule(lambdas=EMOTION_LAMBDAS)
    model, vocab, losses = pretrain_encoder(
        corpus, emo_d, sched, cfg, seed=0, steps=30, batch_size=8
    )
    assert len(losses) == 30
    assert all(math.isfinite(l) for l in losses)
    assert sum(losses[-5:]) < sum(losses[:5])


def test_pretrain_deterministic():
    corpus, _lex, emo_d, _kw, cfg = small_setup()
    sched = MaskSchedule(lambdas=EMOTION_LAMBDAS)
    _, _, l1 = pretrain_encoder(corpus, emo_d, sched, cfg, seed=3, steps=5)
    _, _, l2 = pretrain_encoder(corpus, emo_d, sched, cfg, seed=3, steps=5)
    assert l1 == l2


def test_train_classifiers_single_class_perfect():
    """Degenerate corpus where every utterance shares one label set."""
    convs = []
    rng = random.Random(0)
    texts = ["今天天气不错", "我刚吃过饭", "时间过得真快", "外面在下雨"]
    for _ in range(8):
        convs.append(Conversation((
            utt(Role.SPEAKER, rng.choice(texts)),
            utt(Role.LISTENER, rng.choice(texts)),
        )))
    corpus = Corpus(tuple(convs))
    _, _, emo_d, kw_d, cfg = small_setup()
    vocab = Vocabulary.build(corpus)
    sched = MaskSchedule()
    emo_enc, _, _ = pretrain_encoder(corpus, emo_d, sched, cfg, seed=0, vocab=vocab, steps=3)
    kw_enc, _, _ = pretrain_encoder(corpus, kw_d, sched, cfg, seed=0, vocab=vocab, steps=3)
    classifiers, acc = train_classifiers(
        corpus, emo_enc, kw_enc, cfg, vocab, seed=0, epochs=30, batch_size=8
    )
    assert set(classifiers) == {"emotion", "cs", "strategy"}
    assert all(a == 1.0 for a in acc.values())


def _decoder_run(seed, weights, ablation=AblationConfig(), steps=6):
    corpus, lex, _emo_d, _kw_d, cfg = small_setup()
    vocab = Vocabulary.build(corpus)
    torch.manual_seed(99)
    from csd.model import ClassifierModel

    classifiers = {
        t: ClassifierModel(cfg, vocab, t) for t in ("emotion", "cs", "strategy")
    }
    decoder, extra, report = train_decoder(
        corpus, classifiers, lex, cfg, vocab, seed=seed,
        ablation=ablation, weights=weights, steps=steps, batch_size=4,
    )
    return report


def test_joint_loss_identity_each_step():
    w = LossWeights(1.0, 0.5, 0.5)
    report = _decoder_run(seed=5, weights=w)
    for rec in report.steps:
        expected = w.gamma1 * rec["gen"] + w.gamma2 * rec["emo"] + w.gamma3 * rec["kw"]
        assert rec["total"] == pytest.approx(expected, rel=1e-6, abs=1e-9)


def test_zero_gamma_bit_identical_to_pure_mle():
    r1 = _decoder_run(seed=5, weights=LossWeights(1.0, 0.0, 0.0))
    r2 = _decoder_run(seed=5, weights=LossWeights(1.0, 0.5, 0.5),
                      ablation=AblationConfig.from_name("al"))
    assert [s["gen"] for s in r1.steps] == [s["gen"] for s in r2.steps]
    assert [s["total"] for s in r1.steps] == [s["total"] for s in r2.steps]
    assert all(s["emo"] == 0.0 and s["kw"] == 0.0 for s in r2.steps)


def test_train_report_save(tmp_path):
    report = _decoder_run(seed=1, weights=LossWeights(), steps=3)
    path = tmp_path / "report.jsonl"
    report.save(path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 4  # header + 3 steps
