import math

import pytest

from csd.corpus import synthesize_corpus, tokenize
from csd.lexicons import (
    ExtractorConfig,
    KnowledgeDict,
    LexiconParseError,
    LexiconRangeError,
    LexiconSentimentExtractor,
    TfidfKeywordExtractor,
    VALexicon,
    build_dictionaries,
    builtin_va_lexicon,
    emotion_intensity,
    extract_keywords,
    keyword_intensity,
    load_dictionaries,
    load_va_lexicon,
    save_dictionaries,
)


def write(tmp_path, name, content):
    p = tmp_path / name
    p.write_text(content, encoding="utf-8")
    return p


def test_load_lexicon_basic(tmp_path):
    p = write(tmp_path, "va.tsv", "#r_min=1\tr_max=9\n开心\t7.8\t6.4\n难过\t2.4\t5.8\n")
    lex = load_va_lexicon(p)
    assert lex.entries["开心"] == (7.8, 6.4)
    assert (lex.r_min, lex.r_max) == (1.0, 9.0)


def test_load_lexicon_default_range(tmp_path):
    p = write(tmp_path, "va.tsv", "好\t6.9\t4.6\n")
    lex = load_va_lexicon(p)
    assert (lex.r_min, lex.r_max) == (1.0, 9.0)


def test_load_lexicon_empty_with_header(tmp_path):
    p = write(tmp_path, "va.tsv", "#r_min=0\tr_max=1\n")
    lex = load_va_lexicon(p)
    assert lex.entries == {}
    assert lex.r_max == 1.0


def test_load_lexicon_bad_field_count(tmp_path):
    p = write(tmp_path, "va.tsv", "好\t6.9\n")
    with pytest.raises(LexiconParseError) as exc:
        load_va_lexicon(p)
    assert exc.value.row == 1


def test_load_lexicon_non_numeric(tmp_path):
    p = write(tmp_path, "va.tsv", "好\t6.9\t4.6\n坏\tx\t4.0\n")
    with pytest.raises(LexiconParseError) as exc:
        load_va_lexicon(p)
    assert exc.value.row == 2


def test_load_lexicon_out_of_range(tmp_path):
    p = write(tmp_path, "va.tsv", "#r_min=1\tr_max=9\n好\t9.5\t4.0\n")
    with pytest.raises(LexiconRangeError):
        load_va_lexicon(p)


def test_load_lexicon_duplicate_last_wins(tmp_path):
    p = write(tmp_path, "va.tsv", "好\t6.0\t4.0\n好\t7.0\t5.0\n")
    assert load_va_lexicon(p).entries["好"] == (7.0, 5.0)


def test_emotion_intensity_endpoints():
    lex = VALexicon(entries={"lo": (1.0, 1.0), "hi": (9.0, 9.0), "mid": (5.0, 5.0)})
    assert emotion_intensity("lo", lex) == pytest.approx(0.0, abs=1e-12)
    assert emotion_intensity("hi", lex) == pytest.approx(2.0, abs=1e-12)
    assert emotion_intensity("mid", lex) == pytest.approx(1.0, abs=1e-12)
    assert emotion_intensity("missing", lex) == 0.0


def test_emotion_intensity_hand_value():
    lex = builtin_va_lexicon()
    # (7.8 + 6.4 - 2*1) / (9 - 1) = 12.2 / 8
    assert emotion_intensity("开心", lex) == pytest.approx(12.2 / 8, abs=1e-12)


def test_sentiment_extractor_polarity_sign():
    lex = builtin_va_lexicon()
    ext = LexiconSentimentExtractor(lex)
    assert ext.score("我很开心") > 0
    assert ext.score("我很难过") < 0
    assert ext.score("这是桌子") == 0.0


def test_sentiment_extractor_hand_value():
    lex = VALexicon(entries={"甲": (7.0, 5.0), "乙": (3.0, 5.0)})
    ext = LexiconSentimentExtractor(lex)
    # offsets: (7-5)/4 = 0.5 and (3-5)/4 = -0.5 -> mean 0
    assert ext.score("甲乙") == pytest.approx(0.0, abs=1e-12)
    assert ext.score("甲") == pytest.approx(0.5, abs=1e-12)


def test_tfidf_scores_and_topk():
    corpus = synthesize_corpus(3, 30)
    ext = TfidfKeywordExtractor(corpus)
    utt = next(corpus.utterances())
    kws = extract_keywords(utt.text, 3, ext)
    assert 1 <= len(kws) <= 3
    scores = [s for _, s in kws]
    assert scores == sorted(scores, reverse=True)
    # hand-check one score: tf * idf
    tokens = tokenize(utt.text)
    content = [t for t in tokens if t not in ext.stopwords]
    word, score = kws[0]
    tf = content.count(word) / len(content)
    idf = math.log((1 + ext.n_docs) / (1 + ext.df[word])) + 1.0
    assert score == pytest.approx(tf * idf, abs=1e-12)


def test_extract_keywords_short_text():
    corpus = synthesize_corpus(3, 5)
    ext = TfidfKeywordExtractor(corpus)
    kws = extract_keywords("走", 5, ext)
    assert [w for w, _ in kws] == ["走"]


def test_extract_keywords_stopwords_only():
    corpus = synthesize_corpus(3, 5)
    ext = TfidfKeywordExtractor(corpus)
    assert extract_keywords("的了是", 3, ext) == []


def test_extract_keywords_bad_k():
    corpus = synthesize_corpus(3, 5)
    ext = TfidfKeywordExtractor(corpus)
    with pytest.raises(ValueError):
        extract_keywords("好", 0, ext)


def test_keyword_intensity_softmax_matches_hand():
    corpus = synthesize_corpus(4, 30)
    ext = TfidfKeywordExtractor(corpus)
    utt_tokens = tokenize(next(corpus.utterances()).text)
    out = keyword_intensity(utt_tokens, ext, k=3)
    assert set(out) == set(range(len(utt_tokens)))
    positive = {i: v for i, v in out.items() if v > 0}
    assert positive, "expected at least one keyword position"
    assert sum(positive.values()) == pytest.approx(1.0, abs=1e-9)
    # hand softmax over the same positions
    scores = ext.score_tokens(utt_tokens)
    vals = [scores[utt_tokens[i]] for i in sorted(positive)]
    exps = [math.exp(v) for v in vals]
    z = sum(exps)
    for i, e in zip(sorted(positive), exps):
        assert out[i] == pytest.approx(e / z, abs=1e-9)


def test_keyword_intensity_no_keywords():
    corpus = synthesize_corpus(4, 5)
    ext = TfidfKeywordExtractor(corpus)
    out = keyword_intensity(["的", "了"], ext)
    assert out == {0: 0.0, 1: 0.0}


def test_keyword_intensity_empty_rejected():
    corpus = synthesize_corpus(4, 5)
    ext = TfidfKeywordExtractor(corpus)
    with pytest.raises(ValueError):
        keyword_intensity([], ext)


def test_extractor_config_validation():
    with pytest.raises(ValueError):
        ExtractorConfig(lambda_emo=0.0)
    with pytest.raises(ValueError):
        ExtractorConfig(keywords_per_utterance=0)


def test_build_dictionaries_contents():
    corpus = synthesize_corpus(6, 60)
    cfg = ExtractorConfig()
    lex = builtin_va_lexicon()
    emo, kw = build_dictionaries(
        corpus, cfg, LexiconSentimentExtractor(lex), TfidfKeywordExtractor(corpus)
    )
    assert len(emo) > 0 and len(kw) > 0
    ext = LexiconSentimentExtractor(lex)
    for n, group in emo.entities.items():
        for text in group:
            assert len(tokenize(text)) == n
            assert abs(ext.score(text)) > cfg.lambda_emo


def test_dictionary_round_trip(tmp_path):
    corpus = synthesize_corpus(6, 40)
    lex = builtin_va_lexicon()
    emo, kw = build_dictionaries(
        corpus, ExtractorConfig(),
        LexiconSentimentExtractor(lex), TfidfKeywordExtractor(corpus),
    )
    path = tmp_path / "dicts.tsv"
    save_dictionaries(emo, kw, path)
    emo2, kw2 = load_dictionaries(path)
    assert emo2.entities == emo.entities and emo2.sentences == emo.sentences
    assert kw2.entities == kw.entities and kw2.sentences == kw.sentences


def test_load_dictionaries_bad_lines(tmp_path):
    p = write(tmp_path, "d.tsv", "X\t1\t好\n")
    with pytest.raises(LexiconParseError):
        load_dictionaries(p)
    p = write(tmp_path, "d2.tsv", "E\t9\t好\n")
    with pytest.raises(LexiconParseError):
        load_dictionaries(p)


def test_knowledge_dict_entity_grouping():
    d = KnowledgeDict()
    d.add_entity(("开", "心"))
    d.add_entity(("好",))
    assert d.entities[2] == {"开心"}
    assert d.all_entities() == {"开心", "好"}
    assert len(d) == 2
