"""External-knowledge sources: valence-arousal lexicon, sentiment and keyword
extractors, emotion/keyword dictionaries, and per-token intensity values.

The sentiment and keyword extractors are pluggable; the bundled defaults are
deterministic (lexicon-average polarity, corpus TF-IDF) so the whole pipeline
runs without any external NLP toolkit.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .corpus import Corpus, tokenize


class LexiconError(Exception):
    pass


class LexiconParseError(LexiconError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class LexiconRangeError(LexiconError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class VALexicon:
    """word -> (valence mean, arousal mean), with the scale's value range."""

    entries: dict[str, tuple[float, float]]
    r_min: float = 1.0
    r_max: float = 9.0

    def __post_init__(self):
        if not self.r_min < self.r_max:
            raise LexiconError(f"r_min {self.r_min} must be < r_max {self.r_max}")

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    @property
    def midpoint(self) -> float:
        return (self.r_min + self.r_max) / 2


def load_va_lexicon(path) -> VALexicon:
    """Read the TSV lexicon format.

    Optional header ``#r_min=<v>\tr_max=<v>`` (default 1/9), then one
    ``word\tvalence\tarousal`` row per line.  Duplicate words: last wins.
    """
    r_min, r_max = 1.0, 9.0
    entries: dict[str, tuple[float, float]] = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    start = 0
    if lines and lines[0].startswith("#"):
        try:
            fields = dict(
                kv.split("=", 1) for kv in lines[0].lstrip("#").split("\t")
            )
            r_min = float(fields["r_min"])
            r_max = float(fields["r_max"])
        except (ValueError, KeyError) as exc:
            raise LexiconParseError(1, f"bad header: {exc}") from None
        start = 1
    for row, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise LexiconParseError(row, f"expected 3 tab-separated fields, got {len(parts)}")
        word, v_raw, a_raw = parts
        try:
            valence, arousal = float(v_raw), float(a_raw)
        except ValueError:
            raise LexiconParseError(row, f"non-numeric mean in {line!r}") from None
        for name, value in (("valence", valence), ("arousal", arousal)):
            if not r_min <= value <= r_max:
                raise LexiconRangeError(
                    row, f"{name} {value} outside [{r_min}, {r_max}]"
                )
        entries[word] = (valence, arousal)
    return VALexicon(entries=entries, r_min=r_min, r_max=r_max)


def emotion_intensity(word: str, lex: VALexicon) -> float:
    """Affective intensity in [0, 2]; 0 for out-of-lexicon words."""
    if word not in lex.entries:
        return 0.0
    valence, arousal = lex.entries[word]
    return (valence + arousal - 2 * lex.r_min) / (lex.r_max - lex.r_min)


# ---------------------------------------------------------------------------
# extractors


@dataclass(frozen=True)
class ExtractorConfig:
    lambda_emo: float = 0.5
    keywords_per_utterance: int = 3

    def __post_init__(self):
        if not 0 < self.lambda_emo < 1:
            raise ValueError("lambda_emo must be in (0, 1)")
        if self.keywords_per_utterance < 1:
            raise ValueError("keywords_per_utterance must be >= 1")


class LexiconSentimentExtractor:
    """Polarity in [-1, 1] from the VA lexicon: mean signed valence offset.

    Lexicon entries can span several characters, so tokens are re-segmented
    with greedy longest-match against the lexicon before lookup.
    """

    def __init__(self, lex: VALexicon):
        self.lex = lex
        self.max_word = max((len(w) for w in lex.entries), default=1)

    def _lexicon_hits(self, tokens: list[str]) -> list[str]:
        hits = []
        i = 0
        while i < len(tokens):
            for length in range(min(self.max_word, len(tokens) - i), 0, -1):
                word = "".join(tokens[i : i + length])
                if word in self.lex.entries:
                    hits.append(word)
                    i += length
                    break
            else:
                i += 1
        return hits

    def score(self, text: str) -> float:
        hits = self._lexicon_hits(tokenize(text))
        if not hits:
            return 0.0
        mid = self.lex.midpoint
        half = (self.lex.r_max - self.lex.r_min) / 2
        return sum((self.lex.entries[w][0] - mid) / half for w in hits) / len(hits)


_DEFAULT_STOPWORDS = frozenset(
    "的 了 是 我 你 他 她 它 在 有 和 就 不 人 都 一 也 很 到 说 要 去 会 着 吗 啊 吧 呢 嗯 哦 "
    "a an the of to and or in on is are was were it this that i you he she we they".split()
)


class TfidfKeywordExtractor:
    """Corpus TF-IDF keyword scorer; each utterance is one document."""

    def __init__(self, corpus: Corpus, stopwords=_DEFAULT_STOPWORDS):
        self.stopwords = stopwords
        docs = [tokenize(u.text) for u in corpus.utterances()]
        self.n_docs = max(len(docs), 1)
        df = Counter()
        for doc in docs:
            df.update(set(doc))
        self.df = df

    def idf(self, word: str) -> float:
        return math.log((1 + self.n_docs) / (1 + self.df.get(word, 0))) + 1.0

    def score_tokens(self, tokens: list[str]) -> dict[str, float]:
        tf = Counter(t for t in tokens if t not in self.stopwords)
        total = sum(tf.values())
        if total == 0:
            return {}
        return {w: (c / total) * self.idf(w) for w, c in tf.items()}


def extract_keywords(text: str, k: int, extractor) -> list[tuple[str, float]]:
    """Top-k (word, score), score-descending with lexicographic tie-break."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = extractor.score_tokens(tokenize(text))
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


def sentiment_score(text: str, extractor) -> float:
    return extractor.score(text)


def keyword_intensity(
    utterance_tokens: list[str], extractor, k: int = 3
) -> dict[int, float]:
    """Softmax over extractor scores at keyword positions; other positions 0.

    Values over keyword positions sum to 1 whenever at least one keyword is
    extracted.
    """
    if not utterance_tokens:
        raise ValueError("utterance_tokens must be non-empty")
    scores = extractor.score_tokens(utterance_tokens)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    keywords = {w for w, _ in ranked[:k]}
    positions = [
        (i, scores[t])
        for i, t in enumerate(utterance_tokens)
        if t in keywords
    ]
    out = {i: 0.0 for i in range(len(utterance_tokens))}
    if not positions:
        return out
    m = max(s for _, s in positions)
    exps = [(i, math.exp(s - m)) for i, s in positions]
    z = sum(e for _, e in exps)
    for i, e in exps:
        out[i] = e / z
    return out


# ---------------------------------------------------------------------------
# dictionaries


@dataclass
class KnowledgeDict:
    """Entities grouped by token length (1..4) plus whole sentences."""

    entities: dict[int, set[str]] = field(
        default_factory=lambda: {1: set(), 2: set(), 3: set(), 4: set()}
    )
    sentences: set[str] = field(default_factory=set)

    def add_entity(self, tokens: tuple[str, ...]):
        if 1 <= len(tokens) <= 4:
            self.entities[len(tokens)].add("".join(tokens))

    def all_entities(self) -> set[str]:
        out = set()
        for group in self.entities.values():
            out |= group
        return out

    def __len__(self) -> int:
        return sum(len(g) for g in self.entities.values()) + len(self.sentences)


def build_dictionaries(
    corpus: Corpus,
    cfg: ExtractorConfig,
    sentiment_extractor,
    keyword_extractor,
) -> tuple[KnowledgeDict, KnowledgeDict]:
    """Construct (emotion dict, keyword dict) from a corpus.

    Emotion dict: token n-grams (n<=4) and whole utterances whose polarity
    magnitude exceeds ``lambda_emo``.  Keyword dict: per-utterance top-k
    TF-IDF keywords plus keyword-dense utterances.
    """
    emo = KnowledgeDict()
    kw = KnowledgeDict()
    for utt in corpus.utterances():
        tokens = tokenize(utt.text)
        if abs(sentiment_extractor.score(utt.text)) > cfg.lambda_emo:
            emo.sentences.add(utt.text)
        for n in range(1, 5):
            for i in range(len(tokens) - n + 1):
                gram = tuple(tokens[i : i + n])
                if abs(sentiment_extractor.score("".join(gram))) > cfg.lambda_emo:
                    emo.add_entity(gram)

        keywords = extract_keywords(utt.text, cfg.keywords_per_utterance, keyword_extractor)
        for word, _score in keywords:
            kw.add_entity((word,))
        if tokens:
            kw_tokens = sum(1 for t in tokens if t in dict(keywords))
            if kw_tokens / len(tokens) >= 0.5:
                kw.sentences.add(utt.text)
    return emo, kw


def save_dictionaries(emo: KnowledgeDict, kw: KnowledgeDict, path):
    """Cache format: one entry per line, ``E|K<TAB>wordcount<TAB>text``.

    ``E`` = emotion dict, ``K`` = keyword dict; wordcount 0 marks a sentence.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for kind, d in (("E", emo), ("K", kw)):
            for n in sorted(d.entities):
                for text in sorted(d.entities[n]):
                    fh.write(f"{kind}\t{n}\t{text}\n")
            for text in sorted(d.sentences):
                fh.write(f"{kind}\t0\t{text}\n")


def load_dictionaries(path) -> tuple[KnowledgeDict, KnowledgeDict]:
    dicts = {"E": KnowledgeDict(), "K": KnowledgeDict()}
    with open(path, encoding="utf-8") as fh:
        for row, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 2)
            if len(parts) != 3 or parts[0] not in dicts:
                raise LexiconParseError(row, f"bad dictionary line {line!r}")
            kind, count_raw, text = parts
            try:
                count = int(count_raw)
            except ValueError:
                raise LexiconParseError(row, f"bad word count {count_raw!r}") from None
            if count == 0:
                dicts[kind].sentences.add(text)
            elif 1 <= count <= 4:
                dicts[kind].entities[count].add(text)
            else:
                raise LexiconParseError(row, f"bad word count {count}")
    return dicts["E"], dicts["K"]


# small built-in lexicon covering the synthetic template vocabulary, so the
# end-to-end pipeline runs with no external data
_BUILTIN_VA_ROWS = {
    "开心": (7.8, 6.4), "高兴": (7.6, 6.2), "愉快": (7.4, 5.8), "喜欢": (7.2, 5.6),
    "喜爱": (7.3, 5.7), "好玩": (7.0, 5.9), "热闹": (6.8, 6.1), "难过": (2.4, 5.8),
    "伤心": (2.2, 6.0), "害怕": (2.6, 6.6), "恶心": (2.3, 5.9), "讨厌": (2.5, 5.7),
    "愤怒": (2.1, 7.2), "气": (2.8, 6.8), "担心": (3.2, 5.9), "意外": (4.6, 6.3),
    "惊": (4.4, 6.7), "舒服": (7.1, 4.8), "美": (7.5, 5.2), "好": (6.9, 4.6),
    "糟": (2.7, 5.5), "怕": (2.7, 6.5), "乐": (7.7, 6.0), "哭": (2.3, 6.2),
    "笑": (7.4, 6.1), "爱": (7.9, 6.3), "恨": (1.9, 6.9), "烦": (2.9, 6.0),
    "安心": (7.0, 3.8), "轻松": (7.2, 3.9),
}


def builtin_va_lexicon() -> VALexicon:
    return VALexicon(entries=dict(_BUILTIN_VA_ROWS), r_min=1.0, r_max=9.0)
