"""Conversation corpus format: parsing, serialization, statistics, synthesis, splits.

On-disk format (UTF-8, LF): one utterance per line,

    <text><CS><cs-label><EMO><emotion-label><strategy><strategy-label>

conversations separated by one blank line.  Roles alternate starting at
SPEAKER; an optional ``SPEAKER:`` / ``LISTENER:`` prefix is accepted on input
for robustness but never emitted.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from enum import Enum


class CorpusError(Exception):
    pass


class MalformedLine(CorpusError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class AlternationError(CorpusError):
    pass


class EmptyCorpus(CorpusError):
    pass


class BadRatios(CorpusError):
    pass


def _norm_key(s: str) -> str:
    return re.sub(r"[\s\-_]", "", s).casefold()


class _LabelBase(Enum):
    def __str__(self) -> str:
        return self.value

    @property
    def slug(self) -> str:
        """CamelCase form with no spaces/hyphens, used in special tokens."""
        return re.sub(r"[\s\-]+(\w)", lambda m: m.group(1).upper(), self.value)

    @classmethod
    def parse(cls, s: str):
        key = _norm_key(s)
        for member in cls:
            if _norm_key(member.value) == key:
                return member
        raise ValueError(f"unknown {cls.__name__}: {s!r}")


class CSLabel(_LabelBase):
    NONE = "None"
    INQUIRY = "Inquiry"
    RESPECT = "Respect"
    REMINISCENCE = "Reminiscence"
    EXPRESSION = "Expression"
    ENJOYMENT = "Enjoyment"
    COMFORT = "Comfort"


class EmotionLabel(_LabelBase):
    NONE = "None"
    DISGUST = "Disgust"
    SADNESS = "Sadness"
    FEAR = "Fear"
    SURPRISE = "Surprise"
    LIKE = "Like"
    HAPPINESS = "Happiness"
    ANGER = "Anger"


class StrategyLabel(_LabelBase):
    NONE = "None"
    QUESTION = "Question"
    REFLECTION_OF_FEELINGS = "Reflection of feelings"
    SELF_DISCLOSURE = "Self-disclosure"
    PROVIDING_SUGGESTIONS = "Providing suggestions"
    INFORMATION = "Information"
    OTHERS = "Others"


class Role(Enum):
    SPEAKER = "SPEAKER"
    LISTENER = "LISTENER"


# canonical separators; parsed case-insensitively
SEP_CS = "<CS>"
SEP_EMO = "<EMO>"
SEP_STRATEGY = "<strategy>"

_SEPARATOR_LITERALS = ("<cs>", "<emo>", "<strategy>")

_LINE_RE = re.compile(
    r"^(?:(?P<role>SPEAKER|LISTENER)\s*:\s*)?"
    r"(?P<text>.*?)(?i:<cs>)(?P<cs>.*?)(?i:<emo>)(?P<emo>.*?)(?i:<strategy>)(?P<strategy>.*?)$"
)


@dataclass(frozen=True)
class Utterance:
    role: Role
    text: str
    cs: CSLabel
    emo: EmotionLabel
    strategy: StrategyLabel

    def __post_init__(self):
        if not self.text.strip():
            raise CorpusError("utterance text empty")
        if "\n" in self.text:
            raise CorpusError("utterance text contains newline")
        low = self.text.casefold()
        for sep in _SEPARATOR_LITERALS:
            if sep in low:
                raise CorpusError(f"utterance text contains separator {sep}")


@dataclass(frozen=True)
class Conversation:
    utterances: tuple[Utterance, ...]

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        if len(self.utterances) < 2:
            raise AlternationError("conversation needs at least 2 utterances")
        for i, utt in enumerate(self.utterances):
            expected = Role.SPEAKER if i % 2 == 0 else Role.LISTENER
            if utt.role is not expected:
                raise AlternationError(
                    f"utterance {i}: expected {expected.value}, got {utt.role.value}"
                )

    def __len__(self) -> int:
        return len(self.utterances)


@dataclass(frozen=True)
class Corpus:
    conversations: tuple[Conversation, ...]

    def __post_init__(self):
        object.__setattr__(self, "conversations", tuple(self.conversations))
        if not self.conversations:
            raise EmptyCorpus("corpus has no conversations")

    def __len__(self) -> int:
        return len(self.conversations)

    def utterances(self):
        for conv in self.conversations:
            yield from conv.utterances


# ---------------------------------------------------------------------------
# tokenization: character-level for CJK codepoints, whitespace/word runs
# for everything else.  Deterministic and dependency-free.

_CJK_RANGES = (
    (0x4E00, 0x9FFF),
    (0x3400, 0x4DBF),
    (0xF900, 0xFAFF),
    (0x3000, 0x303F),   # CJK punctuation
    (0xFF00, 0xFFEF),   # fullwidth forms
)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def tokenize(text: str) -> list[str]:
    tokens: list[str] = []
    buf: list[str] = []

    def flush():
        if buf:
            tokens.append("".join(buf))
            buf.clear()

    for ch in text:
        if ch.isspace():
            flush()
        elif _is_cjk(ch):
            flush()
            tokens.append(ch)
        else:
            buf.append(ch)
    flush()
    return tokens


# ---------------------------------------------------------------------------
# parse / serialize


def parse_line(line: str, lineno: int, role: Role) -> Utterance:
    m = _LINE_RE.match(line)
    if m is None:
        raise MalformedLine(lineno, "missing <CS>/<EMO>/<strategy> separators")
    if m.group("role") is not None:
        declared = Role(m.group("role"))
        if declared is not role:
            raise MalformedLine(
                lineno, f"role prefix {declared.value} breaks alternation"
            )
    text = m.group("text").strip()
    if not text:
        raise MalformedLine(lineno, "empty utterance text")
    try:
        cs = CSLabel.parse(m.group("cs").strip())
        emo = EmotionLabel.parse(m.group("emo").strip())
        strategy = StrategyLabel.parse(m.group("strategy").strip())
    except ValueError as exc:
        raise MalformedLine(lineno, str(exc)) from None
    return Utterance(role=role, text=text, cs=cs, emo=emo, strategy=strategy)


def parse_corpus(document: str) -> Corpus:
    """Parse a whole document; conversations separated by >=1 blank line."""
    conversations: list[Conversation] = []
    current: list[Utterance] = []

    def close(lineno: int):
        if not current:
            return
        if len(current) < 2:
            raise AlternationError(
                f"conversation ending before line {lineno} has fewer than 2 utterances"
            )
        conversations.append(Conversation(tuple(current)))
        current.clear()

    for lineno, raw in enumerate(document.split("\n"), start=1):
        line = raw.strip()
        if not line:
            close(lineno)
            continue
        role = Role.SPEAKER if len(current) % 2 == 0 else Role.LISTENER
        current.append(parse_line(line, lineno, role))
    close(lineno + 1 if document else 1)

    if not conversations:
        raise EmptyCorpus("document contains no conversations")
    return Corpus(tuple(conversations))


def serialize_utterance(utt: Utterance) -> str:
    return (
        f"{utt.text}{SEP_CS}{utt.cs}{SEP_EMO}{utt.emo}{SEP_STRATEGY}{utt.strategy}"
    )


def serialize_corpus(corpus: Corpus) -> str:
    blocks = [
        "\n".join(serialize_utterance(u) for u in conv.utterances)
        for conv in corpus.conversations
    ]
    return "\n\n".join(blocks) + "\n"


# ---------------------------------------------------------------------------
# statistics


@dataclass
class StatsReport:
    conversation_count: int
    utterance_count: int
    speaker_utterances: int
    listener_utterances: int
    avg_tokens_per_conversation: float
    avg_utterances_per_conversation: float
    avg_tokens_per_utterance: float
    label_histograms: dict[str, dict[str, tuple[int, float]]] = field(
        default_factory=dict
    )


def corpus_stats(corpus: Corpus, tokenizer=tokenize) -> StatsReport:
    n_conv = len(corpus)
    n_utt = 0
    n_speaker = 0
    total_tokens = 0
    hists: dict[str, dict[str, int]] = {
        "cs": {label.value: 0 for label in CSLabel},
        "emotion": {label.value: 0 for label in EmotionLabel},
        "strategy": {label.value: 0 for label in StrategyLabel},
    }
    for utt in corpus.utterances():
        n_utt += 1
        if utt.role is Role.SPEAKER:
            n_speaker += 1
        total_tokens += len(tokenizer(utt.text))
        hists["cs"][utt.cs.value] += 1
        hists["emotion"][utt.emo.value] += 1
        hists["strategy"][utt.strategy.value] += 1

    label_histograms = {
        taxonomy: {
            label: (count, 100.0 * count / n_utt) for label, count in hist.items()
        }
        for taxonomy, hist in hists.items()
    }
    return StatsReport(
        conversation_count=n_conv,
        utterance_count=n_utt,
        speaker_utterances=n_speaker,
        listener_utterances=n_utt - n_speaker,
        avg_tokens_per_conversation=total_tokens / n_conv,
        avg_utterances_per_conversation=n_utt / n_conv,
        avg_tokens_per_utterance=total_tokens / n_utt,
        label_histograms=label_histograms,
    )


def format_stats(report: StatsReport) -> str:
    lines = [
        f"{'Conversations':<34}{report.conversation_count}",
        f"{'Utterances':<34}{report.utterance_count}",
        f"{'SPEAKER utterances':<34}{report.speaker_utterances}",
        f"{'LISTENER utterances':<34}{report.listener_utterances}",
        f"{'Avg tokens / conversation':<34}{report.avg_tokens_per_conversation:.2f}",
        f"{'Avg utterances / conversation':<34}{report.avg_utterances_per_conversation:.2f}",
        f"{'Avg tokens / utterance':<34}{report.avg_tokens_per_utterance:.2f}",
    ]
    for taxonomy, hist in report.label_histograms.items():
        lines.append("")
        lines.append(f"{taxonomy} labels")
        for label, (count, pct) in hist.items():
            lines.append(f"  {label:<32}{count:>6}  {pct:6.2f}%")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# synthetic corpus generation
#
# Each label value is coupled to a distinctive surface cue so that the three
# classification tasks are learnable from text alone.  Marginal label
# frequencies approximate the reference corpus distribution.

_CS_CUES: dict[CSLabel, list[str]] = {
    CSLabel.NONE: ["今天天气不错", "我刚吃过饭", "时间过得真快", "外面在下雨"],
    CSLabel.INQUIRY: ["你在哪里剪的头发？", "你最近去了哪里？", "这是在哪里买的？"],
    CSLabel.RESPECT: ["您慢慢说，不着急", "您请坐，辛苦您了", "多谢您告诉我"],
    CSLabel.REMINISCENCE: ["你小时候住在乡下吧", "记得年轻时的老朋友吗", "当年的事情还记得吗"],
    CSLabel.EXPRESSION: ["请把这句话再说一遍", "用自己的话描述一下", "试着把想法说出来"],
    CSLabel.ENJOYMENT: ["这个游戏真好玩", "一起唱歌真愉快", "看花灯真热闹"],
    CSLabel.COMFORT: ["别担心，一切都会好的", "没关系，慢慢来", "有我陪着你呢"],
}

_EMO_CUES: dict[EmotionLabel, list[str]] = {
    EmotionLabel.NONE: [""],
    EmotionLabel.DISGUST: ["这味道真恶心", "实在讨厌极了"],
    EmotionLabel.SADNESS: ["我很难过", "心里特别伤心"],
    EmotionLabel.FEAR: ["我有点害怕", "吓得不轻"],
    EmotionLabel.SURPRISE: ["真是没想到", "太意外了吧"],
    EmotionLabel.LIKE: ["我很喜欢这个", "真叫人喜爱"],
    EmotionLabel.HAPPINESS: ["我今天很开心", "真是高兴极了"],
    EmotionLabel.ANGER: ["气死我了", "真叫人愤怒"],
}

_STRATEGY_CUES: dict[StrategyLabel, list[str]] = {
    StrategyLabel.NONE: [""],
    StrategyLabel.QUESTION: ["能和我说说吗？", "后来怎么样了吗？"],
    StrategyLabel.REFLECTION_OF_FEELINGS: ["听起来你心情不轻松", "我感到你情绪不平静"],
    StrategyLabel.SELF_DISCLOSURE: ["我也有过同样经历", "我自己也是这样"],
    StrategyLabel.PROVIDING_SUGGESTIONS: ["建议早点休息", "不妨出去走走"],
    StrategyLabel.INFORMATION: ["社区中心周三开门", "公园就在街角"],
    StrategyLabel.OTHERS: ["嗯嗯这样啊", "哦原来如此"],
}

# marginal frequencies (percent) mirroring the reference corpus
_CS_WEIGHTS = {
    CSLabel.NONE: 31.44,
    CSLabel.INQUIRY: 24.67,
    CSLabel.RESPECT: 12.70,
    CSLabel.REMINISCENCE: 2.76,
    CSLabel.EXPRESSION: 15.74,
    CSLabel.ENJOYMENT: 11.05,
    CSLabel.COMFORT: 1.67,
}
_EMO_WEIGHTS = {
    EmotionLabel.NONE: 71.60,
    EmotionLabel.DISGUST: 1.62,
    EmotionLabel.SADNESS: 3.74,
    EmotionLabel.FEAR: 0.37,
    EmotionLabel.SURPRISE: 2.11,
    EmotionLabel.LIKE: 7.82,
    EmotionLabel.HAPPINESS: 11.60,
    EmotionLabel.ANGER: 1.15,
}
_STRATEGY_WEIGHTS = {
    StrategyLabel.NONE: 41.92,
    StrategyLabel.QUESTION: 24.91,
    StrategyLabel.REFLECTION_OF_FEELINGS: 1.74,
    StrategyLabel.SELF_DISCLOSURE: 17.94,
    StrategyLabel.PROVIDING_SUGGESTIONS: 1.56,
    StrategyLabel.INFORMATION: 4.86,
    StrategyLabel.OTHERS: 7.07,
}


@dataclass(frozen=True)
class TemplateBank:
    cs_cues: dict = field(default_factory=lambda: dict(_CS_CUES))
    emo_cues: dict = field(default_factory=lambda: dict(_EMO_CUES))
    strategy_cues: dict = field(default_factory=lambda: dict(_STRATEGY_CUES))
    cs_weights: dict = field(default_factory=lambda: dict(_CS_WEIGHTS))
    emo_weights: dict = field(default_factory=lambda: dict(_EMO_WEIGHTS))
    strategy_weights: dict = field(default_factory=lambda: dict(_STRATEGY_WEIGHTS))


DEFAULT_TEMPLATES = TemplateBank()


def _pick(rng: random.Random, weights: dict):
    labels = list(weights)
    return rng.choices(labels, weights=[weights[l] for l in labels], k=1)[0]


def _synth_utterance(rng: random.Random, role: Role, bank: TemplateBank) -> Utterance:
    cs = _pick(rng, bank.cs_weights)
    emo = _pick(rng, bank.emo_weights)
    strategy = _pick(rng, bank.strategy_weights)
    parts = [rng.choice(bank.cs_cues[cs])]
    emo_part = rng.choice(bank.emo_cues[emo])
    if emo_part:
        parts.append(emo_part)
    strat_part = rng.choice(bank.strategy_cues[strategy])
    if strat_part:
        parts.append(strat_part)
    text = "，".join(parts)
    return Utterance(role=role, text=text, cs=cs, emo=emo, strategy=strategy)


def synthesize_corpus(
    seed: int, n_conversations: int, template_bank: TemplateBank = DEFAULT_TEMPLATES
) -> Corpus:
    """Deterministic synthetic corpus in the production line format."""
    if n_conversations < 1:
        raise ValueError("n_conversations must be >= 1")
    rng = random.Random(seed)
    conversations = []
    for _ in range(n_conversations):
        n_utt = rng.randint(2, 8)
        utts = [
            _synth_utterance(
                rng, Role.SPEAKER if i % 2 == 0 else Role.LISTENER, template_bank
            )
            for i in range(n_utt)
        ]
        conversations.append(Conversation(tuple(utts)))
    return Corpus(tuple(conversations))


# ---------------------------------------------------------------------------
# splitting


def split_corpus(
    corpus: Corpus, ratios: tuple[float, float, float], seed: int
) -> tuple[Corpus | None, Corpus | None, Corpus | None]:
    """Partition by conversation into (train, dev, test); empty split -> None."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise BadRatios(f"ratios must be three non-negatives: {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must sum to 1: {ratios}")

    order = list(corpus.conversations)
    random.Random(seed).shuffle(order)
    n = len(order)

    # largest-remainder apportionment so sizes sum exactly to n
    raw = [r * n for r in ratios]
    sizes = [int(x) for x in raw]
    remainder = n - sum(sizes)
    by_frac = sorted(range(3), key=lambda i: raw[i] - sizes[i], reverse=True)
    for i in by_frac[:remainder]:
        sizes[i] += 1

    out = []
    start = 0
    for size in sizes:
        chunk = order[start : start + size]
        start += size
        out.append(Corpus(tuple(chunk)) if chunk else None)
    return tuple(out)
