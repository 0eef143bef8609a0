"""Span-mask pretraining examples: progressive entity/sentence masking plus a
retained fraction of classic 80/10/10 masking, and next-sentence pairs.

Masked spans never cross entity boundaries: an entity is masked in full or
not at all.  The mask span grows with the training stage (1-word entities,
2-word, 3-word, 4-word, whole sentences), each stage with its own mask
probability.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .corpus import Corpus, Role, tokenize
from .lexicons import KnowledgeDict

CLS = "[CLS]"
SEP = "[SEP]"
MASK = "[MASK]"
PAD = "[PAD]"
UNK = "[UNK]"

SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)

# stage mask probabilities from the reference configuration
KEYWORD_LAMBDAS = (0.9, 0.9, 0.9, 0.9, 0.4)
EMOTION_LAMBDAS = (0.5, 0.5, 0.4, 0.3, 0.2)


@dataclass(frozen=True)
class MaskSchedule:
    lambdas: tuple[float, float, float, float, float] = KEYWORD_LAMBDAS
    stage_boundaries: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    base_mask_rate: float = 0.05
    base_split: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if len(self.lambdas) != 5 or any(not 0 <= l <= 1 for l in self.lambdas):
            raise ValueError("lambdas must be five values in [0, 1]")
        bounds = self.stage_boundaries
        if len(bounds) != 5 or any(b <= a for a, b in zip(bounds, bounds[1:])):
            raise ValueError("stage_boundaries must be 5 strictly increasing values")
        if abs(bounds[-1] - 1.0) > 1e-12:
            raise ValueError("last stage boundary must be 1.0")
        if abs(sum(self.base_split) - 1.0) > 1e-12:
            raise ValueError("base_split must sum to 1")


@dataclass
class MaskedExample:
    tokens: list[str]
    mlm_targets: dict[int, str]
    nsp_label: bool
    segment_ids: list[int]
    masked_spans: list[tuple[int, int]] = field(default_factory=list)

    def original_tokens(self) -> list[str]:
        return [self.mlm_targets.get(i, t) for i, t in enumerate(self.tokens)]


def current_stage(step: int, total: int, sched: MaskSchedule) -> int:
    """Stage in 1..5 for a 0-based step out of ``total``."""
    if not 0 <= step < total:
        raise ValueError(f"step {step} outside [0, {total})")
    frac = step / total
    for k, bound in enumerate(sched.stage_boundaries, start=1):
        if frac < bound:
            return k
    return 5


def find_entity_spans(tokens: list[str], d: KnowledgeDict) -> list[tuple[int, int]]:
    """Non-overlapping (start, length) entity occurrences, longest match first."""
    spans = []
    i = 0
    n = len(tokens)
    while i < n:
        for length in (4, 3, 2, 1):
            if i + length <= n and "".join(tokens[i : i + length]) in d.entities[length]:
                spans.append((i, length))
                i += length
                break
        else:
            i += 1
    return spans


def _sentence_key(d: KnowledgeDict) -> set[str]:
    return {"".join(tokenize(s)) for s in d.sentences}


def _mask_sentence_tokens(
    tokens: list[str],
    d: KnowledgeDict,
    stage: int,
    sched: MaskSchedule,
    rng: random.Random,
    vocab_tokens: list[str] | None,
    offset: int,
    out: list[str],
    targets: dict[int, str],
    spans_out: list[tuple[int, int]],
):
    n = len(tokens)
    if n == 0:
        return

    def mask_span(start: int, length: int):
        for j in range(start, start + length):
            targets[offset + j] = tokens[j]
            out[offset + j] = MASK
        spans_out.append((offset + start, length))

    if stage == 5 and "".join(tokens) in _sentence_key(d):
        if rng.random() < sched.lambdas[4]:
            mask_span(0, n)
            return

    spans = find_entity_spans(tokens, d)
    pool = []
    for start, length in spans:
        if length == stage and rng.random() < sched.lambdas[stage - 1]:
            mask_span(start, length)
        else:
            pool.append((start, length))

    # retained classic masking over the remaining entities
    if sched.base_mask_rate > 0 and pool:
        n_classic = max(int(len(pool) * sched.base_mask_rate), 1)
        p_mask, p_random, _p_keep = sched.base_split
        for start, length in rng.sample(pool, n_classic):
            r = rng.random()
            for j in range(start, start + length):
                targets[offset + j] = tokens[j]
                if r < p_mask:
                    out[offset + j] = MASK
                elif r < p_mask + p_random and vocab_tokens:
                    out[offset + j] = rng.choice(vocab_tokens)
                # else: keep unchanged
            if r < p_mask:
                spans_out.append((offset + start, length))


def mask_example(
    tokens: list[str],
    d: KnowledgeDict,
    stage: int,
    sched: MaskSchedule,
    rng: random.Random,
    tokens_b: list[str] | None = None,
    nsp_label: bool = False,
    vocab_tokens: list[str] | None = None,
) -> MaskedExample:
    """Build one pretraining example.

    ``tokens`` (and optional ``tokens_b``) are plain utterance tokens; the
    result carries CLS/SEP framing, segment ids, and MLM targets for every
    perturbed position.
    """
    if not tokens:
        raise ValueError("tokens must be non-empty")
    if not 1 <= stage <= 5:
        raise ValueError(f"stage must be 1..5, got {stage}")

    parts = [list(tokens)] + ([list(tokens_b)] if tokens_b else [])
    out = [CLS]
    segment_ids = [0]
    offsets = []
    for seg, part in enumerate(parts):
        offsets.append(len(out))
        out.extend(part)
        out.append(SEP)
        segment_ids.extend([seg] * (len(part) + 1))

    targets: dict[int, str] = {}
    spans: list[tuple[int, int]] = []
    for part, offset in zip(parts, offsets):
        _mask_sentence_tokens(
            part, d, stage, sched, rng, vocab_tokens, offset, out, targets, spans
        )
    return MaskedExample(
        tokens=out,
        mlm_targets=targets,
        nsp_label=nsp_label,
        segment_ids=segment_ids,
        masked_spans=spans,
    )


def make_nsp_pair(
    corpus: Corpus, rng: random.Random, force_is_next: bool | None = None
) -> tuple[str, str, bool]:
    """Sample a next-sentence pair: 50% consecutive, 50% cross-conversation."""
    conversations = corpus.conversations
    is_next = rng.random() < 0.5 if force_is_next is None else force_is_next
    ci = rng.randrange(len(conversations))
    conv = conversations[ci]
    ui = rng.randrange(len(conv) - 1)
    sentence_a = conv.utterances[ui].text
    if is_next:
        return sentence_a, conv.utterances[ui + 1].text, True
    if len(conversations) < 2:
        raise ValueError("negative pairs need at least 2 conversations")
    while True:
        cj = rng.randrange(len(conversations))
        if cj != ci:
            break
    other = conversations[cj]
    sentence_b = other.utterances[rng.randrange(len(other))].text
    return sentence_a, sentence_b, False


def pretraining_examples(
    corpus: Corpus,
    d: KnowledgeDict,
    sched: MaskSchedule,
    rng: random.Random,
    stage: int,
    n_examples: int,
    vocab_tokens: list[str] | None = None,
) -> list[MaskedExample]:
    out = []
    for _ in range(n_examples):
        a, b, is_next = make_nsp_pair(corpus, rng)
        out.append(
            mask_example(
                tokenize(a), d, stage, sched, rng,
                tokens_b=tokenize(b), nsp_label=is_next, vocab_tokens=vocab_tokens,
            )
        )
    return out


def measure_mask_rate(
    examples: list[MaskedExample], d: KnowledgeDict
) -> dict[int, tuple[int, int]]:
    """Recount masked dictionary occurrences: span length -> (masked, total).

    Key 5 counts whole dictionary sentences (per SEP-delimited segment).
    Only full [MASK] runs count as masked, so this is an independent recount
    from the example contents, not the generator's bookkeeping.
    """
    counts = {k: [0, 0] for k in (1, 2, 3, 4, 5)}
    sentence_keys = _sentence_key(d)
    for ex in examples:
        original = ex.original_tokens()
        # split into sentence segments between CLS/SEP markers
        segments: list[tuple[int, list[str]]] = []
        start = None
        for i, tok in enumerate(original):
            if tok in (CLS, SEP):
                if start is not None:
                    segments.append((start, original[start:i]))
                start = i + 1
        for seg_start, seg_tokens in segments:
            if "".join(seg_tokens) in sentence_keys:
                counts[5][1] += 1
                if all(
                    ex.tokens[seg_start + j] == MASK for j in range(len(seg_tokens))
                ):
                    counts[5][0] += 1
                    continue  # fully masked sentence hides its entities
            for start_, length in find_entity_spans(seg_tokens, d):
                counts[length][1] += 1
                if all(
                    ex.tokens[seg_start + start_ + j] == MASK for j in range(length)
                ):
                    counts[length][0] += 1
    return {k: (m, t) for k, (m, t) in counts.items()}
