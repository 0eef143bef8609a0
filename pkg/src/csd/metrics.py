"""Automatic metrics: corpus BLEU with Chen-Cherry smoothing 7, distinct-n,
and label accuracy; plus the end-to-end evaluation driver.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

from .corpus import Corpus, Role, tokenize
from .generation import GenerationParams, sample_response
from .model import ModelBundle


class EmptyInput(Exception):
    pass


class LengthMismatch(Exception):
    pass


def ngrams(tokens: list[str], n: int):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def _modified_precision(candidate: list[str], reference: list[str], n: int):
    """(clipped matches, total candidate n-grams) for one sentence pair."""
    cand = Counter(ngrams(candidate, n))
    ref = Counter(ngrams(reference, n))
    clipped = sum(min(c, ref[g]) for g, c in cand.items())
    return clipped, max(sum(cand.values()), 0)


def _smooth7(p_n: list[tuple[int, int]], hyp_len: int, n_plus1: tuple[int, int]):
    """Chen-Cherry smoothing 7: method 4 (zero counts get a decaying invented
    numerator) followed by method 5 (average with neighboring orders)."""
    k = 5
    vals = []
    incvnt = 1
    for num, den in p_n:
        if den == 0:
            vals.append(0.0)
        elif num == 0 and hyp_len > 1:
            vals.append((1 / (2**incvnt * k / math.log(hyp_len))) / den)
            incvnt += 1
        else:
            vals.append(num / den)

    num1, den1 = n_plus1
    if den1 == 0:
        p_next = 0.0
    else:
        p_next = num1 / den1
    plus1 = vals + [p_next]
    m_prev = vals[0] + 1
    out = []
    for i, p_i in enumerate(vals):
        p_new = (m_prev + p_i + plus1[i + 1]) / 3
        out.append(p_new)
        m_prev = p_new
    return out


def bleu_n(
    candidates: list[str],
    references: list[str],
    n: int = 4,
    smoothing_id: int = 7,
    tokenizer=tokenize,
) -> float:
    """Corpus-level BLEU-n with brevity penalty; smoothing 0 (none) or 7."""
    if not candidates or len(candidates) != len(references):
        raise EmptyInput(
            f"need aligned non-empty lists, got {len(candidates)}/{len(references)}"
        )
    if smoothing_id not in (0, 7):
        raise ValueError(f"unsupported smoothing {smoothing_id}")
    cand_toks = [tokenizer(c) for c in candidates]
    ref_toks = [tokenizer(r) for r in references]

    totals = {k: [0, 0] for k in range(1, n + 2)}
    hyp_len = 0
    ref_len = 0
    for cand, ref in zip(cand_toks, ref_toks):
        hyp_len += len(cand)
        ref_len += len(ref)
        for k in range(1, n + 2):
            num, den = _modified_precision(cand, ref, k)
            totals[k][0] += num
            totals[k][1] += den
    p_n = [tuple(totals[k]) for k in range(1, n + 1)]

    # smoothing engages only when some order has zero matches, so an exact
    # match scores exactly 1.0
    if smoothing_id == 7 and any(num == 0 for num, _den in p_n):
        precisions = _smooth7(p_n, hyp_len, tuple(totals[n + 1]))
    else:
        precisions = [num / den if den else 0.0 for num, den in p_n]
    if any(p <= 0 for p in precisions):
        return 0.0
    log_avg = sum(math.log(p) for p in precisions) / n
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / max(hyp_len, 1))
    return bp * math.exp(log_avg)


def distinct_n(candidates: list[str], n: int, tokenizer=tokenize) -> float:
    """|unique n-grams| / |total n-grams| across all candidates."""
    if not candidates:
        raise EmptyInput("no candidates")
    all_grams = []
    for cand in candidates:
        all_grams.extend(ngrams(tokenizer(cand), n))
    if not all_grams:
        raise EmptyInput(f"no {n}-grams in candidates")
    return len(set(all_grams)) / len(all_grams)


def classification_accuracy(predictions, golds) -> float:
    if len(predictions) != len(golds):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(golds)} golds")
    if not golds:
        raise EmptyInput("no examples")
    return sum(p == g for p, g in zip(predictions, golds)) / len(golds)


@dataclass
class EvalReport:
    bleu2: float
    bleu4: float
    distinct1: float
    distinct2: float
    accuracy: dict[str, float]
    n_examples: int
    transcripts: list[dict] = field(default_factory=list)

    def to_dict(self):
        return {
            "bleu2": self.bleu2,
            "bleu4": self.bleu4,
            "distinct1": self.distinct1,
            "distinct2": self.distinct2,
            "accuracy": self.accuracy,
            "n_examples": self.n_examples,
        }

    def save(self, path, transcript_path=None):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=2)
        if transcript_path is not None:
            with open(transcript_path, "w", encoding="utf-8") as fh:
                for rec in self.transcripts:
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def run_eval(
    testset: Corpus, bundle: ModelBundle, params: GenerationParams
) -> EvalReport:
    """Generate one response per LISTENER turn from its preceding context and
    score the batch."""
    candidates = []
    references = []
    transcripts = []
    example_idx = 0
    for conv in testset.conversations:
        for i, utt in enumerate(conv.utterances):
            if utt.role is not Role.LISTENER:
                continue
            context = list(conv.utterances[:i])
            step_params = GenerationParams(
                temperature=params.temperature,
                top_k=params.top_k,
                top_p=params.top_p,
                max_new_tokens=params.max_new_tokens,
                seed=params.seed + example_idx,
            )
            text, triple = sample_response(context, bundle, step_params)
            candidates.append(text if text else "。")
            references.append(utt.text)
            transcripts.append(
                {
                    "context": [u.text for u in context],
                    "reference": utt.text,
                    "generated": text,
                    "labels": [str(l) for l in triple] if triple else None,
                }
            )
            example_idx += 1

    preds = {"cs": [], "emotion": [], "strategy": []}
    golds = {"cs": [], "emotion": [], "strategy": []}
    import torch

    from .training import _utterance_ids

    with torch.no_grad():
        for utt in testset.utterances():
            ids = torch.tensor(
                [_utterance_ids(utt, bundle.vocab)], dtype=torch.long
            )
            for taxonomy, gold in (
                ("cs", utt.cs),
                ("emotion", utt.emo),
                ("strategy", utt.strategy),
            ):
                label, _, _ = bundle.classifiers[taxonomy].classify(ids)
                preds[taxonomy].append(label)
                golds[taxonomy].append(gold)

    return EvalReport(
        bleu2=bleu_n(candidates, references, n=2, smoothing_id=7),
        bleu4=bleu_n(candidates, references, n=4, smoothing_id=7),
        distinct1=distinct_n(candidates, 1),
        distinct2=distinct_n(candidates, 2),
        accuracy={
            t: classification_accuracy(preds[t], golds[t]) for t in preds
        },
        n_examples=len(candidates),
        transcripts=transcripts,
    )
