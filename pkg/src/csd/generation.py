"""Sampling-based response generation: temperature / top-k / top-p filtering
and autoregressive decoding conditioned on predicted labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .corpus import Utterance, tokenize
from .masking import SEP
from .model import ModelBundle
from .training import AblationConfig, _encode_context


class ModelMissing(Exception):
    pass


def _is_special(token: str) -> bool:
    return (token.startswith("[") and token.endswith("]")) or (
        token.startswith("<") and token.endswith(">")
    )


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.7
    top_k: int = 8
    top_p: float = 0.5
    max_new_tokens: int = 48
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.top_k < 0:
            raise ValueError("top_k must be >= 0 (0 disables)")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


def filter_logits(logits: torch.Tensor, params: GenerationParams) -> torch.Tensor:
    """Temperature, then top-k, then nucleus; returns a renormalized
    probability distribution over the vocabulary.

    The nucleus keeps the smallest prefix of probability-sorted tokens whose
    cumulative mass reaches top_p, including the boundary token.
    """
    logits = logits.to(torch.float64) / params.temperature
    if params.top_k > 0 and params.top_k < logits.shape[-1]:
        kth = torch.topk(logits, params.top_k).values[-1]
        logits = torch.where(
            logits >= kth, logits, torch.tensor(float("-inf"), dtype=logits.dtype)
        )
    probs = torch.softmax(logits, dim=-1)
    sorted_probs, sorted_idx = torch.sort(probs, descending=True)
    cum = torch.cumsum(sorted_probs, dim=-1)
    # first index where cumulative mass reaches top_p; keep through it
    reached = cum >= params.top_p - 1e-12
    cutoff = int(reached.nonzero()[0].item()) if reached.any() else len(cum) - 1
    keep = sorted_idx[: cutoff + 1]
    out = torch.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


def sample_response(
    context: list[Utterance],
    bundle: ModelBundle,
    params: GenerationParams,
    ablation: AblationConfig | None = None,
    return_audit: bool = False,
):
    """Classify context, condition, and sample one LISTENER response.

    Returns (text, (emo, cs, strategy)) where the triple holds the predicted
    labels of the most recent SPEAKER utterance, i.e. the labels that
    conditioned this generation.  With ``return_audit`` the per-step filtered
    distributions are returned as well.
    """
    if bundle.decoder is None or not bundle.classifiers:
        raise ModelMissing("bundle lacks trained models")
    if not context:
        raise ValueError("context must be non-empty")
    if ablation is None:
        ablation = AblationConfig.from_name(bundle.metadata.get("ablation", "full"))

    with torch.no_grad():
        memory, built, triples = _encode_context(
            context,
            bundle.classifiers,
            bundle.extra_encoder,
            bundle.vocab,
            bundle.cfg,
            ablation,
            use_gold_labels=False,
        )
        gen = torch.Generator().manual_seed(params.seed)
        vocab = bundle.vocab
        prefix = [vocab.cls_id]
        out_tokens: list[str] = []
        audit = []
        for _ in range(params.max_new_tokens):
            ids = torch.tensor(prefix, dtype=torch.long)
            logits, _record = bundle.decoder(ids, memory)
            probs = filter_logits(logits[0, -1], params)
            choice = int(torch.multinomial(probs, 1, generator=gen).item())
            if return_audit:
                audit.append((choice, probs))
            prefix.append(choice)
            token = vocab.tokens[choice]
            if token == SEP:
                break
            out_tokens.append(token)

    text = "".join(t for t in out_tokens if not _is_special(t))
    triple = triples[-1] if triples else None
    if return_audit:
        return text, triple, audit
    return text, triple


def greedy_response(
    context: list[Utterance],
    bundle: ModelBundle,
    max_new_tokens: int = 48,
    ablation: AblationConfig | None = None,
    use_gold_labels: bool = False,
) -> str:
    """Argmax decoding; the zero-temperature limit of sample_response.

    ``use_gold_labels`` replays the teacher-forcing conditioning (context
    labels from the corpus instead of the classifiers).
    """
    if ablation is None:
        ablation = AblationConfig.from_name(bundle.metadata.get("ablation", "full"))
    with torch.no_grad():
        memory, _built, _ = _encode_context(
            context, bundle.classifiers, bundle.extra_encoder,
            bundle.vocab, bundle.cfg, ablation, use_gold_labels=use_gold_labels,
        )
        vocab = bundle.vocab
        prefix = [vocab.cls_id]
        out = []
        for _ in range(max_new_tokens):
            ids = torch.tensor(prefix, dtype=torch.long)
            logits, _ = bundle.decoder(ids, memory)
            choice = int(torch.argmax(logits[0, -1]).item())
            prefix.append(choice)
            token = vocab.tokens[choice]
            if token == SEP:
                break
            out.append(token)
    return "".join(t for t in out if not _is_special(t))
