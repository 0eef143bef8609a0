"""Three-phase training: masked pretraining of the two encoders, classifier
fine-tuning, and decoder training with the joint generation + attention loss.
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass, field, replace

import torch
import torch.nn.functional as F

from .corpus import Conversation, Corpus, Role, Utterance, tokenize
from .lexicons import (
    KnowledgeDict,
    TfidfKeywordExtractor,
    VALexicon,
    emotion_intensity,
    keyword_intensity,
)
from .masking import (
    CLS,
    SEP,
    MaskSchedule,
    current_stage,
    pretraining_examples,
)
from .model import (
    ClassifierModel,
    Decoder,
    ModelConfig,
    PretrainModel,
    TAXONOMIES,
    TransformerEncoder,
    Vocabulary,
    attention_per_token,
    clone_module,
    label_token,
    splice_hidden_states,
)


class DivergenceError(Exception):
    pass


class LengthMismatch(Exception):
    pass


@dataclass(frozen=True)
class LossWeights:
    gamma1: float = 1.0
    gamma2: float = 0.5
    gamma3: float = 0.5

    def __post_init__(self):
        if min(self.gamma1, self.gamma2, self.gamma3) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass(frozen=True)
class AblationConfig:
    use_progressive_mask: bool = True      # NM
    use_input_labels: bool = True          # IL
    use_cross_attention_splice: bool = True  # CA
    use_attention_loss: bool = True        # AL

    @classmethod
    def from_name(cls, name: str) -> "AblationConfig":
        name = name.lower()
        if name == "full":
            return cls()
        flags = {
            "nm": "use_progressive_mask",
            "il": "use_input_labels",
            "ca": "use_cross_attention_splice",
            "al": "use_attention_loss",
        }
        if name not in flags:
            raise ValueError(f"unknown ablation {name!r}")
        return cls(**{flags[name]: False})

    @property
    def append_label_tokens(self) -> bool:
        # dropping the cross-attention conditioning removes the label
        # positions entirely; dropping input-labels keeps the textual label
        # suffix but skips the classifier-state replacement
        return self.use_cross_attention_splice

    @property
    def splice_classifier_states(self) -> bool:
        return self.use_cross_attention_splice and self.use_input_labels


@dataclass
class TrainReport:
    seed: int
    steps: list[dict] = field(default_factory=list)
    eval_metrics: list[dict] = field(default_factory=list)
    wall_clock_s: float = 0.0

    def log_step(self, step: int, gen: float, emo: float, kw: float, total: float):
        self.steps.append(
            {"step": step, "gen": gen, "emo": emo, "kw": kw, "total": total}
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"seed": self.seed, "wall_clock_s": self.wall_clock_s}) + "\n")
            for rec in self.steps:
                fh.write(json.dumps({"kind": "step", **rec}) + "\n")
            for rec in self.eval_metrics:
                fh.write(json.dumps({"kind": "eval", **rec}) + "\n")


# ---------------------------------------------------------------------------
# losses


def loss_generation(logits_sequence: torch.Tensor, target_ids: torch.Tensor) -> torch.Tensor:
    """Summed negative log-likelihood of the targets under the logits."""
    if logits_sequence.shape[0] != target_ids.shape[0]:
        raise LengthMismatch(
            f"{logits_sequence.shape[0]} logits vs {target_ids.shape[0]} targets"
        )
    log_probs = F.log_softmax(logits_sequence, dim=-1)
    picked = log_probs.gather(-1, target_ids.unsqueeze(-1)).squeeze(-1)
    return -picked.sum()


def _mse(a: torch.Tensor, eta: torch.Tensor) -> torch.Tensor:
    if a.shape != eta.shape:
        raise LengthMismatch(f"{tuple(a.shape)} vs {tuple(eta.shape)}")
    if a.numel() == 0:
        raise LengthMismatch("empty attention/target vectors")
    return ((eta - a) ** 2).mean()


def loss_emotion(a: torch.Tensor, eta_emo: torch.Tensor) -> torch.Tensor:
    return _mse(a, eta_emo)


def loss_keyword(a: torch.Tensor, eta_kw: torch.Tensor) -> torch.Tensor:
    return _mse(a, eta_kw)


def joint_loss(gen, emo, kw, w: LossWeights):
    return w.gamma1 * gen + w.gamma2 * emo + w.gamma3 * kw


# ---------------------------------------------------------------------------
# decoder input assembly


@dataclass
class UtteranceSlot:
    utterance: Utterance
    span: tuple[int, int]                 # text token positions, end exclusive
    label_positions: dict[str, int]       # tag -> position (empty if no labels)


@dataclass
class DecoderInput:
    tokens: list[str]
    slots: list[UtteranceSlot]


def build_decoder_input(
    conversation_utterances,
    labels_per_utterance,
    vocab: Vocabulary | None = None,
    max_len: int = 256,
    include_label_tokens: bool = True,
) -> DecoderInput:
    """Flatten a context: [CLS] u1 <emo:.> <cs:.> <str:.> [SEP] u2 ...

    ``labels_per_utterance``: list of (emo, cs, strategy) label triples
    aligned with the utterances.  Truncation drops oldest utterances whole so
    the most recent context stays intact.
    """
    utts = list(conversation_utterances)
    labels = list(labels_per_utterance)
    if len(utts) != len(labels):
        raise LengthMismatch(f"{len(utts)} utterances vs {len(labels)} label triples")

    def assemble(utts_, labels_):
        tokens = [CLS]
        slots = []
        for utt, (emo, cs, strategy) in zip(utts_, labels_):
            start = len(tokens)
            tokens.extend(tokenize(utt.text))
            span = (start, len(tokens))
            positions = {}
            if include_label_tokens:
                for tag, label, taxonomy in (
                    ("emo", emo, "emotion"),
                    ("cs", cs, "cs"),
                    ("str", strategy, "strategy"),
                ):
                    positions[tag] = len(tokens)
                    tokens.append(label_token(taxonomy, label))
            tokens.append(SEP)
            slots.append(UtteranceSlot(utt, span, positions))
        return DecoderInput(tokens=tokens, slots=slots)

    while True:
        built = assemble(utts, labels)
        if len(built.tokens) <= max_len or len(utts) <= 1:
            break
        utts, labels = utts[1:], labels[1:]
    if len(built.tokens) > max_len:
        raise LengthMismatch(
            f"single utterance needs {len(built.tokens)} tokens > max_len {max_len}"
        )
    return built


def gold_labels(utt: Utterance):
    return (utt.emo, utt.cs, utt.strategy)


# ---------------------------------------------------------------------------
# optimization helpers


def make_optimizer(params, lr: float = 1e-3, warmup: int = 50):
    opt = torch.optim.AdamW(params, lr=lr)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt,
        lambda step: min((step + 1) ** -0.5, (step + 1) * warmup ** -1.5)
        * warmup ** 0.5,
    )
    return opt, sched


def _check_finite(loss: torch.Tensor, what: str):
    if not torch.isfinite(loss):
        raise DivergenceError(f"{what} loss became non-finite: {loss.item()}")


def _pad_batch(id_lists, pad_id, seg_lists=None):
    T = max(len(x) for x in id_lists)
    ids = torch.full((len(id_lists), T), pad_id, dtype=torch.long)
    segs = torch.zeros((len(id_lists), T), dtype=torch.long)
    for i, row in enumerate(id_lists):
        ids[i, : len(row)] = torch.tensor(row, dtype=torch.long)
        if seg_lists is not None:
            segs[i, : len(seg_lists[i])] = torch.tensor(seg_lists[i], dtype=torch.long)
    return ids, segs


# ---------------------------------------------------------------------------
# phase 1: masked pretraining


def pretrain_encoder(
    corpus: Corpus,
    d: KnowledgeDict,
    sched: MaskSchedule,
    cfg: ModelConfig,
    seed: int,
    vocab: Vocabulary | None = None,
    steps: int = 50,
    batch_size: int = 8,
    lr: float = 1e-3,
    progressive: bool = True,
) -> tuple[PretrainModel, Vocabulary, list[float]]:
    """Minimize MLM + NSP cross-entropy over progressively masked examples."""
    torch.manual_seed(seed)
    rng = random.Random(seed)
    if vocab is None:
        vocab = Vocabulary.build(corpus)
    if not progressive:
        sched = replace(sched, lambdas=(0.0,) * 5)
    model = PretrainModel(cfg, vocab)
    model.train()
    opt, lr_sched = make_optimizer(model.parameters(), lr=lr)
    vocab_tokens = [vocab.tokens[i] for i in vocab.text_token_ids()]

    losses = []
    for step in range(steps):
        stage = current_stage(step, steps, sched) if progressive else 1
        examples = pretraining_examples(
            corpus, d, sched, rng, stage, batch_size, vocab_tokens=vocab_tokens
        )
        id_rows = [vocab.encode(ex.tokens) for ex in examples]
        seg_rows = [ex.segment_ids for ex in examples]
        ids, segs = _pad_batch(id_rows, vocab.pad_id, seg_rows)
        token_logits, nsp_logits = model(ids, segs)

        mlm_terms = []
        for i, ex in enumerate(examples):
            for pos, orig in ex.mlm_targets.items():
                target = torch.tensor([vocab.ids.get(orig, vocab.unk_id)])
                mlm_terms.append(
                    F.cross_entropy(token_logits[i, pos].unsqueeze(0), target)
                )
        mlm_loss = (
            torch.stack(mlm_terms).mean()
            if mlm_terms
            else torch.zeros((), dtype=token_logits.dtype)
        )
        nsp_target = torch.tensor([int(ex.nsp_label) for ex in examples])
        nsp_loss = F.cross_entropy(nsp_logits, nsp_target)
        loss = mlm_loss + nsp_loss
        _check_finite(loss, "pretraining")

        opt.zero_grad()
        loss.backward()
        opt.step()
        lr_sched.step()
        losses.append(float(loss.item()))
    model.eval()
    return model, vocab, losses


# ---------------------------------------------------------------------------
# phase 2: classifier fine-tuning


def _utterance_ids(utt: Utterance, vocab: Vocabulary) -> list[int]:
    return vocab.encode([CLS] + tokenize(utt.text) + [SEP])


def train_classifiers(
    corpus: Corpus,
    emo_encoder: PretrainModel,
    kw_encoder: PretrainModel,
    cfg: ModelConfig,
    vocab: Vocabulary,
    seed: int,
    dev_corpus: Corpus | None = None,
    epochs: int = 3,
    batch_size: int = 32,
    lr: float = 1e-3,
) -> tuple[dict[str, ClassifierModel], dict[str, float]]:
    """Fine-tune one classifier per taxonomy.

    Emotion fine-tunes the emotion-dict encoder; CS and strategy each
    fine-tune a copy of the keyword-dict encoder.
    """
    torch.manual_seed(seed)
    rng = random.Random(seed)
    sources = {"emotion": emo_encoder, "cs": kw_encoder, "strategy": kw_encoder}
    utterances = list(corpus.utterances())
    dev = list(dev_corpus.utterances()) if dev_corpus is not None else utterances

    classifiers: dict[str, ClassifierModel] = {}
    accuracies: dict[str, float] = {}
    for taxonomy, source in sources.items():
        model = ClassifierModel(cfg, vocab, taxonomy)
        model.encoder.load_state_dict(clone_module(source.encoder).state_dict())
        model.train()
        opt, lr_sched = make_optimizer(model.parameters(), lr=lr)
        label_index = {label: i for i, label in enumerate(model.labels)}

        def gold(utt):
            return {"emotion": utt.emo, "cs": utt.cs, "strategy": utt.strategy}[taxonomy]

        order = list(utterances)
        for _ in range(epochs):
            rng.shuffle(order)
            for start in range(0, len(order), batch_size):
                batch = order[start : start + batch_size]
                ids, _ = _pad_batch(
                    [_utterance_ids(u, vocab) for u in batch], vocab.pad_id
                )
                logits, _hidden = model(ids)
                target = torch.tensor([label_index[gold(u)] for u in batch])
                loss = F.cross_entropy(logits, target)
                _check_finite(loss, f"{taxonomy} classifier")
                opt.zero_grad()
                loss.backward()
                opt.step()
                lr_sched.step()

        model.eval()
        correct = 0
        with torch.no_grad():
            for start in range(0, len(dev), 256):
                batch = dev[start : start + 256]
                ids, _ = _pad_batch(
                    [_utterance_ids(u, vocab) for u in batch], vocab.pad_id
                )
                logits, _ = model(ids)
                preds = logits.argmax(dim=-1)
                target = torch.tensor([label_index[gold(u)] for u in batch])
                correct += int((preds == target).sum().item())
        accuracies[taxonomy] = correct / len(dev)
        classifiers[taxonomy] = model
    return classifiers, accuracies


# ---------------------------------------------------------------------------
# phase 3: decoder training


@dataclass
class AttentionTargets:
    eta_emo: torch.Tensor
    eta_kw: torch.Tensor
    span: tuple[int, int]


def attention_targets(
    decoder_input: DecoderInput,
    va_lexicon: VALexicon,
    keyword_extractor,
    rescale_eta: bool = True,
    keywords_per_utterance: int = 3,
) -> AttentionTargets | None:
    """Intensity targets over the most recent SPEAKER utterance span."""
    speaker_slots = [
        s for s in decoder_input.slots if s.utterance.role is Role.SPEAKER
    ]
    if not speaker_slots:
        return None
    slot = speaker_slots[-1]
    start, end = slot.span
    span_tokens = decoder_input.tokens[start:end]
    emo = torch.tensor(
        [emotion_intensity(t, va_lexicon) for t in span_tokens], dtype=torch.float64
    )
    if rescale_eta:
        emo = emo / 2.0  # map [0, 2] onto the attention-weight range [0, 1]
    kw_map = keyword_intensity(span_tokens, keyword_extractor, k=keywords_per_utterance)
    kw = torch.tensor([kw_map[i] for i in range(len(span_tokens))], dtype=torch.float64)
    return AttentionTargets(eta_emo=emo, eta_kw=kw, span=slot.span)


def decoder_training_pairs(corpus: Corpus):
    """(context utterances, listener response) pairs from every LISTENER turn."""
    pairs = []
    for conv in corpus.conversations:
        for i, utt in enumerate(conv.utterances):
            if utt.role is Role.LISTENER:
                pairs.append((conv.utterances[:i], utt))
    return pairs


def _encode_context(
    context,
    classifiers: dict[str, ClassifierModel],
    extra_encoder: TransformerEncoder,
    vocab: Vocabulary,
    cfg: ModelConfig,
    ablation: AblationConfig,
    use_gold_labels: bool = True,
):
    """-> (spliced memory [S, D], DecoderInput, predicted/gold label triples)."""
    triples = []
    cls_states = []  # per utterance: dict tag -> state
    for utt in context:
        ids = torch.tensor([_utterance_ids(utt, vocab)], dtype=torch.long)
        states = {}
        if use_gold_labels:
            triple = gold_labels(utt)
        else:
            triple = None
        preds = {}
        for taxonomy, tag in (("emotion", "emo"), ("cs", "cs"), ("strategy", "str")):
            label, _logits, cls_state = classifiers[taxonomy].classify(ids)
            preds[tag] = label
            states[tag] = cls_state.detach()
        if triple is None:
            triple = (preds["emo"], preds["cs"], preds["str"])
        triples.append(triple)
        cls_states.append(states)

    built = build_decoder_input(
        context,
        triples,
        vocab,
        max_len=cfg.max_len,
        include_label_tokens=ablation.append_label_tokens,
    )
    ids = torch.tensor([vocab.encode(built.tokens)], dtype=torch.long)
    hidden = extra_encoder(ids)[0]  # [S, D]

    if ablation.splice_classifier_states:
        # truncation can drop oldest utterances; align states with kept slots
        kept_states = cls_states[len(cls_states) - len(built.slots):]
        positions = []
        merged_states = {}
        for slot, states in zip(built.slots, kept_states):
            for tag, pos in slot.label_positions.items():
                key = f"{tag}@{pos}"
                positions.append((pos, key))
                merged_states[key] = states[tag].to(hidden.dtype)
        hidden, _ = splice_hidden_states(hidden, positions, merged_states)
    return hidden, built, triples


def train_decoder(
    corpus: Corpus,
    classifiers: dict[str, ClassifierModel],
    va_lexicon: VALexicon,
    cfg: ModelConfig,
    vocab: Vocabulary,
    seed: int,
    ablation: AblationConfig = AblationConfig(),
    weights: LossWeights = LossWeights(),
    steps: int = 300,
    batch_size: int = 8,
    lr: float = 1e-3,
    rescale_eta: bool = True,
    extra_encoder: TransformerEncoder | None = None,
    keyword_extractor=None,
) -> tuple[Decoder, TransformerEncoder, TrainReport]:
    """Teacher-forced decoder training on LISTENER responses (joint loss)."""
    torch.manual_seed(seed)
    rng = random.Random(seed)
    t0 = time.monotonic()
    if extra_encoder is None:
        extra_encoder = TransformerEncoder(cfg, len(vocab), vocab.pad_id)
    if keyword_extractor is None:
        keyword_extractor = TfidfKeywordExtractor(corpus)
    decoder = Decoder(cfg, len(vocab), vocab.pad_id)
    decoder.train()
    extra_encoder.train()
    for m in classifiers.values():
        m.eval()

    params = list(decoder.parameters()) + list(extra_encoder.parameters())
    opt, lr_sched = make_optimizer(params, lr=lr)
    pairs = decoder_training_pairs(corpus)
    if not pairs:
        raise ValueError("corpus has no LISTENER responses to train on")

    # zero-weighted attention terms are skipped outright so the optimizer
    # trajectory is bit-identical to a pure-MLE run
    use_attention = ablation.use_attention_loss and (
        weights.gamma2 > 0 or weights.gamma3 > 0
    )
    effective = (
        weights if use_attention else LossWeights(weights.gamma1, 0.0, 0.0)
    )
    report = TrainReport(seed=seed)

    for step in range(steps):
        batch = [pairs[rng.randrange(len(pairs))] for _ in range(batch_size)]
        gen_sum = torch.zeros(())
        emo_sum = torch.zeros(())
        kw_sum = torch.zeros(())
        n_tokens = 0
        n_att = 0
        for context, response in batch:
            memory, built, _ = _encode_context(
                context, classifiers, extra_encoder, vocab, cfg, ablation
            )
            resp_ids = vocab.encode(tokenize(response.text) + [SEP])
            dec_in = torch.tensor([vocab.cls_id] + resp_ids[:-1], dtype=torch.long)
            targets = torch.tensor(resp_ids, dtype=torch.long)
            logits, record = decoder(dec_in, memory)
            gen_sum = gen_sum + loss_generation(logits[0], targets)
            n_tokens += len(resp_ids)

            if use_attention:
                att = attention_targets(
                    built, va_lexicon, keyword_extractor, rescale_eta=rescale_eta
                )
                if att is not None:
                    a = attention_per_token(record, att.span)
                    emo_sum = emo_sum + loss_emotion(a, att.eta_emo.to(a.dtype))
                    kw_sum = kw_sum + loss_keyword(a, att.eta_kw.to(a.dtype))
                    n_att += 1

        gen = gen_sum / max(n_tokens, 1)
        emo = emo_sum / max(n_att, 1)
        kw = kw_sum / max(n_att, 1)
        total = joint_loss(gen, emo, kw, effective)
        _check_finite(total, "decoder")
        opt.zero_grad()
        total.backward()
        opt.step()
        lr_sched.step()
        report.log_step(
            step, float(gen.item()), float(emo.item()), float(kw.item()),
            float(total.item()),
        )

    report.wall_clock_s = time.monotonic() - t0
    decoder.eval()
    extra_encoder.eval()
    return decoder, extra_encoder, report
