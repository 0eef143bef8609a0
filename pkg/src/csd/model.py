"""Neural components: token vocabulary, small transformer encoder with
MLM/NSP heads, TextCNN classification head, GPT-style decoder with
cross-attention, and hidden-state splicing of classifier summaries.

Encoder blocks are post-LN: h = LN(x + MHAtt(x)); out = LN(h + FFN(h)).
Decoder blocks are pre-LN with causal self-attention, cross-attention to the
(spliced) encoder states, and an FFN.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import CSLabel, EmotionLabel, StrategyLabel, tokenize
from .masking import CLS, MASK, PAD, SEP, SPECIAL_TOKENS, UNK


class LengthError(Exception):
    pass


class PositionError(Exception):
    pass


TAXONOMIES = {
    "cs": list(CSLabel),
    "emotion": list(EmotionLabel),
    "strategy": list(StrategyLabel),
}

_TAG_PREFIX = {"cs": "cs", "emotion": "emo", "strategy": "str"}


def label_token(taxonomy: str, label) -> str:
    return f"<{_TAG_PREFIX[taxonomy]}:{label.slug}>"


def all_label_tokens() -> list[str]:
    return [
        label_token(taxonomy, label)
        for taxonomy in ("emotion", "cs", "strategy")
        for label in TAXONOMIES[taxonomy]
    ]


def label_from_token(token: str):
    """Inverse of label_token: '<cs:Inquiry>' -> ('cs', CSLabel.INQUIRY)."""
    for taxonomy, labels in TAXONOMIES.items():
        for label in labels:
            if token == label_token(taxonomy, label):
                return taxonomy, label
    raise ValueError(f"not a label token: {token!r}")


class Vocabulary:
    """Dense token <-> id maps; specials and label tokens are atomic."""

    def __init__(self, tokens: list[str]):
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = list(tokens)
        self.ids = {t: i for i, t in enumerate(self.tokens)}
        for special in SPECIAL_TOKENS:
            if special not in self.ids:
                raise ValueError(f"missing special token {special}")
        self.pad_id = self.ids[PAD]
        self.unk_id = self.ids[UNK]
        self.cls_id = self.ids[CLS]
        self.sep_id = self.ids[SEP]
        self.mask_id = self.ids[MASK]
        self.label_token_ids = {
            t: self.ids[t] for t in all_label_tokens() if t in self.ids
        }

    @classmethod
    def build(cls, corpus, extra_tokens=()):
        seen = set()
        for utt in corpus.utterances():
            seen.update(tokenize(utt.text))
        tokens = (
            list(SPECIAL_TOKENS)
            + all_label_tokens()
            + sorted(seen)
            + [t for t in extra_tokens if t not in seen]
        )
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.ids.get(t, self.unk_id) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]

    def text_token_ids(self) -> list[int]:
        """Ids of plain text tokens (no specials, no label tokens)."""
        skip = set(SPECIAL_TOKENS) | set(all_label_tokens())
        return [i for t, i in self.ids.items() if t not in skip]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


@dataclass
class ModelConfig:
    d_model: int = 128
    n_heads: int = 4
    n_layers_encoder: int = 2
    n_layers_decoder: int = 2
    ffn_dim: int = 0  # 0 -> 4 * d_model
    max_len: int = 256
    cnn_kernel_sizes: tuple[int, ...] = (2, 3, 4)
    cnn_channels: int = 64
    attention_tap: str = "last"  # cross-attention layer used for a_j

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.ffn_dim == 0:
            self.ffn_dim = 4 * self.d_model
        if any(k > self.max_len for k in self.cnn_kernel_sizes):
            raise ValueError("cnn kernel sizes must each be <= max_len")

    def to_dict(self):
        return {
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers_encoder": self.n_layers_encoder,
            "n_layers_decoder": self.n_layers_decoder,
            "ffn_dim": self.ffn_dim,
            "max_len": self.max_len,
            "cnn_kernel_sizes": list(self.cnn_kernel_sizes),
            "cnn_channels": self.cnn_channels,
            "attention_tap": self.attention_tap,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["cnn_kernel_sizes"] = tuple(d.get("cnn_kernel_sizes", (2, 3, 4)))
        return cls(**d)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = nn.MultiheadAttention(cfg.d_model, cfg.n_heads, batch_first=True)
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.ffn_dim),
            nn.ReLU(),
            nn.Linear(cfg.ffn_dim, cfg.d_model),
        )
        self.ln2 = nn.LayerNorm(cfg.d_model)

    def forward(self, x, key_padding_mask=None):
        attn_out, _ = self.attn(x, x, x, key_padding_mask=key_padding_mask,
                                need_weights=False)
        h = self.ln1(x + attn_out)
        return self.ln2(h + self.ffn(h))


class TransformerEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, vocab_size: int, pad_id: int):
        super().__init__()
        self.cfg = cfg
        self.pad_id = pad_id
        self.tok_emb = nn.Embedding(vocab_size, cfg.d_model, padding_idx=pad_id)
        self.pos_emb = nn.Embedding(cfg.max_len, cfg.d_model)
        self.seg_emb = nn.Embedding(2, cfg.d_model)
        self.layers = nn.ModuleList(
            EncoderLayer(cfg) for _ in range(cfg.n_layers_encoder)
        )

    def forward(self, ids: torch.Tensor, segment_ids: torch.Tensor | None = None):
        """ids: [B, T] -> hidden [B, T, d_model]."""
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        B, T = ids.shape
        if T > self.cfg.max_len:
            raise LengthError(f"sequence length {T} > max_len {self.cfg.max_len}")
        positions = torch.arange(T, device=ids.device).unsqueeze(0).expand(B, T)
        x = self.tok_emb(ids) + self.pos_emb(positions)
        if segment_ids is not None:
            if segment_ids.dim() == 1:
                segment_ids = segment_ids.unsqueeze(0)
            x = x + self.seg_emb(segment_ids)
        padding_mask = ids == self.pad_id
        for layer in self.layers:
            x = layer(x, key_padding_mask=padding_mask)
        return x


class PretrainModel(nn.Module):
    """Encoder plus MLM and NSP heads."""

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary):
        super().__init__()
        self.encoder = TransformerEncoder(cfg, len(vocab), vocab.pad_id)
        self.mlm_head = nn.Linear(cfg.d_model, len(vocab))
        self.nsp_head = nn.Linear(cfg.d_model, 2)

    def forward(self, ids, segment_ids=None):
        hidden = self.encoder(ids, segment_ids)
        return self.mlm_head(hidden), self.nsp_head(hidden[:, 0, :])


class TextCNNHead(nn.Module):
    """1-D convolutions over the hidden sequence, max-pooled per channel."""

    def __init__(self, cfg: ModelConfig, n_classes: int):
        super().__init__()
        self.kernel_sizes = cfg.cnn_kernel_sizes
        self.convs = nn.ModuleList(
            nn.Conv1d(cfg.d_model, cfg.cnn_channels, k) for k in self.kernel_sizes
        )
        self.fc = nn.Linear(cfg.cnn_channels * len(self.kernel_sizes), n_classes)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        """hidden: [B, T, D] -> logits [B, n_classes]."""
        x = hidden.transpose(1, 2)  # [B, D, T]
        need = max(self.kernel_sizes) - x.shape[-1]
        if need > 0:
            x = F.pad(x, (0, need))  # zero rows stand in for PAD embeddings
        pooled = [F.relu(conv(x)).max(dim=-1).values for conv in self.convs]
        return self.fc(torch.cat(pooled, dim=-1))


class ClassifierModel(nn.Module):
    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, taxonomy: str):
        super().__init__()
        self.taxonomy = taxonomy
        self.labels = TAXONOMIES[taxonomy]
        self.encoder = TransformerEncoder(cfg, len(vocab), vocab.pad_id)
        self.head = TextCNNHead(cfg, len(self.labels))

    def forward(self, ids, segment_ids=None):
        hidden = self.encoder(ids, segment_ids)
        return self.head(hidden), hidden

    @torch.no_grad()
    def classify(self, ids, segment_ids=None):
        """-> (label, logits [n_classes], cls_state [d_model]) for one sequence."""
        logits, hidden = self.forward(ids, segment_ids)
        idx = int(torch.argmax(logits[0]).item())  # argmax takes lowest index on ties
        return self.labels[idx], logits[0], hidden[0, 0, :]


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = nn.MultiheadAttention(cfg.d_model, cfg.n_heads, batch_first=True)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = nn.MultiheadAttention(cfg.d_model, cfg.n_heads, batch_first=True)
        self.ln3 = nn.LayerNorm(cfg.d_model)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.ffn_dim),
            nn.ReLU(),
            nn.Linear(cfg.ffn_dim, cfg.d_model),
        )

    def forward(self, x, memory, causal_mask, memory_padding_mask=None):
        h = self.ln1(x)
        attn_out, _ = self.self_attn(h, h, h, attn_mask=causal_mask, need_weights=False)
        x = x + attn_out
        h = self.ln2(x)
        cross_out, cross_weights = self.cross_attn(
            h, memory, memory,
            key_padding_mask=memory_padding_mask,
            need_weights=True, average_attn_weights=False,
        )
        x = x + cross_out
        x = x + self.ffn(self.ln3(x))
        return x, cross_weights  # [B, H, Tq, Tk]


class Decoder(nn.Module):
    """GPT-style causal decoder with cross-attention to encoder states."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, pad_id: int):
        super().__init__()
        self.cfg = cfg
        self.pad_id = pad_id
        self.tok_emb = nn.Embedding(vocab_size, cfg.d_model, padding_idx=pad_id)
        self.pos_emb = nn.Embedding(cfg.max_len, cfg.d_model)
        self.layers = nn.ModuleList(
            DecoderLayer(cfg) for _ in range(cfg.n_layers_decoder)
        )
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.lm_head = nn.Linear(cfg.d_model, vocab_size)

    def forward(self, ids: torch.Tensor, memory: torch.Tensor,
                memory_padding_mask=None):
        """ids [B, T], memory [B, S, D] -> (logits [B, T, V], cross-attn record).

        The record is the attention-tap layer's cross-attention weights,
        shape [B, H, T, S].
        """
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        B, T = ids.shape
        if T > self.cfg.max_len:
            raise LengthError(f"prefix length {T} > max_len {self.cfg.max_len}")
        if memory.dim() == 2:
            memory = memory.unsqueeze(0)
        positions = torch.arange(T, device=ids.device).unsqueeze(0).expand(B, T)
        x = self.tok_emb(ids) + self.pos_emb(positions)
        causal_mask = torch.triu(
            torch.ones(T, T, dtype=torch.bool, device=ids.device), diagonal=1
        )
        tap = (
            len(self.layers) - 1
            if self.cfg.attention_tap == "last"
            else int(self.cfg.attention_tap)
        )
        record = None
        for i, layer in enumerate(self.layers):
            x, cross = layer(x, memory, causal_mask, memory_padding_mask)
            if i == tap:
                record = cross
        logits = self.lm_head(self.ln_f(x))
        return logits, record


def splice_hidden_states(
    hidden: torch.Tensor,
    label_positions: list[tuple[int, str]],
    classifier_states: dict[str, torch.Tensor],
) -> tuple[torch.Tensor, list[tuple[int, str]]]:
    """Replace rows at label-token positions with classifier summary states.

    ``hidden``: [T, D].  ``label_positions``: (position, tag) with tag in
    {"emo", "cs", "str"}.  Returns (new hidden, replaced positions); empty
    positions -> identity.
    """
    out = hidden.clone()
    replaced = []
    for pos, tag in label_positions:
        if not 0 <= pos < hidden.shape[0]:
            raise PositionError(f"label position {pos} outside sequence")
        if tag not in classifier_states:
            raise PositionError(f"no classifier state for tag {tag!r}")
        state = classifier_states[tag]
        if state.shape != hidden[pos].shape:
            raise PositionError(
                f"classifier state width {tuple(state.shape)} != {tuple(hidden[pos].shape)}"
            )
        out[pos] = state
        replaced.append((pos, tag))
    return out, replaced


def attention_per_token(
    record: torch.Tensor, utterance_span: tuple[int, int]
) -> torch.Tensor:
    """Per-encoder-token attention over a span, renormalized to sum 1.

    ``record``: [B, H, Tq, Tk] or [H, Tq, Tk] cross-attention weights.
    ``utterance_span``: (start, end) key positions, end exclusive.
    """
    if record.dim() == 4:
        record = record[0]
    start, end = utterance_span
    span = record[:, :, start:end]          # [H, Tq, span]
    a = span.mean(dim=(0, 1))               # mean over heads and queries
    total = a.sum()
    if total <= 0:
        return torch.full_like(a, 1.0 / max(len(a), 1))
    return a / total


# ---------------------------------------------------------------------------
# bundle / checkpoint

CHECKPOINT_VERSION = 1


@dataclass
class ModelBundle:
    """Everything needed for inference: vocab, config, and all weights."""

    cfg: ModelConfig
    vocab: Vocabulary
    classifiers: dict[str, ClassifierModel]  # keys: emotion, cs, strategy
    extra_encoder: TransformerEncoder
    decoder: Decoder
    metadata: dict = field(default_factory=dict)

    def eval(self):
        for m in self.classifiers.values():
            m.eval()
        self.extra_encoder.eval()
        self.decoder.eval()
        return self

    def save(self, path):
        torch.save(
            {
                "version": CHECKPOINT_VERSION,
                "config": self.cfg.to_dict(),
                "vocab": self.vocab.tokens,
                "classifiers": {
                    k: m.state_dict() for k, m in self.classifiers.items()
                },
                "extra_encoder": self.extra_encoder.state_dict(),
                "decoder": self.decoder.state_dict(),
                "metadata": self.metadata,
            },
            path,
        )

    @classmethod
    def load(cls, path):
        blob = torch.load(path, map_location="cpu", weights_only=False)
        if blob.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
        cfg = ModelConfig.from_dict(blob["config"])
        vocab = Vocabulary(blob["vocab"])
        classifiers = {}
        for taxonomy in ("emotion", "cs", "strategy"):
            m = ClassifierModel(cfg, vocab, taxonomy)
            m.load_state_dict(blob["classifiers"][taxonomy])
            classifiers[taxonomy] = m
        extra = TransformerEncoder(cfg, len(vocab), vocab.pad_id)
        extra.load_state_dict(blob["extra_encoder"])
        decoder = Decoder(cfg, len(vocab), vocab.pad_id)
        decoder.load_state_dict(blob["decoder"])
        bundle = cls(
            cfg=cfg, vocab=vocab, classifiers=classifiers,
            extra_encoder=extra, decoder=decoder,
            metadata=blob.get("metadata", {}),
        )
        return bundle.eval()


def clone_module(module: nn.Module) -> nn.Module:
    return copy.deepcopy(module)
