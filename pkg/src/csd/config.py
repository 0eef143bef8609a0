"""Experiment configuration: TOML file with optional sections overriding the
built-in defaults.

Recognized sections/keys:

    [model]       d_model, n_heads, n_layers_encoder, n_layers_decoder,
                  ffn_dim, max_len, cnn_channels, cnn_kernel_sizes, attention_tap
    [masking]     emotion_lambdas, keyword_lambdas, stage_boundaries,
                  base_mask_rate
    [pretrain]    steps, batch_size, lr
    [classifiers] epochs, batch_size, lr
    [decoder]     steps, batch_size, lr, gamma1, gamma2, gamma3, rescale_eta
    [generation]  temperature, top_k, top_p, max_new_tokens
    [run]         seed, ablation
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field

from .generation import GenerationParams
from .masking import EMOTION_LAMBDAS, KEYWORD_LAMBDAS, MaskSchedule
from .model import ModelConfig
from .training import AblationConfig, LossWeights


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    emotion_schedule: MaskSchedule = field(
        default_factory=lambda: MaskSchedule(lambdas=EMOTION_LAMBDAS)
    )
    keyword_schedule: MaskSchedule = field(
        default_factory=lambda: MaskSchedule(lambdas=KEYWORD_LAMBDAS)
    )
    loss_weights: LossWeights = field(default_factory=LossWeights)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    generation: GenerationParams = field(default_factory=GenerationParams)
    pretrain_steps: int = 60
    pretrain_batch_size: int = 8
    pretrain_lr: float = 1e-3
    classifier_epochs: int = 3
    classifier_batch_size: int = 32
    classifier_lr: float = 1e-3
    decoder_steps: int = 300
    decoder_batch_size: int = 8
    decoder_lr: float = 1e-3
    rescale_eta: bool = True
    seed: int = 0


def load_config(path=None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)

    model = raw.get("model", {})
    if model:
        base = cfg.model.to_dict()
        base.update(model)
        cfg.model = ModelConfig.from_dict(base)

    masking = raw.get("masking", {})
    common = {}
    if "stage_boundaries" in masking:
        common["stage_boundaries"] = tuple(masking["stage_boundaries"])
    if "base_mask_rate" in masking:
        common["base_mask_rate"] = masking["base_mask_rate"]
    cfg.emotion_schedule = MaskSchedule(
        lambdas=tuple(masking.get("emotion_lambdas", EMOTION_LAMBDAS)), **common
    )
    cfg.keyword_schedule = MaskSchedule(
        lambdas=tuple(masking.get("keyword_lambdas", KEYWORD_LAMBDAS)), **common
    )

    pre = raw.get("pretrain", {})
    cfg.pretrain_steps = pre.get("steps", cfg.pretrain_steps)
    cfg.pretrain_batch_size = pre.get("batch_size", cfg.pretrain_batch_size)
    cfg.pretrain_lr = pre.get("lr", cfg.pretrain_lr)

    cls = raw.get("classifiers", {})
    cfg.classifier_epochs = cls.get("epochs", cfg.classifier_epochs)
    cfg.classifier_batch_size = cls.get("batch_size", cfg.classifier_batch_size)
    cfg.classifier_lr = cls.get("lr", cfg.classifier_lr)

    dec = raw.get("decoder", {})
    cfg.decoder_steps = dec.get("steps", cfg.decoder_steps)
    cfg.decoder_batch_size = dec.get("batch_size", cfg.decoder_batch_size)
    cfg.decoder_lr = dec.get("lr", cfg.decoder_lr)
    cfg.rescale_eta = dec.get("rescale_eta", cfg.rescale_eta)
    cfg.loss_weights = LossWeights(
        gamma1=dec.get("gamma1", 1.0),
        gamma2=dec.get("gamma2", 0.5),
        gamma3=dec.get("gamma3", 0.5),
    )

    gen = raw.get("generation", {})
    cfg.generation = GenerationParams(
        temperature=gen.get("temperature", 0.7),
        top_k=gen.get("top_k", 8),
        top_p=gen.get("top_p", 0.5),
        max_new_tokens=gen.get("max_new_tokens", 48),
        seed=raw.get("run", {}).get("seed", 0),
    )

    run = raw.get("run", {})
    cfg.seed = run.get("seed", cfg.seed)
    cfg.ablation = AblationConfig.from_name(run.get("ablation", "full"))
    return cfg
