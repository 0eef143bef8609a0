"""Single entry-point CLI for the whole pipeline.

Subcommands: stats, synth, split, build-dicts, pretrain, train-cls,
train-dec, generate, eval, chat, serve.  Exit codes: 0 success, 1 runtime
error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .config import ExperimentConfig, load_config
from .corpus import (
    Corpus,
    CorpusError,
    corpus_stats,
    format_stats,
    parse_corpus,
    serialize_corpus,
    split_corpus,
    synthesize_corpus,
)
from .lexicons import (
    ExtractorConfig,
    LexiconError,
    LexiconSentimentExtractor,
    TfidfKeywordExtractor,
    build_dictionaries,
    builtin_va_lexicon,
    load_dictionaries,
    load_va_lexicon,
    save_dictionaries,
)


def _read_corpus(path: str) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh.read())


def _write_corpus(corpus: Corpus, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_corpus(corpus))


def _load_lexicon(args):
    if getattr(args, "lexicon", None):
        return load_va_lexicon(args.lexicon)
    return builtin_va_lexicon()


def cmd_stats(args):
    report = corpus_stats(_read_corpus(args.corpus))
    print(format_stats(report))
    return 0


def cmd_synth(args):
    corpus = synthesize_corpus(args.seed, args.n)
    _write_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} conversations to {args.out}")
    return 0


def cmd_split(args):
    ratios = tuple(float(x) for x in args.ratios.split(","))
    corpus = _read_corpus(args.corpus)
    names = ("train", "dev", "test")
    for name, part in zip(names, split_corpus(corpus, ratios, args.seed)):
        if part is None:
            continue
        path = f"{args.out_prefix}.{name}.csconv"
        _write_corpus(part, path)
        print(f"{name}: {len(part)} conversations -> {path}")
    return 0


def cmd_build_dicts(args):
    corpus = _read_corpus(args.corpus)
    lex = _load_lexicon(args)
    cfg = ExtractorConfig(
        lambda_emo=args.lambda_emo, keywords_per_utterance=args.keywords
    )
    emo, kw = build_dictionaries(
        corpus, cfg, LexiconSentimentExtractor(lex), TfidfKeywordExtractor(corpus)
    )
    save_dictionaries(emo, kw, args.out)
    print(f"emotion dict: {len(emo)} entries; keyword dict: {len(kw)} entries")
    return 0


def cmd_pretrain(args):
    import torch

    from .training import pretrain_encoder

    cfg = load_config(args.config)
    corpus = _read_corpus(args.corpus)
    emo_dict, kw_dict = load_dictionaries(args.dicts)
    d = emo_dict if args.dict == "emotion" else kw_dict
    sched = cfg.emotion_schedule if args.dict == "emotion" else cfg.keyword_schedule
    seed = args.seed if args.seed is not None else cfg.seed
    progressive = args.ablation != "nm"
    model, vocab, losses = pretrain_encoder(
        corpus, d, sched, cfg.model, seed,
        steps=cfg.pretrain_steps, batch_size=cfg.pretrain_batch_size,
        lr=cfg.pretrain_lr, progressive=progressive,
    )
    torch.save(
        {
            "kind": "pretrain_encoder",
            "dict": args.dict,
            "config": cfg.model.to_dict(),
            "vocab": vocab.tokens,
            "state_dict": model.state_dict(),
            "final_loss": losses[-1],
        },
        args.out,
    )
    print(f"pretrained {args.dict} encoder: loss {losses[0]:.3f} -> {losses[-1]:.3f}")
    return 0


def _load_encoder(path, cfg):
    import torch

    from .model import ModelConfig, PretrainModel, Vocabulary

    blob = torch.load(path, map_location="cpu", weights_only=False)
    vocab = Vocabulary(blob["vocab"])
    model = PretrainModel(ModelConfig.from_dict(blob["config"]), vocab)
    model.load_state_dict(blob["state_dict"])
    return model, vocab


def cmd_train_cls(args):
    import torch

    from .training import train_classifiers

    cfg = load_config(args.config)
    corpus = _read_corpus(args.corpus)
    dev = _read_corpus(args.dev) if args.dev else None
    emo_model, vocab = _load_encoder(args.emo_encoder, cfg)
    kw_model, _ = _load_encoder(args.kw_encoder, cfg)
    seed = args.seed if args.seed is not None else cfg.seed
    classifiers, acc = train_classifiers(
        corpus, emo_model, kw_model, cfg.model, vocab, seed, dev_corpus=dev,
        epochs=cfg.classifier_epochs, batch_size=cfg.classifier_batch_size,
        lr=cfg.classifier_lr,
    )
    torch.save(
        {
            "kind": "classifiers",
            "config": cfg.model.to_dict(),
            "vocab": vocab.tokens,
            "state": {k: m.state_dict() for k, m in classifiers.items()},
            "accuracies": acc,
        },
        args.out,
    )
    print("accuracies:", {k: round(v, 4) for k, v in acc.items()})
    return 0


def _load_classifiers(path):
    import torch

    from .model import ClassifierModel, ModelConfig, Vocabulary

    blob = torch.load(path, map_location="cpu", weights_only=False)
    cfg = ModelConfig.from_dict(blob["config"])
    vocab = Vocabulary(blob["vocab"])
    out = {}
    for taxonomy, sd in blob["state"].items():
        m = ClassifierModel(cfg, vocab, taxonomy)
        m.load_state_dict(sd)
        m.eval()
        out[taxonomy] = m
    return out, cfg, vocab


def cmd_train_dec(args):
    from .model import ModelBundle
    from .training import AblationConfig, train_decoder

    cfg = load_config(args.config)
    corpus = _read_corpus(args.corpus)
    classifiers, model_cfg, vocab = _load_classifiers(args.classifiers)
    lex = _load_lexicon(args)
    seed = args.seed if args.seed is not None else cfg.seed
    ablation = AblationConfig.from_name(args.ablation)
    decoder, extra, report = train_decoder(
        corpus, classifiers, lex, model_cfg, vocab, seed,
        ablation=ablation, weights=cfg.loss_weights,
        steps=cfg.decoder_steps, batch_size=cfg.decoder_batch_size,
        lr=cfg.decoder_lr, rescale_eta=cfg.rescale_eta,
    )
    bundle = ModelBundle(
        cfg=model_cfg, vocab=vocab, classifiers=classifiers,
        extra_encoder=extra, decoder=decoder,
        metadata={"version": __version__, "ablation": args.ablation, "seed": seed},
    )
    bundle.save(args.out)
    if args.report:
        report.save(args.report)
    last = report.steps[-1]
    print(f"trained decoder: step {last['step']} total loss {last['total']:.4f}")
    return 0


def cmd_generate(args):
    from .corpus import CSLabel, EmotionLabel, Role, StrategyLabel, Utterance
    from .generation import GenerationParams, sample_response
    from .model import ModelBundle

    cfg = load_config(args.config)
    bundle = ModelBundle.load(args.bundle)
    seed = args.seed if args.seed is not None else cfg.seed
    params = GenerationParams(
        temperature=cfg.generation.temperature, top_k=cfg.generation.top_k,
        top_p=cfg.generation.top_p, max_new_tokens=cfg.generation.max_new_tokens,
        seed=seed,
    )
    context = [
        Utterance(
            role=Role.SPEAKER if i % 2 == 0 else Role.LISTENER, text=text,
            cs=CSLabel.NONE, emo=EmotionLabel.NONE, strategy=StrategyLabel.NONE,
        )
        for i, text in enumerate(args.message)
    ]
    text, triple = sample_response(context, bundle, params)
    emo, cs, strategy = triple
    print(text)
    print(f"(labels: {cs} / {emo} / {strategy})")
    return 0


def cmd_eval(args):
    from .generation import GenerationParams
    from .metrics import run_eval
    from .model import ModelBundle

    cfg = load_config(args.config)
    bundle = ModelBundle.load(args.bundle)
    testset = _read_corpus(args.corpus)
    seed = args.seed if args.seed is not None else cfg.seed
    params = GenerationParams(
        temperature=cfg.generation.temperature, top_k=cfg.generation.top_k,
        top_p=cfg.generation.top_p, max_new_tokens=cfg.generation.max_new_tokens,
        seed=seed,
    )
    report = run_eval(testset, bundle, params)
    report.save(args.out, transcript_path=args.transcripts)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_chat(args):
    from .generation import GenerationParams
    from .model import ModelBundle
    from .service import ChatSession, new_session_id, respond

    cfg = load_config(args.config)
    bundle = ModelBundle.load(args.bundle)
    session = ChatSession(session_id=new_session_id(), params=cfg.generation)
    seed = args.seed if args.seed is not None else cfg.seed
    print("interactive chat; empty line or Ctrl-D exits")
    turn = 0
    while True:
        try:
            message = input("you> ").strip()
        except EOFError:
            break
        if not message:
            break
        result = respond(session, message, bundle, seed + turn)
        print(
            f"bot> {result['response_text']}  "
            f"({result['cs']} / {result['emo']} / {result['strategy']})"
        )
        turn += 1
    return 0


def cmd_serve(args):
    import uvicorn

    from .model import ModelBundle
    from .service import create_app

    cfg = load_config(args.config)
    bundle = ModelBundle.load(args.bundle)
    app = create_app(
        bundle, default_params=cfg.generation,
        transcript_dir=args.transcripts, static_dir=args.static,
    )
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csd", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=True):
        if config:
            p.add_argument("--config", default=None, help="experiment TOML file")
        if seed:
            p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("corpus")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="train/dev/test split")
    p.add_argument("corpus")
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("build-dicts", help="build emotion/keyword dictionaries")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--lexicon", default=None, help="VA lexicon TSV")
    p.add_argument("--lambda-emo", type=float, default=0.5, dest="lambda_emo")
    p.add_argument("--keywords", type=int, default=3)
    p.set_defaults(func=cmd_build_dicts)

    p = sub.add_parser("pretrain", help="masked pretraining of one encoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dicts", required=True)
    p.add_argument("--dict", choices=("emotion", "keyword"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablation", choices=("full", "nm", "il", "ca", "al"),
                   default="full")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-cls", help="fine-tune the three classifiers")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dev", default=None)
    p.add_argument("--emo-encoder", required=True)
    p.add_argument("--kw-encoder", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_train_cls)

    p = sub.add_parser("train-dec", help="train the decoder + extra encoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--classifiers", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--lexicon", default=None)
    p.add_argument("--ablation", choices=("full", "nm", "il", "ca", "al"),
                   default="full")
    common(p)
    p.set_defaults(func=cmd_train_dec)

    p = sub.add_parser("generate", help="one-shot generation")
    p.add_argument("--bundle", required=True)
    p.add_argument("message", nargs="+", help="context utterances, oldest first")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="automatic metrics on a test corpus")
    p.add_argument("--bundle", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--transcripts", default=None)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("chat", help="terminal chat REPL")
    p.add_argument("--bundle", required=True)
    common(p)
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("serve", help="HTTP inference service")
    p.add_argument("--bundle", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--transcripts", default=None)
    p.add_argument("--static", default=None, help="static UI directory")
    common(p, seed=False)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (CorpusError, LexiconError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
