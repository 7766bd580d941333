"""Command-line driver: prep, train, generate, evaluate, analyze.

Configuration is a flat key=value text file validated against a fixed schema;
command-line flags override file values, and the effective configuration is
echoed into every output directory. Exit codes: 0 ok, 2 input error,
3 training abort, 4 checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checkpoint as ckpt
from .corpus import (
    DatasetError,
    EncodeConfig,
    Vocabulary,
    build_vocab,
    detokenize,
    encode_sample,
    kept_segments,
    load_jsonl,
    tokenize,
)
from .metrics import (
    bleu_n,
    distinct_n,
    embedding_corpus_scores,
    mean_spearman,
    p_at_n,
    rouge_l_corpus,
    WordVectorTable,
    write_metric_report,
)
from .model import CKLModel, ModelConfig
from .training import TrainingAbort, TrainingConfig, train, write_trace
from .weak_supervision import build_index, build_pseudo_gt, save_label_cache

SCHEMA: dict[str, tuple[type, object]] = {
    # model
    "d_model": (int, 64),
    "n_heads": (int, 4),
    "n_encoder_layers": (int, 2),
    "n_decoder_layers": (int, 2),
    "d_ff": (int, 128),
    "max_source_len": (int, 1024),
    "max_target_len": (int, 64),
    "m_max": (int, 10),
    "top_n": (int, 1),
    "use_loss_klw": (bool, True),
    "use_loss_clwr": (bool, True),
    "use_loss_clwk": (bool, True),
    "use_ck_dep": (bool, True),
    # training
    "learning_rate": (float, 5e-5),
    "epochs": (int, 10),
    "batch_size": (int, 16),
    "seed": (int, 0),
    "data_fraction": (float, 1.0),
    "grad_clip": (float, 1.0),
    # vocabulary build
    "min_freq": (int, 1),
    "max_size": (int, 50000),
    # decoding
    "beam": (int, 1),
    "max_len": (int, 0),
    # paths
    "data": (str, ""),
    "vocab": (str, ""),
    "checkpoint": (str, ""),
    "embeddings": (str, ""),
    "generations": (str, ""),
    "out": (str, ""),
}

MODEL_KEYS = (
    "d_model",
    "n_heads",
    "n_encoder_layers",
    "n_decoder_layers",
    "d_ff",
    "max_source_len",
    "max_target_len",
    "m_max",
    "top_n",
    "use_loss_klw",
    "use_loss_clwr",
    "use_loss_clwk",
    "use_ck_dep",
)


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw: str):
    typ, _default = SCHEMA[key]
    if typ is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes"):
            return True
        if lowered in ("0", "false", "no"):
            return False
        raise ConfigError(f"config key {key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw.strip())
    except ValueError as err:
        raise ConfigError(f"config key {key}: {err}") from err


def load_config_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}: line {lineno}: expected key=value")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            if key not in SCHEMA:
                raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw)
    return values


class RunConfig:
    """Defaults, overlaid by a config file, overlaid by command-line flags."""

    def __init__(self, args: argparse.Namespace):
        self.values = {key: default for key, (_t, default) in SCHEMA.items()}
        self.explicit: set[str] = set()
        if getattr(args, "config", None):
            file_values = load_config_file(args.config)
            self.values.update(file_values)
            self.explicit.update(file_values)
        for key in SCHEMA:
            flag = getattr(args, key, None)
            if flag is not None:
                self.values[key] = flag
                self.explicit.add(key)
        for no_flag, key in (
            ("no_loss_klw", "use_loss_klw"),
            ("no_loss_clwr", "use_loss_clwr"),
            ("no_loss_clwk", "use_loss_clwk"),
            ("no_ck_dep", "use_ck_dep"),
        ):
            if getattr(args, no_flag, False):
                self.values[key] = False
                self.explicit.add(key)
        if getattr(args, "greedy", False):
            self.values["beam"] = 1
            self.explicit.add("beam")

    def __getitem__(self, key: str):
        return self.values[key]

    def require_path(self, key: str) -> Path:
        if not self.values[key]:
            raise ConfigError(f"missing required path: {key}")
        return Path(self.values[key])

    def model_config(self, vocab_size: int) -> ModelConfig:
        kwargs = {key: self.values[key] for key in MODEL_KEYS}
        return ModelConfig(vocab_size=vocab_size, **kwargs)

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            learning_rate=self.values["learning_rate"],
            epochs=self.values["epochs"],
            batch_size=self.values["batch_size"],
            seed=self.values["seed"],
            data_fraction=self.values["data_fraction"],
            grad_clip=self.values["grad_clip"],
        )

    def encode_config(self) -> EncodeConfig:
        return EncodeConfig(
            m_max=self.values["m_max"],
            max_source_len=self.values["max_source_len"],
            max_target_len=self.values["max_target_len"],
        )

    def echo(self, out_dir: Path) -> None:
        lines = [f"{key}={self.values[key]}" for key in sorted(SCHEMA)]
        (out_dir / "effective_config.txt").write_text("\n".join(lines) + "\n")


def _ensure_out(cfg: RunConfig) -> Path:
    out = cfg.require_path("out")
    out.mkdir(parents=True, exist_ok=True)
    cfg.echo(out)
    return out


def _build_labels(samples, cfg: RunConfig):
    enc_cfg = cfg.encode_config()
    kept = [kept_segments(s, enc_cfg) for s in samples]
    index = build_index([k[1] for k in kept])
    labels = [
        build_pseudo_gt(context, knowledge, response, index, cfg["top_n"])
        for context, knowledge, response in kept
    ]
    return kept, index, labels


def cmd_prep(cfg: RunConfig) -> int:
    data = cfg.require_path("data")
    out = _ensure_out(cfg)
    samples = load_jsonl(data)
    vocab = build_vocab(samples, min_freq=cfg["min_freq"], max_size=cfg["max_size"])
    vocab.save(out / "vocab.txt")
    kept, index, labels = _build_labels(samples, cfg)
    save_label_cache(out / "labels.jsonl", labels)
    stats = {
        "samples": len(samples),
        "mean_context_utterances": sum(len(k[0]) for k in kept) / len(kept),
        "mean_knowledge_sentences": sum(len(k[1]) for k in kept) / len(kept),
        "tfidf_documents": index.doc_count,
        "tfidf_terms": len(index.df),
        "vocab_size": len(vocab),
    }
    (out / "tfidf_stats.json").write_text(json.dumps(stats, sort_keys=True, indent=2) + "\n")
    print(
        f"prep: n={stats['samples']} mean_m={stats['mean_context_utterances']:.2f} "
        f"mean_l={stats['mean_knowledge_sentences']:.2f} vocab={len(vocab)}"
    )
    return 0


def cmd_train(cfg: RunConfig) -> int:
    data = cfg.require_path("data")
    vocab = Vocabulary.load(cfg.require_path("vocab"))
    out = _ensure_out(cfg)
    samples = load_jsonl(data)
    model_cfg = cfg.model_config(len(vocab))
    result = train(samples, vocab, model_cfg, cfg.training_config())
    params = dict(result.model.parameters())
    params.update(result.awl_params.named())
    ckpt.save(out / "checkpoint.ckpt", model_cfg, params)
    write_trace(out / "trace.csv", result.trace, result.effective_n, len(samples))
    print(
        f"train: steps={len(result.trace)} effective_n={result.effective_n} "
        f"final_nll={result.trace[-1].l_nll:.4f}"
    )
    return 0


def _restore_for_inference(cfg: RunConfig, vocab: Vocabulary, force: bool) -> CKLModel:
    """Load the checkpoint's own config; explicit keys must agree unless forced."""
    path = cfg.require_path("checkpoint")
    model = ckpt.restore_model(path)
    if model.config.vocab_size != len(vocab):
        raise ckpt.CheckpointError(
            f"checkpoint vocab_size={model.config.vocab_size} but vocabulary has {len(vocab)}"
        )
    if not force:
        mismatched = {
            key: (cfg[key], getattr(model.config, key))
            for key in MODEL_KEYS
            if key in cfg.explicit and cfg[key] != getattr(model.config, key)
        }
        if mismatched:
            detail = ", ".join(
                f"{k}: requested {want} but checkpoint has {got}"
                for k, (want, got) in mismatched.items()
            )
            raise ckpt.CheckpointError(f"config mismatch ({detail}); use --force to override")
    return model


def cmd_generate(cfg: RunConfig, force: bool = False) -> int:
    data = cfg.require_path("data")
    vocab = Vocabulary.load(cfg.require_path("vocab"))
    out = _ensure_out(cfg)
    model = _restore_for_inference(cfg, vocab, force)
    samples = load_jsonl(data)
    beam = cfg["beam"]
    max_len = cfg["max_len"] or None
    mode = "greedy" if beam <= 1 else "beam"
    records = []
    for sample in samples:
        enc = encode_sample(sample, vocab, model.config.encode_config())
        ids = model.generate(enc, mode=mode, beam_size=max(1, beam), max_len=max_len)
        weights = model.latent_weights(enc)
        content = [i for i in ids if i not in (0, 1, 2)]
        records.append(
            {
                "token_ids": ids,
                "tokens": vocab.decode(content),
                "text": detokenize(vocab.decode(content)),
                **weights.lists(),
            }
        )
    with open(out / "generations.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"generate: wrote {len(records)} records")
    return 0


def _load_generations(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as err:
                raise DatasetError(f"{path}: line {lineno}: {err.msg}") from err
    return records


def cmd_evaluate(cfg: RunConfig) -> int:
    generations = _load_generations(cfg.require_path("generations"))
    samples = load_jsonl(cfg.require_path("data"))
    out = _ensure_out(cfg)
    if len(generations) != len(samples):
        raise DatasetError(
            f"{len(generations)} generations for {len(samples)} samples"
        )
    cands = [list(rec["tokens"]) for rec in generations]
    refs = [tokenize(s.response) for s in samples]
    n_pairs = len(cands)
    rows = [(f"bleu-{k}", bleu_n(cands, refs, k), n_pairs, 0) for k in range(1, 5)]
    rows.append(("rouge-l", rouge_l_corpus(cands, refs), n_pairs, 0))
    for k in (1, 2):
        rows.append((f"distinct-{k}", distinct_n(cands, k), n_pairs, 0))
    if cfg["embeddings"]:
        table = WordVectorTable.load(cfg["embeddings"])
        means, excluded = embedding_corpus_scores(cands, refs, table)
        for name in ("average", "extrema", "greedy"):
            rows.append((f"embedding-{name}", means[name], n_pairs - excluded, excluded))
    write_metric_report(out / "metrics.csv", rows)
    for metric, value, *_ in rows:
        print(f"{metric}: {value:.4f}")
    return 0


def cmd_analyze(cfg: RunConfig) -> int:
    generations = _load_generations(cfg.require_path("generations"))
    samples = load_jsonl(cfg.require_path("data"))
    out = _ensure_out(cfg)
    if len(generations) != len(samples):
        raise DatasetError(f"{len(generations)} generations for {len(samples)} samples")
    _kept, _index, labels = _build_labels(samples, cfg)
    reranked, original, targets = [], [], []
    spearman_pairs = {"klw": [], "clwr": [], "clwk": []}
    for rec, label in zip(generations, labels):
        for key in ("klw", "clwr", "clwk"):
            if key not in rec:
                raise DatasetError(f"generation record lacks latent weights ({key})")
        klw = [float(x) for x in rec["klw"]]
        if len(klw) != len(label.gt_klw) or len(rec["clwr"]) != len(label.gt_clwr):
            raise DatasetError("latent weight lengths do not match the dataset")
        order = sorted(range(len(klw)), key=lambda i: (-klw[i], i))
        reranked.append(order)
        original.append(list(range(len(klw))))
        targets.append(label.top1_rk_index)
        spearman_pairs["klw"].append((klw, [float(v) for v in label.gt_klw]))
        spearman_pairs["clwr"].append(
            ([float(x) for x in rec["clwr"]], [float(v) for v in label.gt_clwr])
        )
        spearman_pairs["clwk"].append(
            ([float(x) for x in rec["clwk"]], [float(v) for v in label.gt_clwk])
        )
    lines = ["metric,param,value,n,n_excluded"]
    for n in range(1, 11):
        lines.append(f"p_at_n_original,{n},{p_at_n(original, targets, n)!r},{len(targets)},0")
    for n in range(1, 11):
        lines.append(f"p_at_n_reranked,{n},{p_at_n(reranked, targets, n)!r},{len(targets)},0")
    for key in ("klw", "clwr", "clwk"):
        mean, defined, undefined = mean_spearman(spearman_pairs[key])
        lines.append(f"spearman_{key},,{mean!r},{defined},{undefined}")
    (out / "analysis.csv").write_text("\n".join(lines) + "\n")
    print(f"analyze: wrote {len(lines) - 1} rows")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ckl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")

    p_prep = sub.add_parser("prep", help="vocabulary, TF-IDF stats, label cache")
    shared(p_prep)
    p_prep.add_argument("--data", default=None, help="dataset JSON Lines file")
    p_prep.add_argument("--min-freq", dest="min_freq", type=int, default=None)
    p_prep.add_argument("--max-size", dest="max_size", type=int, default=None)
    p_prep.add_argument("--top-n", dest="top_n", type=int, default=None)

    p_train = sub.add_parser("train", help="optimise on a prepared dataset")
    shared(p_train)
    p_train.add_argument("--data", default=None)
    p_train.add_argument("--vocab", default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p_train.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p_train.add_argument("--data-fraction", dest="data_fraction", type=float, default=None)
    p_train.add_argument("--top-n", dest="top_n", type=int, default=None)
    p_train.add_argument("--no-loss-klw", action="store_true")
    p_train.add_argument("--no-loss-clwr", action="store_true")
    p_train.add_argument("--no-loss-clwk", action="store_true")
    p_train.add_argument("--no-ck-dep", action="store_true")

    p_gen = sub.add_parser("generate", help="decode responses with latent weights")
    shared(p_gen)
    p_gen.add_argument("--data", default=None)
    p_gen.add_argument("--vocab", default=None)
    p_gen.add_argument("--checkpoint", default=None)
    p_gen.add_argument("--beam", type=int, default=None)
    p_gen.add_argument("--greedy", action="store_true")
    p_gen.add_argument("--max-len", dest="max_len", type=int, default=None)
    p_gen.add_argument("--force", action="store_true", help="ignore config mismatch")
    p_gen.add_argument("--no-ck-dep", action="store_true")

    p_eval = sub.add_parser("evaluate", help="corpus metrics for generations")
    shared(p_eval)
    p_eval.add_argument("--generations", default=None)
    p_eval.add_argument("--data", default=None)
    p_eval.add_argument("--embeddings", default=None)

    p_an = sub.add_parser("analyze", help="latent-weight ranking and correlations")
    shared(p_an)
    p_an.add_argument("--generations", default=None)
    p_an.add_argument("--data", default=None)
    p_an.add_argument("--top-n", dest="top_n", type=int, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig(args)
        if args.command == "prep":
            return cmd_prep(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "generate":
            return cmd_generate(cfg, force=args.force)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "analyze":
            return cmd_analyze(cfg)
        parser.error(f"unknown command {args.command}")
    except TrainingAbort as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except ckpt.CheckpointError as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except (ConfigError, DatasetError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
