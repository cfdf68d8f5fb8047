"""Command-line entry point: ``layoutlm-desk <command> [options]``.

Exit codes: 0 success, 1 validation error (bad config, bad flags, task/data
mismatch), 2 data error (unreadable or malformed inputs, unwritable output),
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import traceback
from pathlib import Path

from . import __version__
from . import numkernel as nk
from . import synthcorpus as sc
from .errors import ConfigError, ContractError, DataError
from .finetune_eval import (
    FinetuneHP,
    evaluate,
    finetune_docclass,
    finetune_seqlabel,
    prepare_docs,
    write_metrics,
)
from .finetune_eval.metrics import METRICS_FORMAT_VERSION
from .ingest import (
    FORMATS,
    dataset_summary,
    dump_dataset,
    file_features,
    load_labeled_dataset,
    parse_hocr,
    pseudo_features,
)
from .ingest.features import FEAT_VERSION
from .model import (
    FORMAT_VERSION as CKPT_VERSION,
    Checkpoint,
    ModelConfig,
    adapt_params,
    bieso_tagset,
    init_from_text_checkpoint,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .pretrain import MaskingPolicy, read_loss_curve, run_pretrain, write_loss_curve
from .runconfig import RunConfig, load_config, require_paths
from .textproc import Vocabulary

log = logging.getLogger("layoutlm_desk")

MANIFEST_FORMAT = 1
TASKS = {
    # cli task -> (container format, model task)
    "form": ("funsd_like", "seqlabel"),
    "receipt": ("slots_like", "seqlabel"),
    "classify": ("classes_like", "docclass"),
}
SYNTH_FILES = {
    # file name -> (bundle field, container format)
    "pretrain.jsonl": ("pretrain", "funsd_like"),
    "forms_train.jsonl": ("forms_train", "funsd_like"),
    "forms_dev.jsonl": ("forms_dev", "funsd_like"),
    "receipts_train.jsonl": ("receipts_train", "slots_like"),
    "receipts_dev.jsonl": ("receipts_dev", "slots_like"),
    "classes_train.jsonl": ("classes_train", "classes_like"),
    "classes_dev.jsonl": ("classes_dev", "classes_like"),
}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"usage error: {message}\n{self.format_usage().strip()}")


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"v{__version__}-g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def write_manifest(cfg: RunConfig, command: str, task: str | None = None, **extra) -> Path:
    manifest = {
        "manifest_format": MANIFEST_FORMAT,
        "command": command,
        "task": task,
        "config": cfg.canonical(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "version": version_string(),
        "formats": {"checkpoint": CKPT_VERSION, "metrics": METRICS_FORMAT_VERSION,
                    "features": FEAT_VERSION, "manifest": MANIFEST_FORMAT},
        **extra,
    }
    path = cfg.output_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _manifest_task(config_path) -> str | None:
    if config_path is None or Path(config_path).suffix != ".json":
        return None
    try:
        return json.loads(Path(config_path).read_text(encoding="utf-8")).get("task")
    except (OSError, ValueError, AttributeError):
        return None


def _outdir(cfg: RunConfig) -> Path:
    out = cfg.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    return out


def model_config(cfg: RunConfig, vocab_size: int, **heads) -> ModelConfig:
    m, mod = cfg["model"], cfg["modality"]
    return ModelConfig(layers=m["layers"], hidden=m["hidden"], heads=m["heads"],
                       ffn_dim=m["ffn_dim"], max_len=m["max_len"], vocab_size=vocab_size,
                       img_feat_dim=m["img_feat_dim"], use_layout=mod["use_layout"],
                       use_image=mod["use_image"], **heads)


def masking_policy(cfg: RunConfig) -> MaskingPolicy:
    return MaskingPolicy(**cfg["masking"])


# -- commands ---------------------------------------------------------------

def cmd_validate_config(cfg: RunConfig, args) -> int:
    set_paths = [k for k in ("pretrain", "train", "dev", "vocab", "checkpoint",
                             "text_checkpoint", "features") if cfg["data"][k]]
    require_paths(cfg, set_paths)
    print(f"config ok: hash={cfg.hash()} modality={cfg.modality} seed={cfg.seed}")
    return 0


def cmd_synth(cfg: RunConfig, args) -> int:
    out = cfg.output_dir
    targets = [out / name for name in (*SYNTH_FILES, "vocab.txt")]
    existing = [str(p) for p in targets if p.exists()]
    if existing and not args.force:
        raise ConfigError("refusing to overwrite existing output (pass --force)", existing)
    out = _outdir(cfg)
    s = cfg["synth"]
    bundle = sc.make_bundle(cfg.seed, n_pretrain=s["n_pretrain"],
                            n_forms=(s["n_form_train"], s["n_form_dev"]),
                            n_classes=(s["n_class_train"], s["n_class_dev"]),
                            n_receipts=(s["n_receipt_train"], s["n_receipt_dev"]))
    for name, (attr, fmt) in SYNTH_FILES.items():
        docs = getattr(bundle, attr)
        dump_dataset(docs, out / name, fmt)
        print(f"{name}\t{len(docs)} documents")
    vocab = sc.corpus_vocab(bundle.all_docs(), cfg["model"]["vocab_target"])
    vocab.save(out / "vocab.txt")
    print(f"vocab.txt\t{len(vocab)} tokens")
    write_manifest(cfg, "synth")
    return 0


def _hocr_files(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir()
                       if p.is_file() and p.suffix in (".hocr", ".html", ".xhtml"))
        if not files:
            raise DataError(f"{path}: directory contains no .hocr/.html files")
        return files
    if path.is_file():
        return [path]
    raise DataError(f"{path}: no such file or directory")


def cmd_ingest(cfg: RunConfig, args) -> int:
    path = Path(args.path)
    d = cfg["data"]
    if args.format == "hocr":
        docs = []
        for f in _hocr_files(path):
            try:
                text = f.read_bytes().decode("utf-8")
            except UnicodeDecodeError:
                raise DataError(f"{f}: not valid UTF-8") from None
            try:
                docs.append(parse_hocr(text, doc_id=f.stem))
            except DataError as exc:
                raise type(exc)(f"{f.name}: {exc}") from None
        ids = [doc.doc_id for doc in docs]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate document ids across hOCR files")
    else:
        docs = load_labeled_dataset(path, args.format, slot_keys=d["slot_keys"],
                                    classes=d["classes"],
                                    entity_types=d["entity_types"] if args.format == "funsd_like" else None)
    summary = dataset_summary(docs)
    for k in sorted(summary):
        print(f"{k}\t{summary[k]}")
    if summary.get("clipped_boxes"):
        log.warning("%d boxes exceeded page bounds and were clipped", summary["clipped_boxes"])
    if args.out:
        fmt = "funsd_like" if args.format == "hocr" else args.format
        if args.format == "hocr":
            for doc in docs:
                doc.entities = []
        dump_dataset(docs, args.out, fmt)
        print(f"wrote {len(docs)} documents to {args.out}")
    return 0


def _load_vocab(cfg: RunConfig) -> Vocabulary:
    require_paths(cfg, ["vocab"])
    return Vocabulary.load(cfg["data"]["vocab"])


def cmd_pretrain(cfg: RunConfig, args) -> int:
    require_paths(cfg, ["pretrain"])
    docs = load_labeled_dataset(cfg["data"]["pretrain"], "funsd_like", entity_types=None)
    if cfg["data"]["vocab"]:
        vocab = _load_vocab(cfg)
    else:
        vocab = sc.corpus_vocab(docs, cfg["model"]["vocab_target"])
    use_mdc = cfg["objectives"]["mdc"]
    n_tags = len(docs[0].tags) if use_mdc and docs[0].tags else ModelConfig.num_mdc_tags
    mcfg = model_config(cfg, len(vocab), num_mdc_tags=n_tags)
    examples = sc.encode_pretrain(docs, vocab, mcfg.max_len)
    total = cfg["run"]["steps"]
    o = cfg["optim"]
    opt = nk.OptimizerConfig(initial_lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"],
                             eps=o["eps"], total_steps=max(1, total))
    stop = total if args.stop_at is None else args.stop_at
    if not 0 <= stop <= total:
        raise ConfigError(f"--stop-at must lie in [0, {total}]")
    init = None
    if args.resume:
        init = load_checkpoint(args.resume)
        if init.config != mcfg:
            raise ConfigError("resume checkpoint was trained with a different model config")
    out = _outdir(cfg)
    objectives = ("mvlm", "mdc") if use_mdc else ("mvlm",)

    def progress(rec):
        if rec.step % 50 == 0 or rec.step == stop:
            log.info("step %d lr %.3g mvlm %.4f mdc %.4f", rec.step, rec.lr, rec.mvlm, rec.mdc)

    ckpt, records = run_pretrain(examples, mcfg, opt, objectives=objectives, seed=cfg.seed,
                                 steps=stop, batch_size=cfg["run"]["batch_size"],
                                 policy=masking_policy(cfg), init=init, callback=progress)
    curve = out / "loss_curve.tsv"
    if init is not None and curve.exists():
        start = int(init.meta.get("step", 0))
        records = [r for r in read_loss_curve(curve) if r.step <= start] + records
    ckpt.meta["config_hash"] = cfg.hash()
    save_checkpoint(ckpt, out / "checkpoint.ckpt")
    write_loss_curve(records, curve)
    vocab.save(out / "vocab.txt")
    write_manifest(cfg, "pretrain", steps_completed=stop)
    print(f"pre-trained {stop}/{total} steps -> {out / 'checkpoint.ckpt'}")
    return 0


def _task_setup(cfg: RunConfig, task: str):
    fmt, mtask = TASKS[task]
    d = cfg["data"]
    if task == "form":
        heads = {"tagset": bieso_tagset(d["entity_types"])}
        classes = None
    elif task == "receipt":
        heads = {"tagset": bieso_tagset(d["slot_keys"])}
        classes = None
    else:
        heads = {"num_doc_classes": len(d["classes"])}
        classes = d["classes"]
    return fmt, mtask, heads, classes


_REQUIRED_FIELD = {"funsd_like": "entities", "slots_like": "slots", "classes_like": "label"}


def _check_split_fits(path, fmt: str, task: str) -> None:
    """A record lacking the task's label field means the wrong file was given."""
    files = sorted(Path(path).glob("*.jsonl")) if Path(path).is_dir() else [Path(path)]
    for f in files[:1]:
        try:
            with open(f, encoding="utf-8") as fh:
                first = next((line for line in fh if line.strip()), "")
            rec = json.loads(first) if first else {}
        except (OSError, ValueError):
            return  # the loader reports unreadable data
        if isinstance(rec, dict) and _REQUIRED_FIELD[fmt] not in rec:
            raise ConfigError(f"{f} does not look like {fmt} data required by task {task!r}",
                              [f"first record has no {_REQUIRED_FIELD[fmt]!r} field"])


def _load_split(cfg: RunConfig, key: str, fmt: str, task: str):
    d = cfg["data"]
    _check_split_fits(d[key], fmt, task)
    return load_labeled_dataset(d[key], fmt, slot_keys=d["slot_keys"], classes=d["classes"],
                                entity_types=d["entity_types"] if fmt == "funsd_like" else None)


def _feature_factory(cfg: RunConfig, dim: int):
    path = cfg["data"]["features"]
    if path:
        provider = file_features(path)
        if provider.dim != dim:
            raise ConfigError(f"feature file dim {provider.dim} != model.img_feat_dim {dim}")
        return lambda doc: provider
    return lambda doc: pseudo_features(doc, dim)


def _check_task_fits(ckpt: Checkpoint, task: str, mtask: str, heads: dict):
    c = ckpt.config
    trained_for = ckpt.meta.get("cli_task")
    if trained_for is not None and trained_for != task:
        raise ConfigError(f"checkpoint was fine-tuned for task {trained_for!r}, not {task!r}")
    if mtask == "seqlabel" and c.tagset != tuple(heads["tagset"]):
        raise ConfigError(f"task {task!r} does not match the checkpoint",
                          [f"checkpoint tagset {list(c.tagset)}",
                           f"task tagset {list(heads['tagset'])}"])
    if mtask == "docclass" and c.num_doc_classes != heads["num_doc_classes"]:
        raise ConfigError(f"task {task!r} does not match the checkpoint",
                          [f"checkpoint has {c.num_doc_classes} classes, "
                           f"task has {heads['num_doc_classes']}"])


def cmd_finetune(cfg: RunConfig, args) -> int:
    task = args.task
    fmt, mtask, heads, classes = _task_setup(cfg, task)
    require_paths(cfg, ["train", "dev"])
    d = cfg["data"]
    if d["checkpoint"] and d["text_checkpoint"]:
        raise ConfigError("set at most one of data.checkpoint and data.text_checkpoint")
    vocab = _load_vocab(cfg)
    mcfg = model_config(cfg, len(vocab), **heads)
    if d["text_checkpoint"]:
        require_paths(cfg, ["text_checkpoint"])
        params = init_from_text_checkpoint(mcfg, load_checkpoint(d["text_checkpoint"]), cfg.seed)
        init = "text_checkpoint"
    elif d["checkpoint"]:
        require_paths(cfg, ["checkpoint"])
        src = load_checkpoint(d["checkpoint"])
        params = adapt_params(src.params, src.config, mcfg, cfg.seed)
        init = "checkpoint"
    else:
        params = init_params(mcfg, cfg.seed)
        init = "scratch"
    factory = _feature_factory(cfg, mcfg.img_feat_dim)
    train = prepare_docs(_load_split(cfg, "train", fmt, task), vocab, mcfg, mtask, classes, factory)
    dev = prepare_docs(_load_split(cfg, "dev", fmt, task), vocab, mcfg, mtask, classes, factory)
    hp = FinetuneHP(epochs=cfg["run"]["epochs"], batch_size=cfg["run"]["batch_size"],
                    lr=cfg["optim"]["lr"], seed=cfg.seed)
    out = _outdir(cfg)
    start = Checkpoint(params, mcfg, None, {"init": init, "config_hash": cfg.hash()})

    def progress(epoch, ev):
        key = "f1" if mtask == "seqlabel" else "accuracy"
        log.info("epoch %d dev %s %.4f", epoch, key, ev[key])

    if mtask == "seqlabel":
        res = finetune_seqlabel(start, train, dev, hp, callback=progress)
    else:
        res = finetune_docclass(start, train, dev, hp, class_names=classes, callback=progress)
    res.checkpoint.meta["cli_task"] = task
    save_checkpoint(res.checkpoint, out / "finetuned.ckpt")
    metrics = {**res.metrics, "cli_task": task, "modality": cfg.modality,
               "best_epoch": res.best_epoch, "init": init, "config_hash": cfg.hash()}
    write_metrics(out / "metrics.txt", metrics)
    key = "f1" if mtask == "seqlabel" else "accuracy"
    lines = [f"{i}\t{ev[key]!r}\n" for i, ev in enumerate(res.history, 1)]
    (out / "history.tsv").write_text("".join(lines), encoding="utf-8")
    write_manifest(cfg, "finetune", task)
    print(f"best dev {key} {res.metrics[key]:.4f} at epoch {res.best_epoch} -> {out / 'metrics.txt'}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    task = args.task
    fmt, mtask, heads, classes = _task_setup(cfg, task)
    require_paths(cfg, ["checkpoint", "dev"])
    ckpt = load_checkpoint(cfg["data"]["checkpoint"])
    _check_task_fits(ckpt, task, mtask, heads)
    vocab = _load_vocab(cfg)
    if len(vocab) != ckpt.config.vocab_size:
        raise ConfigError(f"vocabulary has {len(vocab)} tokens, checkpoint expects "
                          f"{ckpt.config.vocab_size}")
    factory = _feature_factory(cfg, ckpt.config.img_feat_dim)
    data = prepare_docs(_load_split(cfg, "dev", fmt, task), vocab, ckpt.config, mtask, classes, factory)
    rec = evaluate(ckpt, data, mtask, classes)
    out = _outdir(cfg)
    write_metrics(out / "eval_metrics.txt", {**rec, "cli_task": task, "config_hash": cfg.hash()})
    write_manifest(cfg, "eval", task)
    key = "f1" if mtask == "seqlabel" else "accuracy"
    print(f"{key} {rec[key]:.4f} on {len(data)} documents -> {out / 'eval_metrics.txt'}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "validate-config": cmd_validate_config,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="INI run config, or a manifest.json written by an earlier run")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable; wins over --config")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="layoutlm-desk",
                description="Desk-scale layout-aware document model: synthesize data, "
                            "pre-train, fine-tune and evaluate.",
                epilog="Exit codes: 0 ok, 1 validation error, 2 data error, 3 internal error.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write synthetic corpora and a vocabulary",
                       description="Write every synthetic split (container formats) plus "
                                   "vocab.txt into run.output_dir; sizes come from [synth].")
    s.add_argument("--force", action="store_true", help="overwrite existing output files")

    s = sub.add_parser("ingest", parents=[common], help="validate a dataset and print statistics",
                       description="Parse and validate hOCR or a labeled container; print "
                                   "document/word/entity counts. Any problem exits non-zero.")
    s.add_argument("path", help="file, or directory (read in sorted name order)")
    s.add_argument("--format", required=True, choices=("hocr",) + FORMATS,
                   help="input format")
    s.add_argument("--out", metavar="PATH", help="also write the documents as a container file")

    s = sub.add_parser("pretrain", parents=[common], help="MVLM (+MDC) pre-training",
                       description="Pre-train on data.pretrain; writes checkpoint.ckpt, "
                                   "loss_curve.tsv, vocab.txt and manifest.json.")
    s.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint saved mid-run")
    s.add_argument("--stop-at", type=int, metavar="STEP",
                   help="stop after this global step (the schedule still spans run.steps)")

    for name, what in (("finetune", "fine-tune on data.train, select on data.dev"),
                       ("eval", "evaluate data.checkpoint on data.dev")):
        s = sub.add_parser(name, parents=[common], help=what, description=what + ".")
        s.add_argument("--task", choices=tuple(TASKS),
                       help="form (entity labeling), receipt (slot filling) or classify; "
                            "defaults to the task stored in a manifest given as --config")

    sub.add_parser("validate-config", parents=[common], help="validate a run config",
                   description="Report every violation in the config and referenced paths.")
    return p


def _run(argv) -> int:
    args = build_parser().parse_args(argv)
    if args.command is None:
        raise UsageError("usage error: a command is required (see --help)")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.command in ("finetune", "eval") and args.task is None:
        args.task = _manifest_task(args.config)
        if args.task not in TASKS:
            raise UsageError(f"usage error: --task is required (one of {', '.join(TASKS)})")
    cfg = load_config(args.config, args.overrides)
    return COMMANDS[args.command](cfg, args)


def main(argv=None) -> int:
    try:
        return _run(argv)
    except SystemExit as exc:  # --help / --version
        return exc.code if isinstance(exc.code, int) else 0
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
