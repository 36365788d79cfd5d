"""Command-line entry point.

Subcommands: synth-gen, pretrain, eval-zeroshot, eval-fewshot, verify.
Progress records go to stderr as JSON lines; results go to stdout or --out.
Exit codes: 0 success, 1 verification/metric failure, 2 usage/input error.

Environment: IMUVID_LOG_LEVEL (quiet|info|debug) controls progress verbosity,
IMUVID_WORKERS sets the synthetic-generation worker count (ignored in
deterministic single-worker semantics; generation is seeded per item either
way).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import (
    RunConfig,
    apply_overrides,
    config_to_dict,
    load_config,
    write_config_echo,
)
from .datasets import load_dataset, save_dataset
from .errors import ImuvidError
from .evaluate import (
    FEWSHOT_LABEL_COUNTS,
    FewShotSpec,
    ZeroShotClassifier,
    bootstrap_zeroshot,
    fewshot_protocol,
)
EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_USAGE = 2


class _FilteredLog:
    """Wrap a stream, forwarding only the wanted event granularity."""

    def __init__(self, stream, include_steps: bool):
        self._stream = stream
        self._include_steps = include_steps

    def write(self, line: str):
        if not self._include_steps and '"event": "step"' in line:
            return
        self._stream.write(line)

    def flush(self):
        self._stream.flush()


def _log_stream():
    level = os.environ.get("IMUVID_LOG_LEVEL", "info").lower()
    if level == "quiet":
        return None
    return _FilteredLog(sys.stderr, include_steps=(level == "debug"))


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("IMUVID_WORKERS", "1")))
    except ValueError:
        return 1


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _write_report(report_obj: dict, out: str | None) -> None:
    text = json.dumps(report_obj, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _echo_next_to(cfg: RunConfig, out_path: str | None) -> None:
    if out_path:
        parent = Path(out_path).parent
        parent.mkdir(parents=True, exist_ok=True)
        write_config_echo(cfg, parent)


# -- subcommands ---------------------------------------------------------------------


def cmd_synth_gen(args) -> int:
    from .synthetic import gen_prototypes, generate_dataset

    cfg = _load_run_config(args)
    if args.seed is not None:
        cfg = apply_overrides(cfg, [f"synth.seed={args.seed}"])
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise ImuvidError(f"output path {out} exists and is not a directory")
    workers = 1 if args.deterministic else _worker_count()
    ds = generate_dataset(cfg.synth, workers=workers)
    protos = gen_prototypes(cfg.synth, per_class=cfg.zeroshot.prototypes_per_class)
    ds.items.extend(protos)
    manifest = save_dataset(ds, out)
    write_config_echo(cfg, out)
    counts = {}
    for it in ds.items:
        counts[it.split] = counts.get(it.split, 0) + 1
    print(
        json.dumps(
            {"manifest": str(manifest), "items": len(ds.items), "per_split": counts},
            indent=2,
        )
    )
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from .align import CrossModalAligner
    from .evaluate import WindowClassifier
    from .imu_encoder import MaskedPretrainer
    from .serialize import save_aligner, save_classifier, save_masked

    cfg = _load_run_config(args)
    if args.epochs is not None:
        section = {"cross": "align", "masked": "masked", "supervised": "supervised"}[args.mode]
        cfg = apply_overrides(cfg, [f"{section}.epochs={args.epochs}"])
    ds = load_dataset(args.data)
    train = ds.split("train")
    if len(train) == 0:
        raise ImuvidError(f"manifest {args.data} has no train-split items")
    log = _log_stream()
    _echo_next_to(cfg, args.out)

    if args.mode == "cross":
        if not train.has_clips():
            raise ImuvidError("cross-modal pretraining requires clips for every train item")
        aligner = CrossModalAligner(
            patch_config=cfg.patch,
            imu_config=cfg.imu_encoder,
            video_config=cfg.video_encoder,
            proj_dim=cfg.align.proj_dim,
            proj_hidden=cfg.align.proj_hidden,
            loss=cfg.align.loss,
            init_temperature=cfg.align.init_temperature,
            init_bias=cfg.align.init_bias,
            epochs=cfg.align.epochs,
            batch_size=cfg.align.batch_size,
            lr=cfg.align.lr,
            weight_decay=cfg.align.weight_decay,
            seed=cfg.seed,
            log_stream=log,
        )
        aligner.fit(train.items)
        save_aligner(aligner, args.out)
        history = aligner.history_
    elif args.mode == "masked":
        pre = MaskedPretrainer(
            patch_config=cfg.patch,
            imu_config=cfg.imu_encoder,
            mask_ratio=cfg.masked.mask_ratio,
            epochs=cfg.masked.epochs,
            batch_size=cfg.masked.batch_size,
            lr=cfg.masked.lr,
            weight_decay=cfg.masked.weight_decay,
            seed=cfg.seed,
            log_stream=log,
        )
        pre.fit(train.windows())
        save_masked(pre, args.out)
        history = pre.history_
    else:  # supervised
        clf = WindowClassifier(
            mode="scratch",
            patch_config=cfg.patch,
            imu_config=cfg.imu_encoder,
            epochs=cfg.supervised.epochs,
            batch_size=cfg.supervised.batch_size,
            head_lr=cfg.supervised.head_lr,
            encoder_lr=cfg.supervised.encoder_lr,
            weight_decay=cfg.supervised.weight_decay,
            seed=cfg.seed,
            log_stream=log,
        )
        clf.fit(train.windows(), train.labels())
        save_classifier(clf, args.out)
        history = clf.history_

    loss_log = Path(args.out).with_suffix(".losses.jsonl")
    with loss_log.open("w") as fh:
        for record in history:
            fh.write(json.dumps(record) + "\n")
    print(json.dumps({"checkpoint": str(args.out), "epochs": len(history),
                      "loss_log": str(loss_log)}, indent=2))
    return EXIT_OK


def _labeled_split(ds, split: str):
    subset = ds.split(split) if split != "all-labeled" else ds
    items = [it for it in subset.items if it.label is not None and it.split != "prototype"]
    if not items:
        raise ImuvidError(f"no labeled items in split {split!r}")
    from .datasets import PairedDataset

    return PairedDataset(items=items, classes=ds.classes)


def cmd_eval_zeroshot(args) -> int:
    from .serialize import load_aligner

    cfg = _load_run_config(args)
    aligner = load_aligner(args.ckpt)
    ds = load_dataset(args.data)
    eval_ds = _labeled_split(ds, args.split)

    proto_source = load_dataset(args.prototypes) if args.prototypes else ds
    protos = [it for it in proto_source.items if it.split == "prototype"]
    if not protos:
        protos = [it for it in proto_source.items if it.label is not None and it.clip is not None]
    if not protos:
        raise ImuvidError("no prototype clips available")

    class_map = None
    if args.class_map:
        class_map = json.loads(Path(args.class_map).read_text())
        class_map = {k: int(v) for k, v in class_map.items()}

    clf = ZeroShotClassifier(aligner, class_map=class_map)
    clf.fit([it.clip for it in protos], [it.label for it in protos])
    report = bootstrap_zeroshot(
        eval_ds.windows(),
        eval_ds.labels(),
        clf,
        repeats=args.repeats if args.repeats is not None else cfg.zeroshot.repeats,
        frac=args.frac if args.frac is not None else cfg.zeroshot.frac,
        seed=cfg.seed,
    )
    _echo_next_to(cfg, args.out)
    _write_report(report.to_dict(), args.out)
    return EXIT_OK


def cmd_eval_fewshot(args) -> int:
    from .serialize import load_imu_encoder

    cfg = _load_run_config(args)
    ds = load_dataset(args.data)
    eval_ds = _labeled_split(ds, args.split)

    encoder = None
    if args.mode in ("probe", "finetune"):
        if not args.ckpt:
            raise ImuvidError(f"mode {args.mode!r} requires --ckpt")
        encoder, _ = load_imu_encoder(args.ckpt)

    if args.labels == "all":
        counts = list(cfg.fewshot.label_counts)
    else:
        counts = [int(args.labels)]

    repeats = args.repeats if args.repeats is not None else cfg.fewshot.repeats
    section = {"probe": cfg.probe, "finetune": cfg.finetune, "scratch": cfg.supervised}[args.mode]
    kwargs: dict = {
        "epochs": section.epochs,
        "batch_size": section.batch_size,
        "weight_decay": section.weight_decay,
        "patch_config": cfg.patch,
        "imu_config": cfg.imu_encoder,
    }
    if args.mode == "probe":
        kwargs["head_lr"] = section.lr
    else:
        kwargs["head_lr"] = section.head_lr
        kwargs["encoder_lr"] = section.encoder_lr

    rows = []
    for n in counts:
        spec = FewShotSpec(
            labels_per_class=n,
            repeats=repeats,
            heldout_per_class=cfg.fewshot.heldout_per_class,
            mode=args.mode,
        )
        report = fewshot_protocol(
            eval_ds.windows(), eval_ds.labels(), spec, encoder=encoder,
            seed=cfg.seed, **kwargs,
        )
        rows.append({"labels_per_class": n, "report": report.to_dict()})
    _echo_next_to(cfg, args.out)
    _write_report({"mode": args.mode, "split": args.split, "rows": rows}, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suites

    results = run_suites(args.suite, inject_fault=args.inject_fault, cases=args.cases)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(r.line())
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY_FAIL if failed else EXIT_OK


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imuvid",
        description="Cross-modal IMU/video pretraining and evaluation workflows",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run-config file")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument(
            "--set", action="append", metavar="SECTION.KEY=VALUE",
            help="override a config value (repeatable)",
        )
        p.add_argument(
            "--deterministic", action="store_true",
            help="force single-worker execution (generation is seeded either way)",
        )

    p = sub.add_parser("synth-gen", help="generate the synthetic paired dataset")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("pretrain", help="pretrain encoders")
    common(p)
    p.add_argument("--mode", required=True, choices=("cross", "masked", "supervised"))
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--epochs", type=int, default=None, help="override epoch count")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval-zeroshot", help="prototype zero-shot evaluation")
    common(p)
    p.add_argument("--ckpt", required=True, help="alignment checkpoint")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--prototypes", default=None, help="manifest holding prototype clips")
    p.add_argument("--class-map", default=None, help="JSON file mapping prototype labels")
    p.add_argument("--split", default="heldout",
                   choices=("train", "heldout", "ood", "all-labeled"))
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--frac", type=float, default=None)
    p.add_argument("--out", default=None, help="report path (stdout if omitted)")
    p.set_defaults(func=cmd_eval_zeroshot)

    p = sub.add_parser("eval-fewshot", help="few-shot probing/finetuning evaluation")
    common(p)
    p.add_argument("--ckpt", default=None, help="pretrained checkpoint (probe/finetune)")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--mode", required=True, choices=("probe", "finetune", "scratch"))
    p.add_argument("--labels", default="all",
                   choices=tuple(str(c) for c in FEWSHOT_LABEL_COUNTS) + ("all",))
    p.add_argument("--split", default="ood",
                   choices=("train", "heldout", "ood", "all-labeled"))
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--out", default=None, help="report path (stdout if omitted)")
    p.set_defaults(func=cmd_eval_fewshot)

    p = sub.add_parser("verify", help="run the built-in verification suites")
    p.add_argument("--suite", default="all",
                   choices=("gradcheck", "metrics", "formats", "all"))
    p.add_argument("--inject-fault", action="store_true",
                   help="negative control: corrupt a gradient so the suite fails")
    p.add_argument("--cases", type=int, default=1000)
    p.set_defaults(func=cmd_verify)

    return parser


def generate_reference() -> str:
    """Render the CLI flags and every config key into a markdown page."""
    import dataclasses
    import io

    from .config import RunConfig, config_to_dict

    out = io.StringIO()
    out.write("# Command and configuration reference\n\n")
    out.write("This page is generated from the argument parser and the run-config\n")
    out.write("dataclasses (`python -c \"from imuvid.cli import generate_reference; "
              "print(generate_reference())\"`).\n\n")
    parser = build_parser()
    out.write("## Commands\n\n```\n" + parser.format_help() + "```\n")
    sub_actions = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    for name, sub in sorted(sub_actions[0].choices.items()):
        out.write(f"\n### `imuvid {name}`\n\n```\n" + sub.format_help() + "```\n")
    out.write("\n## Config keys and defaults\n\n")
    out.write("Overridable via a `--config` JSON file or `--set section.key=value`.\n\n")
    cfg = RunConfig()
    defaults = config_to_dict(cfg)
    out.write("| key | default |\n|-----|---------|\n")

    def walk(prefix, node):
        for key, value in node.items():
            dotted = f"{prefix}{key}"
            if isinstance(value, dict):
                walk(dotted + ".", value)
            else:
                out.write(f"| `{dotted}` | `{json.dumps(value)}` |\n")

    walk("", defaults)
    out.write("\nEnvironment: `IMUVID_LOG_LEVEL` (quiet, info, debug), "
              "`IMUVID_WORKERS` (synthetic generation worker count).\n")
    return out.getvalue()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ImuvidError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as err:
        print(f"error: lookup failed: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
