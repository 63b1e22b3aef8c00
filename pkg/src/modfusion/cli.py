"""``modfusion`` command line: gen-synth, extract, train, eval, predict, params, gradcheck.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, pipeline
from .audio import AudioError, load_mel_csv
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, coerce, load_run_config, parse_run_config, run_config_fields
from .data import DataError, gen_synth, read_manifest, write_manifest
from .fusion import MultimodalModel

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("modfusion")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 means a data error here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value run config file")
    group = p.add_argument_group("run config overrides")
    for f in run_config_fields():
        group.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar=f.name.upper())


def _run_config(args) -> tuple[RunConfig, Path | None]:
    by_name = {f.name: f for f in run_config_fields()}
    overrides = {}
    for name, f in by_name.items():
        raw = getattr(args, "cfg_" + name, None)
        if raw is not None:
            overrides[name] = coerce(f, raw)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return load_run_config(path, overrides), path.parent
    return parse_run_config("", overrides), None


def cmd_gen_synth(args) -> int:
    records = gen_synth(args.n, args.seed, args.out, args.valid_fraction, args.test_fraction)
    print(f"wrote {len(records)} samples to {args.out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg, base = _run_config(args)
    manifest = pipeline.manifest_path(cfg, base)
    records = read_manifest(manifest)
    out_dir = Path(args.mel_dir) if args.mel_dir else manifest.parent / "mel"
    updated, report = pipeline.extract(records, cfg.mel_config(), manifest.parent, out_dir, args.workers)
    write_manifest(args.output or manifest, updated)
    print(f"computed {len(report.computed)} skipped {len(report.skipped)} failed {len(report.failures)}")
    if report.failures:
        fail_path = out_dir / "extract_failures.jsonl"
        fail_path.write_text("".join(json.dumps(f, sort_keys=True) + "\n" for f in report.failures),
                             encoding="utf-8")
        for f in report.failures:
            print(f"warning: {f['id']}: {f['error']}", file=sys.stderr)
        print(f"failure report: {fail_path}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, base = _run_config(args)
    for m in pipeline.run_train(cfg, base):
        print(f"seed {m.seed}: best val acc {m.result.best_val_acc:.4f} at epoch {m.result.best_epoch} "
              f"({len(m.result.history)} epochs) -> {m.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, base = _run_config(args)
    report = pipeline.run_eval(cfg, args.checkpoints, args.split, base)
    out = Path(args.report_dir) if args.report_dir else cfg.output_root()
    out.mkdir(parents=True, exist_ok=True)
    stem = f"eval-{args.split}"
    (out / f"{stem}.txt").write_text(report.render() + "\n", encoding="utf-8")
    (out / f"{stem}.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / f"{stem}-confusion.csv").write_text(report.confusion_csv(), encoding="utf-8")
    print(report.render())
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg, base = _run_config(args)
    checkpoints = pipeline.load_checkpoints(args.checkpoints, cfg.classes or None)
    classes = checkpoints[0].classes
    if args.text is not None:
        mel = load_mel_csv(args.mel) if args.mel else np.zeros((1, 80))
        probs = pipeline.predict_single(checkpoints, args.text, mel)
        print(json.dumps({"label": classes[int(probs.argmax())],
                          "probs": dict(zip(classes, map(float, probs)))}, sort_keys=True))
        return EXIT_OK
    manifest = pipeline.manifest_path(cfg, base)
    records = [r for r in read_manifest(manifest) if r.split == args.split]
    if not records:
        raise DataError(f"manifest has no {args.split!r} samples")
    probs = pipeline.ensemble_predict(checkpoints, records, manifest.parent)
    for r, row in zip(records, probs):
        print(json.dumps({"id": r.id, "label": classes[int(row.argmax())],
                          "probs": dict(zip(classes, map(float, row)))}, sort_keys=True))
    return EXIT_OK


def cmd_params(args) -> int:
    cfg, _ = _run_config(args)
    variants = args.variants.split(",") if args.variants else [cfg.variant]
    k = len(cfg.classes) or 4
    for v in variants:
        cfg.variant = v.strip()
        model_cfg = cfg.model_config(k)
        model = MultimodalModel(model_cfg, args.vocab_size, np.random.default_rng(0))
        print(f"{model_cfg.variant}\t{model.num_parameters(trainable_only=True)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(args.seed)
    failed = [r for r in results if not r.passed]
    for r in results:
        if args.verbose or not r.passed:
            kink = " (kink, finer step)" if r.kink else ""
            print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:<40} {r.error:.3e} n={r.checked}{kink}")
    worst = max(r.error for r in results)
    print(f"{len(results) - len(failed)}/{len(results)} passed, max relative error {worst:.3e}")
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="modfusion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="write the XOR synthetic dataset")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--valid-fraction", type=float, default=0.2)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("extract", help="compute mel CSVs for manifest WAVs")
    _add_run_flags(p)
    p.add_argument("--mel-dir", help="output directory (default: <manifest dir>/mel)")
    p.add_argument("--output", help="write the updated manifest here instead of in place")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train an ensemble of seeds")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "ensemble-evaluate checkpoints on a split"),
                                 ("predict", cmd_predict, "class probabilities from checkpoints")):
        p = sub.add_parser(name, help=helptext)
        _add_run_flags(p)
        p.add_argument("--checkpoints", nargs="+", required=True)
        p.add_argument("--split", default="test", choices=("train", "valid", "test"))
        if name == "eval":
            p.add_argument("--report-dir")
        else:
            p.add_argument("--text", help="predict one sentence instead of a manifest split")
            p.add_argument("--mel", help="mel CSV paired with --text")
        p.set_defaults(func=func)

    p = sub.add_parser("params", help="print trainable parameter counts")
    _add_run_flags(p)
    p.add_argument("--variants", help="comma-separated variants (default: the configured one)")
    p.add_argument("--vocab-size", type=int, default=10000)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and variant")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"modfusion: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, AudioError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
