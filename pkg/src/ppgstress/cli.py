"""Command-line pipeline: synth -> featurize -> train -> prune -> quantize -> infer -> evaluate -> budget -> report.

Exit status: 0 success, 1 a gate failed (budget, accuracy floor), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import compress, dataset, fileformat, metrics, model as modellib, qengine, scalogram, train as trainlib
from .ppg import DEFAULT_RATE_HZ, load_ppg_csv, write_ppg_csv

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("ppgstress")

EXIT_OK, EXIT_GATE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"input not found: {p}")
    return p


def _write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_labelled_sclg(path):
    images, labels = scalogram.load_scalograms(_require(path))
    return images, labels


# ---------------------------------------------------------------- stages

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec in dataset.synth_records(args.seed, args.records, args.duration):
        write_ppg_csv(rec, out / f"{rec.record_id}.csv")
    log.info("wrote %d records to %s", args.records, out)
    return EXIT_OK


def _csv_inputs(paths) -> list[Path]:
    files = []
    for p in paths:
        p = _require(p)
        files.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    if not files:
        raise UsageError(f"no CSV files found in {', '.join(map(str, paths))}")
    return files


def cmd_featurize(args) -> int:
    records = [load_ppg_csv(f, args.rate) for f in _csv_inputs(args.inputs)]
    cfg = scalogram.CwtConfig(omega0=args.omega0, n_scales=scalogram.IMAGE_SIZE,
                              band_hz=(args.fmin, args.fmax))
    images, labels = dataset.featurize_records(records, cfg, args.window, args.stride, args.workers)
    scalogram.save_scalograms(args.out, images, labels)
    if args.pgm_dir:
        pgm = Path(args.pgm_dir)
        pgm.mkdir(parents=True, exist_ok=True)
        for i, im in enumerate(images):
            scalogram.write_pgm(pgm / f"img_{i:05d}.pgm", im)
    log.info("featurized %d windows from %d records", len(labels), len(records))
    return EXIT_OK


def cmd_train(args) -> int:
    images, labels = _load_labelled_sclg(args.inputs)
    if np.any(labels == scalogram.NO_LABEL):
        raise UsageError(f"{args.inputs}: training data must be labelled")
    aug = None if args.no_augment else scalogram.AugmentParams(seed=args.seed)
    cfg = trainlib.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
                               augment=aug, val_split=args.val_split, lr=args.lr)
    model = modellib.build_default_model(args.seed, hidden=args.hidden)
    model, history = trainlib.train(model, images, labels.astype(np.int64), cfg)
    fileformat.save_model(model, args.out)
    if args.history:
        _write_text(args.history, history.to_csv())
        _write_text(Path(args.history).with_suffix(".json"), history.to_json() + "\n")
    if args.val_out:
        vi = history.val_indices
        scalogram.save_scalograms(args.val_out, images[vi], [int(v) for v in labels[vi]])
    for row in history.rows():
        log.info("epoch %(epoch)d  loss %(loss).4f  acc %(train_acc).3f  val_acc %(val_acc).3f", row)
    return EXIT_OK


def _load_float(path) -> modellib.Model:
    m = fileformat.load_model(_require(path))
    if not isinstance(m, modellib.Model):
        raise UsageError(f"{path}: expected a float model, got a quantized one")
    return m


def cmd_prune(args) -> int:
    m = compress.prune_dense_units(_load_float(args.inputs), compress.PruneConfig(args.keep_units))
    fileformat.save_model(m, args.out)
    log.info("pruned to %d parameters (%d bytes)", m.param_count(), m.payload_bytes())
    return EXIT_OK


def cmd_quantize(args) -> int:
    m = _load_float(args.inputs)
    images, _ = _load_labelled_sclg(args.calib)
    images = images[:args.calib_count]
    qm = compress.quantize_ptq(m, compress.calibrate(m, images))
    fileformat.save_model(qm, args.out)
    log.info("quantized payload %d bytes", qm.payload_bytes())
    return EXIT_OK


def cmd_infer(args) -> int:
    m = fileformat.load_model(_require(args.model))
    images, labels = _load_labelled_sclg(args.inputs)
    if isinstance(m, compress.QuantModel):
        scores = qengine.qpredict(m, images)
    else:
        scores = modellib.predict(m, images)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "score", "pred", "label"])
    for i, (s, lab) in enumerate(zip(scores, labels)):
        w.writerow([i, repr(float(s)), int(s >= 0.5), "" if lab == scalogram.NO_LABEL else int(lab)])
    _write_text(args.out, buf.getvalue())
    return EXIT_OK


def _read_predictions(path):
    scores, labels = [], []
    with open(_require(path), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            scores.append(float(row["score"]))
            labels.append(int(row["label"]) if row.get("label", "") != "" else None)
    return np.array(scores), labels


def cmd_evaluate(args) -> int:
    scores, labels = _read_predictions(args.inputs)
    if args.labels:
        _, lab = _load_labelled_sclg(args.labels)
        labels = [int(v) for v in lab]
    if len(labels) != len(scores) or any(v is None or v == scalogram.NO_LABEL for v in labels):
        raise UsageError("evaluation needs one label per prediction")
    report = metrics.evaluate(scores, np.array(labels))
    _write_text(args.out, _dump_json(report.to_dict()))
    if args.pr_csv:
        _write_text(args.pr_csv, report.pr_csv())
    log.info("accuracy %.4f  roc_auc %s", report.accuracy, report.roc_auc)
    if args.min_accuracy is not None and report.accuracy < args.min_accuracy:
        log.error("accuracy %.4f below floor %.4f", report.accuracy, args.min_accuracy)
        return EXIT_GATE
    return EXIT_OK


def cmd_budget(args) -> int:
    m = fileformat.load_model(_require(args.inputs))
    plan = qengine.plan_memory(m)
    report = qengine.check_budget(plan, qengine.Budget(args.flash_budget, args.ram_budget))
    out = report.to_dict()
    out["plan"] = plan.to_dict()
    text = _dump_json(out)
    if args.out:
        _write_text(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK if report.passed else EXIT_GATE


def cmd_report(args) -> int:
    stages = {}
    for p in args.inputs:
        p = _require(p)
        stages[p.stem] = json.loads(p.read_text(encoding="utf-8"))
    gates = [v["pass"] for v in stages.values() if isinstance(v, dict) and "pass" in v]
    summary = {"stages": stages, "pass": all(gates)}
    _write_text(args.out, _dump_json(summary))
    return EXIT_OK if summary["pass"] else EXIT_GATE


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every stochastic stage")
    common.add_argument("--config", help="TOML or JSON file of option defaults")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ppgstress", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="write labelled synthetic PPG CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--records", type=int, default=10)
    p.add_argument("--duration", type=float, default=59.0, help="seconds per record")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", parents=[common], help="PPG CSVs -> SCLG scalogram file")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="CSV files or directories")
    p.add_argument("--out", required=True)
    p.add_argument("--rate", type=float, default=DEFAULT_RATE_HZ)
    p.add_argument("--window", type=float, default=10.0)
    p.add_argument("--stride", type=float, default=1.0)
    p.add_argument("--omega0", type=float, default=6.0)
    p.add_argument("--fmin", type=float, default=0.5)
    p.add_argument("--fmax", type=float, default=8.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--pgm-dir")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[common], help="SCLG -> float SDM1 model + history")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.add_argument("--val-out", help="write the held-out split as SCLG")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--val-split", type=float, default=0.2)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=modellib.DEFAULT_HIDDEN)
    p.add_argument("--no-augment", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("prune", parents=[common], help="structured pruning of hidden dense units")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--keep-units", type=int, default=compress.DEFAULT_KEEP)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("quantize", parents=[common], help="int8 post-training quantization")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--calib", required=True, help="SCLG calibration images")
    p.add_argument("--calib-count", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("infer", parents=[common], help="model + SCLG -> predictions CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", parents=[common], help="predictions -> metrics JSON")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--labels", help="SCLG whose labels override the predictions file")
    p.add_argument("--out", required=True)
    p.add_argument("--pr-csv")
    p.add_argument("--min-accuracy", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("budget", parents=[common], help="flash/RAM budget check")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--out")
    p.add_argument("--flash-budget", type=int, default=qengine.DEFAULT_FLASH_BUDGET)
    p.add_argument("--ram-budget", type=int, default=qengine.DEFAULT_RAM_BUDGET)
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("report", parents=[common], help="aggregate JSON outputs")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    parser.stages = sub.choices
    return parser


def _load_config(path) -> dict:
    p = _require(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() == ".json":
        return json.loads(text)
    return tomllib.loads(text)


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    """Config values become defaults: top-level keys for every stage, a table per stage overriding."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = _load_config(known.config)
    command = next((a for a in rest if not a.startswith("-")), None)
    if command not in parser.stages:
        return
    sp = parser.stages[command]
    dests = {a.dest for a in sp._actions}
    # Top-level keys apply wherever the stage has that option; a stage table must be exact.
    values = {k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict)}
    values = {k: v for k, v in values.items() if k in dests}
    table = {k.replace("-", "_"): v for k, v in cfg.get(command, {}).items()}
    unknown = set(table) - dests
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(sorted(unknown))}")
    values.update(table)
    sp.set_defaults(**values)
    for action in sp._actions:
        if action.dest in values:
            action.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (UsageError, ValueError) as exc:
        print(f"ppgstress: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"ppgstress: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
