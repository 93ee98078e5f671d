"""Command-line front end.

Subcommands: ``evaluate``, ``split``, ``perturb``, ``synthesize``, ``report``.
Bare defaults follow the standard AD protocol (W=30, six FP ratios, IoU 0.5).
Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .accuracy import mean_average_precision, per_class_ap
from .analysis import (
    ScaleBuckets,
    ad_by_class,
    ad_by_scale,
    delay_histogram,
    histogram_plot_data,
    kfold_ad,
    tail_report,
)
from .baselines import NabConfig, catdet_delay, nab_score
from .datamodel import (
    DataError,
    Dataset,
    FORMATS,
    atomic_write_text,
    parse_detections,
    parse_ground_truth,
    select_vidt,
    split_tracklets,
    write_detections,
    write_ground_truth,
)
from .delay import DEFAULT_FP_RATIOS, DEFAULT_WINDOW, DelayConfig, average_delay, average_delay_per_video, instance_delays
from .experiments import PERTURBATION_KINDS, CONFIDENCE_MODELS, PerturbationSpec, SyntheticSpec, affected_count, perturb, synthesize
from .matching import build_match_table, dumps_match_table

log = logging.getLogger("avgdelay")

SCHEMA_VERSION = "1.0"
OUT_ENV = "AVGDELAY_OUT"
_INTERP_LABEL = {"all": "all-point", "11point": "11-point"}
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _ratios(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad FP ratio list {text!r}") from None


def _report_set(text: str) -> tuple[str, ...]:
    kinds = tuple(k.strip() for k in text.split(",") if k.strip())
    bad = [k for k in kinds if k not in ("json", "csv", "text")]
    if bad or not kinds:
        raise argparse.ArgumentTypeError(f"report formats must be from json,csv,text; got {text!r}")
    return kinds


def _dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "avgdelay_out")
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _delay_config(args) -> DelayConfig:
    try:
        return DelayConfig(window=args.window, fp_ratios=args.fp_ratios, iou_threshold=args.iou,
                           class_aware=args.class_aware)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _add_io(p, det=True):
    p.add_argument("--gt", required=True, type=Path, help="ground-truth file")
    if det:
        p.add_argument("--det", required=True, type=Path, help="detection file")
    p.add_argument("--format", choices=FORMATS, default="csv", help="input/output file format")
    p.add_argument("--out", type=Path, default=None, help=f"output directory (default ${OUT_ENV} or ./avgdelay_out)")


def _add_delay(p):
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW, help="detection window W in frames")
    p.add_argument("--fp-ratios", type=_ratios, default=DEFAULT_FP_RATIOS, help="comma-separated FP ratios")
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold for a true positive")
    p.add_argument("--class-aware", type=_bool, default=True, help="require matching class labels")
    p.add_argument("--workers", type=int, default=1, help="worker threads for matching")


def _load(args):
    dataset = parse_ground_truth(args.gt, args.format)
    detections = parse_detections(args.det, args.format)
    return dataset, detections


# ----------------------------------------------------------------- evaluate

def evaluate_report(dataset: Dataset, detections, args) -> tuple[dict, dict]:
    """Build the JSON report plus the objects needed for csv/text renderings."""
    config = _delay_config(args)
    if not dataset.instances:
        raise DataError("ground truth contains no instances")
    table = build_match_table(dataset, detections, config.iou_threshold, config.class_aware, args.workers)
    if config.class_aware:
        ap_table = table
    else:
        ap_table = build_match_table(dataset, detections, config.iou_threshold, True, args.workers)

    if args.fp_scope == "video":
        profile = average_delay_per_video(dataset, table, config)
    else:
        profile = average_delay(dataset, table, config)
    aps = per_class_ap(ap_table, args.interpolation)
    m_ap = mean_average_precision(ap_table, args.interpolation)
    catdet = catdet_delay(dataset, table, args.precision, config.window)
    nab_cfg = NabConfig(anomaly_window=config.window, confidence_threshold=args.nab_threshold)
    nab = nab_score(dataset, table, nab_cfg)
    tail = tail_report(instance_delays(dataset, table, args.tail_threshold), args.tail_window)

    warnings = []
    for rec in profile.records:
        if rec.unreachable:
            warnings.append(
                f"FP ratio {rec.fp_ratio:g}: achieved {rec.achieved_fp_ratio:.4g} < requested "
                "(budget never binds; all detections admitted)"
            )
    if not catdet.attainable:
        warnings.append(f"CaTDet delay: precision {args.precision:g} unattainable at any threshold")

    delay = profile.to_dict()
    delay["fp_scope"] = args.fp_scope
    report = {
        "schema_version": SCHEMA_VERSION,
        "inputs": {"gt": str(args.gt), "det": str(args.det), "format": args.format},
        "dataset": dataset.summary(),
        "detections": {
            "total": len(detections),
            "suppressed": table.suppressed,
            "tp": table.total_tp,
            "fp": table.total_fp,
        },
        "delay": delay,
        "accuracy": {
            "interpolation": args.interpolation,
            "mAP": m_ap,
            "per_class_ap": {str(c): ap for c, ap in aps.items()},
        },
        "baselines": {
            "catdet": catdet.to_dict(),
            "nab": {"config": nab_cfg.to_dict(), "score": nab},
        },
        "tail": {"threshold": args.tail_threshold, **tail.to_dict()},
        "warnings": warnings,
    }
    return report, {"profile": profile, "table": table}


def _render_text(report: dict, profile) -> str:
    ds = report["dataset"]
    lines = [
        f"Snippets {ds['snippets']}  Frames {ds['frames']}  Instances {ds['instances']}  Objects {ds['objects']}",
        "",
        profile.format_table(),
        "",
        f"mAP = {report['accuracy']['mAP']:.4f} ({_INTERP_LABEL[report['accuracy']['interpolation']]})",
    ]
    cat = report["baselines"]["catdet"]
    if cat["attainable"]:
        lines.append(f"CaTDet delay = {cat['delay']:.3f} at precision >= {cat['target_precision']:g} "
                     f"(threshold {cat['threshold']:.4f})")
    else:
        lines.append(f"CaTDet delay = unattainable (precision {cat['target_precision']:g})")
    lines.append(f"NAB score = {report['baselines']['nab']['score']:.4f}")
    t = report["tail"]
    lines.append(
        f"Tail @ threshold {t['threshold']:g}, W={t['window']}: clipped mean {t['clipped_mean']:.3f}, "
        f"off-window {100 * t['off_window_pct']:.1f}% vs expected {100 * t['expected_off_window_pct']:.1f}%"
        + ("  [heavy tail]" if t["heavy_tail"] else "")
    )
    for w in report["warnings"]:
        lines.append(f"warning: {w}")
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    dataset, detections = _load(args)
    report, extra = evaluate_report(dataset, detections, args)
    out = _out_dir(args)
    profile = extra["profile"]

    files: dict[str, str] = {}
    if "json" in args.report:
        files["report.json"] = _dumps_json(report)
    if "csv" in args.report:
        files["delay_profile.csv"] = _csv_text(
            ["fp_ratio", "threshold", "achieved_fp_ratio", "clipped_mean_delay", "p", "unreachable"],
            [[repr(r.fp_ratio), repr(r.threshold), repr(r.achieved_fp_ratio), repr(r.clipped_mean_delay),
              repr(r.probability), r.unreachable] for r in profile.records],
        )
        files["per_class_ap.csv"] = _csv_text(
            ["class_id", "ap"], [[c, repr(ap)] for c, ap in report["accuracy"]["per_class_ap"].items()]
        )
        cat = report["baselines"]["catdet"]
        files["metrics.csv"] = _csv_text(
            ["average_delay", "mAP", "catdet_delay", "nab_score"],
            [[repr(profile.average_delay), repr(report["accuracy"]["mAP"]),
              "unattainable" if cat["delay"] is None else repr(cat["delay"]),
              repr(report["baselines"]["nab"]["score"])]],
        )
    text = _render_text(report, profile)
    if "text" in args.report:
        files["report.txt"] = text
    if args.dump_matches:
        files["matches.csv"] = dumps_match_table(extra["table"])
    # everything is computed before the first write: no partial report on failure
    for name, content in files.items():
        atomic_write_text(out / name, content)
    sys.stdout.write(text)
    return EXIT_OK


# -------------------------------------------------------------------- split

def _summary_rows(named: list[tuple[str, Dataset]]):
    return [[name, *ds.summary().values()] for name, ds in named]


def cmd_split(args) -> int:
    dataset = parse_ground_truth(args.gt, args.format)
    split = split_tracklets(dataset, args.max_gap)
    vidt = select_vidt(split)
    out = _out_dir(args)
    rows = _summary_rows([("input", dataset), ("split", split), ("vidt", vidt)])
    header = ["dataset", "snippets", "frames", "instances", "objects"]
    summary_csv = _csv_text(header, rows)
    text = "\n".join(
        [f"{'Dataset':<8} {'Snippets':>9} {'Frames':>9} {'Instances':>10} {'Objects':>9}"]
        + [f"{r[0]:<8} {r[1]:>9} {r[2]:>9} {r[3]:>10} {r[4]:>9}" for r in rows]
    ) + "\n"
    write_ground_truth(vidt, out / f"vidt_gt.{args.format}", args.format)
    atomic_write_text(out / "summary.csv", summary_csv)
    atomic_write_text(out / "summary.txt", text)
    if not vidt.videos:
        log.warning("no video has an instance entering after its first annotated frame; output is empty")
    sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ perturb

def cmd_perturb(args) -> int:
    dataset, detections = _load(args)
    try:
        spec = PerturbationSpec(args.kind, args.k_first, args.low_conf_cutoff, args.tail_offset, args.boost_target)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    table = build_match_table(dataset, detections, args.iou, args.class_aware, args.workers)
    perturbed = perturb(detections, dataset, table, spec)
    out = _out_dir(args)
    write_detections(perturbed, out / f"det_{args.kind}.{args.format}", args.format)
    sys.stdout.write(f"{args.kind}: {affected_count(detections, perturbed)} affected detections\n")
    return EXIT_OK


# --------------------------------------------------------------- synthesize

def cmd_synthesize(args) -> int:
    try:
        spec = SyntheticSpec(
            p=args.p, fp_rate=args.fp_rate, num_instances=args.instances,
            frames_per_instance=args.frames_per_instance, instances_per_video=args.instances_per_video,
            entry_stride=args.entry_stride, seed=args.seed, confidence_model=args.confidence_model,
            box_size=args.box_size, class_id=args.class_id, video_prefix=args.video_prefix,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    dataset, detections = synthesize(spec)
    out = _out_dir(args)
    write_ground_truth(dataset, out / f"gt.{args.format}", args.format)
    write_detections(detections, out / f"det.{args.format}", args.format)
    atomic_write_text(out / "synthetic_spec.json", _dumps_json(spec.to_dict()))
    s = dataset.summary()
    sys.stdout.write(f"{s['instances']} instances, {s['objects']} objects, {len(detections)} detections\n")
    return EXIT_OK


# ------------------------------------------------------------------- report

def cmd_report(args) -> int:
    dataset, detections = _load(args)
    config = _delay_config(args)
    table = build_match_table(dataset, detections, config.iou_threshold, config.class_aware, args.workers)
    delays = instance_delays(dataset, table, args.hist_threshold)
    plot = histogram_plot_data(delays, args.hist_window, args.bin_width, args.max_bin)
    hist = delay_histogram(delays, args.bin_width, args.max_bin)
    tail = tail_report(delays, args.hist_window)
    by_class = ad_by_class(dataset, table, config, args.min_class_instances)
    by_scale = ad_by_scale(dataset, table, config, ScaleBuckets(args.small_below, args.large_from))
    folds = kfold_ad(dataset, table, config, args.folds, args.seed) if args.folds else []

    out = _out_dir(args)
    files = {
        "histogram.csv": _csv_text(["bin", "count"], [["overflow" if b is None else b, c] for b, c in hist]),
        "histogram_plot.json": _dumps_json({"threshold": args.hist_threshold, "window": args.hist_window, **plot}),
        "ad_by_class.csv": _csv_text(["class_id", "average_delay"], [[c, repr(v)] for c, v in by_class.items()]),
        "ad_by_scale.csv": _csv_text(["bucket", "average_delay"], [[b, repr(v)] for b, v in by_scale.items()]),
    }
    if folds:
        files["kfold.csv"] = _csv_text(["fold", "average_delay"], [[i, repr(v)] for i, v in enumerate(folds)])
    breakdown = {
        "schema_version": SCHEMA_VERSION,
        "tail": {"threshold": args.hist_threshold, **tail.to_dict()},
        "ad_by_class": {str(c): v for c, v in by_class.items()},
        "ad_by_scale": by_scale,
        "kfold": {"k": args.folds, "seed": args.seed, "average_delay": folds},
    }
    files["breakdown.json"] = _dumps_json(breakdown)
    for name, content in files.items():
        atomic_write_text(out / name, content)

    lines = [f"Tail: off-window {100 * tail.off_window_pct:.1f}% vs expected "
             f"{100 * tail.expected_off_window_pct:.1f}%" + ("  [heavy tail]" if tail.heavy_tail else "")]
    lines += [f"class {c}: AD {v:.3f}" for c, v in by_class.items()]
    lines += [f"{b}: AD {v:.3f}" for b, v in by_scale.items()]
    if folds:
        lines.append("folds: " + ", ".join(f"{v:.3f}" for v in folds))
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="avgdelay", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("evaluate", help="AD, mAP and baseline delay metrics")
    _add_io(p)
    _add_delay(p)
    p.add_argument("--precision", type=float, default=0.8, help="CaTDet target precision")
    p.add_argument("--nab-threshold", type=float, default=0.5, help="NAB operating confidence")
    p.add_argument("--tail-threshold", type=float, default=0.5, help="confidence for the tail report")
    p.add_argument("--tail-window", type=int, default=100, help="window for the tail report")
    p.add_argument("--fp-scope", choices=("global", "video"), default="global")
    p.add_argument("--interpolation", choices=("all", "11point"), default="all")
    p.add_argument("--report", type=_report_set, default=("json", "csv", "text"), help="comma list of json,csv,text")
    p.add_argument("--dump-matches", action="store_true", help="also write the TP/FP table")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("split", help="split tracklets at long gaps and select VIDT-style videos")
    _add_io(p, det=False)
    p.add_argument("--max-gap", type=int, default=10)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("perturb", help="retardation / tail-boost manipulation of detections")
    _add_io(p)
    p.add_argument("--kind", choices=PERTURBATION_KINDS, required=True)
    p.add_argument("--k-first", type=int, default=5)
    p.add_argument("--low-conf-cutoff", type=float, default=None)
    p.add_argument("--tail-offset", type=int, default=20)
    p.add_argument("--boost-target", type=float, default=0.99)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--class-aware", type=_bool, default=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("synthesize", help="Bernoulli synthetic detector with known delay law")
    p.add_argument("--p", type=float, required=True, help="per-frame detection probability")
    p.add_argument("--fp-rate", type=float, default=0.0)
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--frames-per-instance", type=int, default=40)
    p.add_argument("--instances-per-video", type=int, default=8)
    p.add_argument("--entry-stride", type=int, default=5)
    p.add_argument("--confidence-model", choices=CONFIDENCE_MODELS, default="separated")
    p.add_argument("--box-size", type=float, default=1.0)
    p.add_argument("--class-id", type=int, default=0)
    p.add_argument("--video-prefix", default="syn")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=FORMATS, default="csv")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("report", help="histograms, per-class/per-scale AD and k-fold AD")
    _add_io(p)
    _add_delay(p)
    p.add_argument("--hist-threshold", type=float, default=0.5)
    p.add_argument("--hist-window", type=int, default=100)
    p.add_argument("--bin-width", type=int, default=1)
    p.add_argument("--max-bin", type=int, default=100)
    p.add_argument("--min-class-instances", type=int, default=40)
    p.add_argument("--small-below", type=float, default=40.0)
    p.add_argument("--large-from", type=float, default=100.0)
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"avgdelay: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError) as exc:
        print(f"avgdelay: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
