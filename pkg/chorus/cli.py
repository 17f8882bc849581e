"""
The `chorus` command line. Every stage of the pipeline is a subcommand; summaries go to
stdout (JSON with `--json`), logs and error diagnostics to stderr.

Exit codes: 0 on success, 1 when a stage fails, 2 on usage errors.
"""
import argparse
import collections
import json
import logging
import os
import sys

import chorus.config
import chorus.event
import chorus.exceptions
import chorus.pipeline
import chorus.registry
from chorus import get_logger, set_log_level
from chorus.data import formats
from chorus.data.jsonl import read_jsonl
from chorus.data.media import read_clip, write_clip
from chorus.data.records import read_vgs, write_vgs
from chorus.data.split import split_dataset, write_split
from chorus.data.synth import SynthConfig, synth_scene
from chorus.evaluation import Detection, IOU_GATE, ablation_report, evaluate

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

CONVERTERS = {
    "coco": (formats.write_coco, formats.read_coco),
    "voc": (formats.write_voc, formats.read_voc),
    "vat": (formats.write_vat, formats.read_vat),
}


def _config(args):
    config = chorus.config.load(args.config) if args.config else chorus.config.PipelineConfig()
    overrides = {}
    for item in getattr(args, "set", None) or ():
        key, _, value = item.partition("=")
        parsed = chorus.config.loads("{} = {}".format(key.strip(), value.strip()))
        overrides[key.strip()] = parsed[key.strip()]
    return config.replace(**overrides) if overrides else config


def _log_epochs(run):
    run.on(chorus.event.EPOCH_END, lambda stage, epoch, mean: logger.info(
        "{} epoch {}: mean loss {:.5f}".format(stage, epoch, mean)))
    return run


def cmd_synth(args):
    config = SynthConfig(persons=args.persons, frames=args.frames, image_size=args.image_size,
                         out_of_frame=args.out_of_frame)
    written = []
    for i in range(args.scenes):
        clip = synth_scene(args.seed + i, config)
        directory = os.path.join(args.output, clip.video)
        write_clip(directory, clip)
        written.append(directory)
    return collections.OrderedDict([("clips", written)]), "wrote {} clips to {}".format(len(written), args.output)


def cmd_convert(args):
    if bool(args.to) == bool(args.source):
        raise chorus.exceptions.ArgumentError("convert needs exactly one of --to or --from")
    if args.to:
        CONVERTERS[args.to][0](args.output, read_vgs(args.input))
        fmt = args.to
    else:
        write_vgs(args.output, CONVERTERS[args.source][1](args.input))
        fmt = "vgs"
    return collections.OrderedDict([("format", fmt), ("output", args.output)]), \
        "wrote {} to {}".format(fmt, args.output)


def cmd_split(args):
    split = split_dataset(read_vgs(args.annotations), args.seed)
    write_split(args.output, split)
    summary = collections.OrderedDict([("seed", args.seed), ("train", len(split.train)),
                                       ("test", len(split.test)), ("output", args.output)])
    return summary, "{} train / {} test frames (seed {})".format(len(split.train), len(split.test), args.seed)


def _report(report):
    summary = report.to_dict()
    text = "{} checkpoint {}; final loss {}; {}".format(
        report.stage, report.path,
        "{:.5f}".format(report.history[-1]) if report.history else "n/a",
        ", ".join("{} {}".format(k, v) for k, v in report.metrics.items()))
    return summary, text


def cmd_train_sync(args):
    config = _config(args)
    clips = [read_clip(d) for d in args.clips]
    return _report(chorus.pipeline.train_sync_stage(clips, config, run=_log_epochs(chorus.event.TrainingRun("sync"))))


def cmd_train_detector(args):
    config = _config(args)
    if args.backbone:
        config = config.replace(backbone=args.backbone)
    if args.no_audio:
        config = config.replace(no_audio=True)
    clips = [read_clip(d) for d in args.clips]
    holdout = [read_clip(d) for d in args.holdout or ()]
    return _report(chorus.pipeline.train_detector_stage(
        clips, config, holdout, run=_log_epochs(chorus.event.TrainingRun("detector"))))


def cmd_train_matcher(args):
    config = _config(args)
    if args.no_audio:
        config = config.replace(no_audio=True)
    clips = [read_clip(d) for d in args.clips]
    holdout = [read_clip(d) for d in args.holdout or ()]
    return _report(chorus.pipeline.train_matcher_stage(
        clips, config, holdout, run=_log_epochs(chorus.event.TrainingRun("matcher"))))


def cmd_infer(args):
    config = _config(args)
    overrides = {}
    if args.tau is not None:
        overrides["tau"] = args.tau
    if args.no_audio:
        overrides["no_audio"] = True
    if args.heatmaps:
        overrides["heatmaps"] = True
    if args.output:
        overrides["output_dir"] = args.output
    config = config.replace(**overrides) if overrides else config
    clip = read_clip(args.clip) if args.clip else None
    result = chorus.pipeline.run_pipeline(config, clip)
    matched = sum(1 for fr in result.frames for m in fr.matches if not m.empty)
    summary = collections.OrderedDict([("video", result.video), ("frames", len(result.frames)),
                                       ("matches", matched), ("outputs", result.paths)])
    return summary, "{}: {} frames, {} matched subjects, outputs in {}".format(
        result.video, len(result.frames), matched, config.output_dir)


def read_matches(path):
    """
    Detections from a matches.jsonl file; subjects without a target are skipped.
    """
    out = []
    for i, r in enumerate(read_jsonl(path), 1):
        if not isinstance(r, dict):
            raise chorus.exceptions.ParseError("match row is not an object", i)
        if r.get("target_box") is None or r.get("probability") is None:
            continue
        try:
            out.append(Detection((r["video"], r["frame"], r["person_id"]), tuple(r["target_box"]), r["probability"]))
        except (KeyError, TypeError) as e:
            raise chorus.exceptions.ParseError("match row without {}".format(e), i)
    return out


def cmd_eval(args):
    gts = chorus.pipeline.ground_truths(read_vgs(args.annotations))
    if args.ablation:
        report = ablation_report(read_matches(args.matches), read_matches(args.ablation), gts, args.iou)
        return report.to_dict(), report.to_text()
    curve = evaluate(read_matches(args.matches), gts, args.iou)
    return curve.to_dict(), "AP {:.4f} over {} ground-truth targets".format(curve.ap, curve.m)


def cmd_gradcheck(args):
    results = chorus.registry.registry.check_all(seeds=args.seeds, tolerance=args.tolerance)
    summary = collections.OrderedDict()
    lines = []
    failed = []
    for kind, reports in results.items():
        worst = max(r.max_error for r in reports)
        passed = all(r.passed for r in reports)
        summary[kind] = collections.OrderedDict([("passed", passed), ("max_rel_error", worst)])
        lines.append("{:<14} {} {:.2e}".format(kind, "ok  " if passed else "FAIL", worst))
        if not passed:
            failed.append(kind)
    if failed:
        raise chorus.exceptions.StateError("gradient check failed for {}".format(", ".join(failed)))
    return summary, "\n".join(lines)


def build_parser():
    parser = argparse.ArgumentParser(prog="chorus", description="Multi-modal gaze target detection.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG logs")
    parser.add_argument("--json", action="store_true", help="machine-readable summary on stdout")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def with_config(p):
        p.add_argument("--config", help="pipeline config file (key = value lines)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        return p

    p = sub.add_parser("synth", help="generate synthetic clips")
    p.add_argument("output")
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--persons", type=int, default=3)
    p.add_argument("--frames", type=int, default=75)
    p.add_argument("--image-size", type=int, default=256)
    p.add_argument("--out-of-frame", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="convert VGS annotations to or from COCO, VOC or VAT")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--to", choices=sorted(CONVERTERS))
    p.add_argument("--from", dest="source", choices=sorted(CONVERTERS))
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("split", help="seeded 9:1 train/test split of annotated frames")
    p.add_argument("annotations")
    p.add_argument("output")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = with_config(sub.add_parser("train-sync", help="train the lip/audio embedders and calibrate tau"))
    p.add_argument("clips", nargs="+")
    p.set_defaults(func=cmd_train_sync)

    p = with_config(sub.add_parser("train-detector", help="train the gaze candidate detector"))
    p.add_argument("clips", nargs="+")
    p.add_argument("--backbone", choices=sorted(chorus.config.PRESETS))
    p.add_argument("--no-audio", action="store_true", help="zero the identity channels")
    p.add_argument("--holdout", nargs="*", help="clip directories for the held-out report")
    p.set_defaults(func=cmd_train_detector)

    p = with_config(sub.add_parser("train-matcher", help="train the subject/candidate matcher"))
    p.add_argument("clips", nargs="+")
    p.add_argument("--no-audio", action="store_true", help="zero the identity channels")
    p.add_argument("--holdout", nargs="*", help="clip directories for the held-out report")
    p.set_defaults(func=cmd_train_matcher)

    p = with_config(sub.add_parser("infer", help="run the full pipeline over a clip"))
    p.add_argument("--clip", help="clip directory; defaults to the config paths")
    p.add_argument("--output", help="output directory")
    p.add_argument("--tau", type=float, help="speaker distance threshold")
    p.add_argument("--no-audio", action="store_true", help="zero the identity channels")
    p.add_argument("--heatmaps", action="store_true", help="also write per-subject heat maps")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="average precision of a matches.jsonl run")
    p.add_argument("matches")
    p.add_argument("annotations")
    p.add_argument("--ablation", metavar="MATCHES", help="second run (without audio) to compare against")
    p.add_argument("--iou", type=float, default=IOU_GATE)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every registered layer kind")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def diagnostic(error):
    """
    :returns: the JSON object written to stderr for a failed stage.
    """
    out = collections.OrderedDict([("error", type(error).__name__), ("message", str(error))])
    for name, value in sorted(vars(error).items()):
        if name.startswith("_"):
            continue
        try:
            json.dumps(value)
        except (TypeError, ValueError):
            value = str(value)
        out[name] = value
    if isinstance(error, OSError) and error.filename is not None:
        out["path"] = str(error.filename)
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.verbose:
        set_log_level(logging.DEBUG if args.verbose > 1 else logging.INFO)
    try:
        summary, text = args.func(args)
    except (chorus.exceptions.ChorusError, OSError) as e:
        sys.stderr.write(json.dumps(diagnostic(e)) + "\n")
        return EXIT_FAILURE
    if args.json:
        sys.stdout.write(json.dumps(summary) + "\n")
    else:
        sys.stdout.write(text + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
