"""Command line entry point.

Every subcommand writes CSV (and PGM/PNG where relevant) into ``--out`` and
prints ``key,value`` lines to stdout. Exit codes: 0 ok, 1 usage, 2 bad data.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .. import pnm
from ..classifiers import ConfigurationError, ProviderError, oracle_provider, slip_evaluate
from ..controller import (
    ControllerConfig,
    Gripper,
    grasp_contact_loop,
    release_loop,
    write_trace_csv,
)
from ..geometry import CLASSES, DegenerateGeometryError, EmptyCloudError, InvalidDepthError
from ..metrics import (
    ENVIRONMENTS,
    REPORT_THRESHOLDS,
    ConfusionCounts,
    UndefinedMetricError,
    accuracy,
    confusion_matrix,
    csr,
    evaluate_detections,
    failure_distribution,
    first_attempt_rate,
    read_detections,
    read_episodes,
    write_ap_report,
    write_episodes,
)
from ..tactile_image import FilterConfig, FrameSequence, ShapeMismatchError, StructuringElement, TactileFrame
from .config import ObjectSpec, ScenarioConfig, load_scenario

USAGE_ERROR = 1
DATA_ERROR = 2
DATA_ERRORS = (ValueError, OSError, KeyError, ProviderError, ConfigurationError, ShapeMismatchError,
               UndefinedMetricError, DegenerateGeometryError, EmptyCloudError, InvalidDepthError,
               yaml.YAMLError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _emit(key, value) -> None:
    print(f"{key},{value}")


def _fmt(v: float) -> str:
    return f"{v:.6g}"


# ---- shared helpers ------------------------------------------------------


def _scenario(args) -> ScenarioConfig:
    cfg = load_scenario(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_frames(paths, unit: str) -> list[TactileFrame]:
    frames = []
    for i, p in enumerate(paths):
        px = pnm.read(p)
        if px.dtype != np.uint8:
            raise ValueError(f"{p}: tactile frames must be 8-bit")
        if px.ndim == 2:
            # (g, g, g) maps back to g under the luma weights
            px = np.repeat(px[..., None], 3, axis=2)
        frames.append(TactileFrame(px, timestamp=i * 33, unit=unit, image_id=Path(p).stem))
    return frames


def _filter_config(args, base: FilterConfig) -> FilterConfig:
    kw = {}
    if args.bin_threshold is not None:
        kw["threshold"] = args.bin_threshold
    if args.kernel is not None:
        kw["kernel"] = StructuringElement.square(args.kernel)
    kw["sequence_length"] = len(args.frames)
    return replace(base, **kw)


# ---- subcommands ---------------------------------------------------------


def cmd_filter(args) -> int:
    cfg = _scenario(args)
    fcfg = _filter_config(args, cfg.filter)
    frames = _load_frames(args.frames, args.unit)
    seq = FrameSequence(tuple(frames), unit=args.unit, length=fcfg.sequence_length)
    ccfg = replace(cfg.classifier, filter=fcfg)
    decision = slip_evaluate(seq, ccfg, "brightness")
    out = _out(args)
    pnm.write(out / "psi.pgm", decision.image.pixels)
    _emit("psi", out / "psi.pgm")
    _emit("brightness", _fmt(decision.value))
    return 0


def cmd_detect_slip(args) -> int:
    cfg = _scenario(args)
    fcfg = _filter_config(args, cfg.filter)
    ccfg = replace(cfg.classifier, filter=fcfg)
    if args.threshold is not None:
        key = "slip_threshold_cnn" if args.method == "cnn" else "slip_threshold_brightness"
        ccfg = replace(ccfg, **{key: args.threshold})
    provider = None
    if args.method == "cnn":
        if not args.scores:
            raise UsageError("--method cnn needs --scores")
        provider = oracle_provider(args.scores, unit=args.unit, task="slip")
    frames = _load_frames(args.frames, args.unit)
    seq = FrameSequence(tuple(frames), unit=args.unit, length=fcfg.sequence_length)
    d = slip_evaluate(seq, ccfg, args.method, provider)
    pnm.write(_out(args) / "psi.pgm", d.image.pixels)
    _emit("method", args.method)
    _emit("value", _fmt(d.value))
    _emit("label", d.label)
    return 0


def _read_script(path) -> list[tuple[float, float]]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["score_A", "score_B"]:
            raise ValueError(f"{path}: header must be score_A,score_B")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 fields")
            rows.append((float(row[0]), float(row[1])))
    if not rows:
        raise ValueError(f"{path}: script is empty")
    return rows


def _scripted_sources(script):
    """Frame sources whose ids index the script; the last row repeats."""
    blank = np.zeros((8, 8, 3), np.uint8)
    counters = {"A": 0, "B": 0}

    def source(unit):
        def latest():
            i = min(counters[unit], len(script) - 1)
            counters[unit] += 1
            return TactileFrame(blank, timestamp=counters[unit], unit=unit, image_id=f"{unit}{i}")
        return latest

    tables = {u: {f"{u}{i}": row[k] for i, row in enumerate(script)} for k, u in enumerate("AB")}
    providers = tuple(oracle_provider(tables[u], unit=u, task="contact") for u in "AB")
    return [source("A"), source("B")], providers


def cmd_grasp_sim(args) -> int:
    cfg = _scenario(args)
    script = _read_script(args.script)
    sources, providers = _scripted_sources(script)
    ccfg = cfg.classifier
    if args.contact_threshold is not None:
        ccfg = replace(ccfg, contact_threshold=args.contact_threshold)
    gripper = Gripper(step=args.start_step, max_steps=args.max_steps)
    ctl = ControllerConfig(contact_count_threshold=args.count, max_steps=args.max_steps, task=args.task)
    loop = grasp_contact_loop if args.task == "grasp" else release_loop
    result = loop(sources, providers, gripper, ctl, ccfg)
    out = _out(args)
    write_trace_csv(out / "trace.csv", result.trace)
    _emit("outcome", result.outcome)
    _emit("steps_taken", result.steps_taken)
    _emit("iterations", result.iterations)
    _emit("final_step", gripper.step)
    return 0


def cmd_run_episode(args) -> int:
    from .episode import run_episode, write_episode

    cfg = _scenario(args)
    if args.object_class or args.environment:
        cfg = replace(cfg, environment=args.environment or cfg.environment,
                      object=ObjectSpec.for_class(args.object_class) if args.object_class else cfg.object)
    result = run_episode(cfg)
    out = _out(args)
    write_episode(result, out)
    o = result.outcome
    _emit("success", int(o.success))
    _emit("failure_stage", o.failure_stage)
    _emit("slip_events", result.slip_events)
    _emit("out", out)
    return 0


def cmd_experiment(args) -> int:
    from . import experiments as ex

    cfg = _scenario(args) if args.config else None
    out = _out(args)
    figures = []
    if args.name == "slip-comp":
        base = cfg or ex.slip_comp_scenario()
        if args.seed is not None:
            base = replace(base, seed=args.seed)
        runs = [ex.experiment_slip_compensation(base, compensate=c, seconds=args.seconds)
                for c in (True, False)]
        for run in runs:
            tag = "on" if run.compensate else "off"
            ex.write_lift_timeline(out / f"lift_compensation_{tag}.csv", run)
            _emit(f"slip_events_{tag}", run.slip_events)
            _emit(f"retained_{tag}", int(run.retained))
            _emit(f"fall_time_s_{tag}", "" if run.fall_time_s is None else run.fall_time_s)
        if args.figures:
            from .plotting import plot_lift_timelines
            figures.append(plot_lift_timelines(out / "lift_timeline.png", runs))
    elif args.name == "contact-sweep":
        counts = tuple(range(1, args.max_count + 1))
        sweep = ex.experiment_contact_sweep(counts=counts, seed=args.seed or 0, seconds=args.seconds)
        ex.write_sweep(out / "contact_sweep.csv", sweep)
        for cls in CLASSES:
            _emit(f"minimal_count_{cls}", sweep.minimal.get(cls, ""))
        if args.figures:
            from .plotting import plot_sweep
            figures.append(plot_sweep(out / "contact_sweep.png", sweep))
    elif args.name == "slip-accuracy":
        report = ex.experiment_slip_accuracy(seed=args.seed or 0)
        ex.write_accuracy(out / "slip_accuracy.csv", report)
        for r in report.rows:
            _emit(f"accuracy_{r.unit}_T{r.threshold:g}", f"{r.accuracy:.3f}")
            _emit(f"false_positives_{r.unit}_T{r.threshold:g}", r.false_positives)
        # wall-clock numbers stay off stdout so outputs remain reproducible
        print(f"median_ms,{report.median_ms:.3f}", file=sys.stderr)
        print(f"windows,{report.windows}", file=sys.stderr)
        if args.figures:
            from .plotting import plot_accuracy
            figures.append(plot_accuracy(out / "slip_accuracy.png", report))
    elif args.name == "batch":
        from .episode import run_batch

        base = cfg or ScenarioConfig(seed=args.seed or 0)
        configs = []
        for env in ENVIRONMENTS:
            for cls in CLASSES:
                for k in range(args.per_cell):
                    seed = base.seed * 1000 + len(configs)
                    configs.append(replace(base, seed=seed, environment=env,
                                           object=ObjectSpec.for_class(cls)))
        outcomes = run_batch(configs)
        write_episodes(out / "episodes.csv", outcomes)
        figures += _report_csr(outcomes, out, args.figures)
    for f in figures:
        _emit("figure", f)
    return 0


def _report_csr(outcomes, out: Path, figures: bool) -> list:
    tables = {g: csr(outcomes, g, first_attempt_only=True) for g in ("environment", "class", "module")}
    with open(out / "csr.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group_by", "group", "csr"])
        for g, table in tables.items():
            for k, v in table.items():
                w.writerow([g, k, f"{v:.4f}"])
                _emit(f"csr_{g}_{k}", f"{v:.2f}")
    _emit("csr_first_attempt", f"{first_attempt_rate(outcomes):.2f}")
    for stage, share in failure_distribution(outcomes).items():
        _emit(f"failure_share_{stage}", f"{share:.3f}")
    if figures:
        from .plotting import plot_csr
        return [plot_csr(out / "csr.png", tables)]
    return []


def cmd_eval_metrics(args) -> int:
    if not (args.gt or args.episodes or args.labels or args.recorded_tallies):
        raise UsageError("nothing to evaluate: give --gt/--pred, --labels, --episodes or --recorded-tallies")
    out = _out(args)
    figures = []
    if args.gt or args.pred:
        if not (args.gt and args.pred):
            raise UsageError("--gt and --pred go together")
        gts = read_detections(args.gt, args.mode)
        dets = read_detections(args.pred, args.mode)
        rows = evaluate_detections(dets, gts, args.thresholds)
        write_ap_report(out / "ap_report.csv", rows)
        for r in rows:
            _emit(f"AP{round(r['iou_threshold'] * 100)}_{r['class']}", f"{r['ap']},{float(r['ap']):.6f}")
    if args.labels:
        pairs = []
        with open(args.labels, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader, [])]
            if header[:2] != ["true", "predicted"]:
                raise ValueError(f"{args.labels}: header must be true,predicted")
            pairs = [(r[0].strip(), r[1].strip()) for r in reader if r]
        classes = sorted({p for pair in pairs for p in pair})
        if set(classes) <= {"0", "1"}:
            counts = ConfusionCounts.from_labels([int(t) for t, _ in pairs], [int(p) for _, p in pairs])
            _emit("accuracy", f"{accuracy(counts):.6f}")
            _emit("counts", f"TP={counts.tp} TN={counts.tn} FP={counts.fp} FN={counts.fn}")
        else:
            m = confusion_matrix(pairs, classes)
            _emit("accuracy", f"{np.trace(m) / m.sum():.6f}")
        m = confusion_matrix(pairs, classes)
        with open(out / "confusion.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\predicted", *classes])
            for c, row in zip(classes, m):
                w.writerow([c, *row.tolist()])
    if args.episodes or args.recorded_tallies:
        if args.episodes:
            outcomes = read_episodes(args.episodes)
        else:
            from .tallies import recorded_outcomes
            outcomes = recorded_outcomes()
        if not outcomes:
            raise ValueError("no episodes to aggregate")
        figures += _report_csr(outcomes, out, args.figures)
    for f in figures:
        _emit("figure", f)
    return 0


# ---- parser --------------------------------------------------------------


def _thresholds(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}") from None
    if not vals or any(not 0 < v <= 1 for v in vals):
        raise argparse.ArgumentTypeError("thresholds must lie in (0, 1]")
    return vals


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS, help="scenario YAML file")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")

    p = _Parser(prog="tactigrasp", description="Visual-tactile grasping toolkit and simulator.")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="scenario YAML file")
    p.add_argument("--out", default="tactigrasp_out", help="output directory")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def frame_args(sp):
        sp.add_argument("frames", nargs="+", help="PPM/PGM frames, oldest first")
        sp.add_argument("--unit", choices=("A", "B"), default="A")
        sp.add_argument("--bin-threshold", type=int, default=None)
        sp.add_argument("--kernel", type=int, default=None, help="square kernel size (odd)")

    sp = sub.add_parser("filter", parents=[common], help="frame window -> psi.pgm + brightness")
    frame_args(sp)
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("detect-slip", parents=[common], help="slip label for one frame window")
    frame_args(sp)
    sp.add_argument("--method", choices=("brightness", "cnn"), default="brightness")
    sp.add_argument("--threshold", type=float, default=None)
    sp.add_argument("--scores", help="image_id,score table for the cnn method (keyed by psi id)")
    sp.set_defaults(func=cmd_detect_slip)

    sp = sub.add_parser("grasp-sim", parents=[common], help="controller run from scripted scores")
    sp.add_argument("--script", required=True, help="CSV score_A,score_B, one row per iteration")
    sp.add_argument("--task", choices=("grasp", "release"), default="grasp")
    sp.add_argument("--count", type=int, default=3)
    sp.add_argument("--start-step", type=int, default=0)
    sp.add_argument("--max-steps", type=int, default=255)
    sp.add_argument("--contact-threshold", type=float, default=None)
    sp.set_defaults(func=cmd_grasp_sim)

    sp = sub.add_parser("run-episode", parents=[common], help="one simulated pickup")
    sp.add_argument("--class", dest="object_class", choices=CLASSES, default=None)
    sp.add_argument("--environment", choices=ENVIRONMENTS, default=None)
    sp.set_defaults(func=cmd_run_episode)

    sp = sub.add_parser("experiment", parents=[common], help="desk-scale experiments")
    sp.add_argument("name", choices=("slip-comp", "contact-sweep", "slip-accuracy", "batch"))
    sp.add_argument("--seconds", type=float, default=15.0, help="lift duration")
    sp.add_argument("--max-count", type=int, default=6)
    sp.add_argument("--per-cell", type=int, default=1, help="episodes per environment/class (batch)")
    sp.add_argument("--figures", action="store_true", help="also render PNG figures")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("eval-metrics", parents=[common], help="AP/IoU, accuracy, confusion, CSR")
    sp.add_argument("--gt")
    sp.add_argument("--pred")
    sp.add_argument("--mode", choices=("box", "mask"), default="box")
    sp.add_argument("--thresholds", type=_thresholds, default=REPORT_THRESHOLDS)
    sp.add_argument("--labels", help="CSV true,predicted")
    sp.add_argument("--episodes", help="CSV environment,class,attempt,success,failure_stage")
    sp.add_argument("--recorded-tallies", action="store_true", help="use the bundled 60-episode tallies")
    sp.add_argument("--figures", action="store_true")
    sp.set_defaults(func=cmd_eval_metrics)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tactigrasp: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except DATA_ERRORS as exc:
        print(f"tactigrasp: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
