"""wscswap command line: train, swap, evaluate, ablate, report."""
from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import torch

from . import config as C
from .ablation import SETTINGS, load_result, parse_settings, run_ablation, save_result
from .backends import OracleIDEncoder, train_learned_pose_exp
from .errors import ConfigError, ShapeError, TrainingAborted, WSCError
from .images import load_png, save_png
from .metrics import MetricReport, evaluate
from .synthdata import ImageBatch, make_eval_split
from .trainer import TrainState, forward_swap, load_checkpoint, train

MANIFEST = "manifest.json"


@dataclass
class RunManifest:
    command: str
    config: str
    config_hash: str
    seed: int | None
    started: str
    finished: str | None = None
    layout: dict = field(default_factory=dict)

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / MANIFEST).write_text(json.dumps(dataclasses.asdict(self), indent=2))


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _out_dir(args, run: C.RunConfig | None = None) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get("WSC_OUT", "."))
    return root / (run.out if run is not None else "runs")


def _load_run(args) -> C.RunConfig:
    run = C.load(args.config)
    if getattr(args, "seed", None) is not None:
        run = dataclasses.replace(run, train=run.train.replace(seed=args.seed))
    return run


def _start(command, run: C.RunConfig | None, out_dir, layout) -> RunManifest:
    text = C.dumps(run) if run is not None else ""
    m = RunManifest(command=command, config=text, config_hash=C.config_hash(run) if run is not None else "",
                    seed=run.train.seed if run is not None else None, started=_now(), layout=layout)
    m.write(out_dir)
    if run is not None:
        (Path(out_dir) / "config.ini").write_text(text)
    return m


def _finish(m: RunManifest, out_dir):
    m.finished = _now()
    m.write(out_dir)


def cmd_train(args) -> int:
    run = _load_run(args)
    if args.dry_run:
        print(C.dumps(run), end="")
        return 0
    out = _out_dir(args, run)
    m = _start("train", run, out, {"log": "train.jsonl", "timing": "timing.jsonl",
                                   "checkpoints": "ckpt_<step>/{weights,config,optimizer}"})
    try:
        train(run.train, out_dir=out)
    finally:
        _finish(m, out)
    print(f"trained {run.train.steps} steps -> {out}")
    return 0


def _state(checkpoint) -> TrainState:
    path = Path(checkpoint)
    if not path.exists():
        raise ShapeError(f"checkpoint {path} does not exist")
    return load_checkpoint(path)


def cmd_swap(args) -> int:
    state = _state(args.checkpoint)
    res = state.config.model.resolution
    src, tgt = load_png(args.source), load_png(args.target)
    for name, img in (("source", src), ("target", tgt)):
        if img.shape[-1] != res or img.shape[-2] != res:
            raise ShapeError(f"{name} image is {img.shape[-2]}x{img.shape[-1]}, checkpoint expects {res}x{res}")
    with torch.no_grad():
        y, _ = forward_swap(src[None], tgt[None], state)
    out = Path(args.out)
    if out.parent:
        out.parent.mkdir(parents=True, exist_ok=True)
    save_png(y[0], out)
    print(f"wrote {out}")
    return 0


def _eval_setup(run: C.RunConfig, data_config):
    res = run.train.model.resolution
    split = ImageBatch.stack(make_eval_split(run.eval.num_sources, res, data_config, seed=run.eval.split_seed))
    id_backend = OracleIDEncoder(res, dim=run.train.model.id_dim, seed=run.eval.id_seed)
    pose = None
    if run.eval.pose_backend == "learned":
        pose = train_learned_pose_exp(data_config, steps=run.eval.pose_steps)
    return split, id_backend, pose


def cmd_evaluate(args) -> int:
    state = _state(args.checkpoint)
    if args.config:
        run = C.load(args.config)
        if run.train.model != state.config.model:
            raise ConfigError("evaluation config describes a different model than the checkpoint")
    else:
        run = C.RunConfig(train=state.config)
    out = Path(args.out) if args.out else Path(args.checkpoint)
    m = _start("evaluate", run, out, {"report": "metrics.json"})
    split, id_backend, pose = _eval_setup(run, state.config.data)
    report = evaluate(state.generator, state.id_encoder, split, id_backend, pose)
    report.save(out / "metrics.json")
    _finish(m, out)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_ablate(args) -> int:
    run = _load_run(args)
    settings = parse_settings(args.settings) if args.settings else list(SETTINGS)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [run.train.seed]
    if args.dry_run:
        print(C.dumps(run), end="")
        print(f"# settings: {','.join(settings)}  seeds: {','.join(map(str, seeds))}")
        return 0
    out = _out_dir(args, run)
    m = _start("ablate", run, out, {"result": "ablation.json", "runs": "<setting>_seed<seed>/"})
    pose_steps = run.eval.pose_steps if run.eval.pose_backend == "learned" else 0
    result = run_ablation(run.train, settings, seeds, num_sources=run.eval.num_sources,
                          split_seed=run.eval.split_seed, id_seed=run.eval.id_seed,
                          pose_steps=pose_steps, out_dir=out)
    save_result(result, out / "ablation.json")
    _finish(m, out)
    for name, ok in result["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 0


def _collect_reports(paths):
    reports = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            p = p / "ablation.json" if (p / "ablation.json").exists() else p / "metrics.json"
        try:
            data = json.loads(p.read_text())
        except (OSError, ValueError) as exc:
            raise ShapeError(f"cannot read report {p}: {exc}") from None
        if "medians" in data:
            reports.update(load_result(p)["medians"])
        else:
            label = p.parent.name if p.name == "metrics.json" else p.stem
            reports[label] = MetricReport.from_dict(data)
    if not reports:
        raise ConfigError("no reports given")
    return reports


def cmd_report(args) -> int:
    from .report import write_report

    reports = _collect_reports(args.inputs)
    out = Path(args.out) if args.out else Path(os.environ.get("WSC_OUT", ".")) / "report"
    m = _start("report", None, out, {"table": "metrics.csv", "plots": "<metric>.png"})
    baseline = args.baseline
    if baseline is not None and baseline not in reports:
        raise ConfigError(f"baseline {baseline!r} is not among the reports: {sorted(reports)}")
    files = write_report(reports, out, baseline=baseline)
    _finish(m, out)
    for f in files:
        print(f)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="wscswap", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a swap model")
    t.add_argument("--config", required=True, help="INI run configuration")
    t.add_argument("--seed", type=int, help="overrides [trainer] seed")
    t.add_argument("--out", help="output directory; default $WSC_OUT/<[run] out>")
    t.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("swap", help="swap the identity of one image onto another")
    s.add_argument("--checkpoint", required=True, help="a ckpt_<step> directory")
    s.add_argument("--source", required=True, help="PNG supplying the identity")
    s.add_argument("--target", required=True, help="PNG supplying everything else")
    s.add_argument("--out", required=True, help="output PNG")
    s.set_defaults(func=cmd_swap)

    e = sub.add_parser("evaluate", help="run the all-pairs evaluation protocol")
    e.add_argument("--checkpoint", required=True, help="a ckpt_<step> directory")
    e.add_argument("--config", help="INI whose [metrics] section sets the protocol")
    e.add_argument("--out", help="defaults to the checkpoint directory")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="train and compare ablation settings")
    a.add_argument("--config", required=True, help="INI run configuration shared by all settings")
    a.add_argument("--settings", help=f"comma list from {','.join(SETTINGS)}")
    a.add_argument("--seeds", help="comma list of seeds; default is the config seed")
    a.add_argument("--seed", type=int, help="single seed; ignored when --seeds is given")
    a.add_argument("--out", help="output directory; default $WSC_OUT/<[run] out>")
    a.add_argument("--dry-run", action="store_true", help="print the plan and exit")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="render a CSV table and bar plots from metric reports")
    r.add_argument("inputs", nargs="+", help="metrics.json / ablation.json files or run directories")
    r.add_argument("--out", help="output directory; default $WSC_OUT/report")
    r.add_argument("--baseline", help="label used for relative performance columns")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 4
    except (ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except WSCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
