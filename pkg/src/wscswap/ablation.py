"""Component ablation: skip connections, FNID regularization and the NFA branch."""
from __future__ import annotations

import json
from pathlib import Path

from .backends import OracleIDEncoder, train_learned_pose_exp
from .errors import ConfigError
from .metrics import MetricReport, evaluate, summarize
from .synthdata import ImageBatch, make_eval_split
from .trainer import TrainConfig, train

# name -> (use_skip_connections, enable_fnid_reg, use_nfa)
SETTINGS = {
    "Setting1": (True, False, False),
    "Setting2": (False, False, False),
    "Setting3": (False, True, False),
    "Full": (False, True, True),
}
ALIASES = {"s1": "Setting1", "s2": "Setting2", "s3": "Setting3", "full": "Full", "ours": "Full"}


def canonical(name: str) -> str:
    key = name.strip()
    if key in SETTINGS:
        return key
    if key.lower() in ALIASES:
        return ALIASES[key.lower()]
    if key.lower() in (s.lower() for s in SETTINGS):
        return next(s for s in SETTINGS if s.lower() == key.lower())
    raise ConfigError(f"unknown ablation setting {name!r}; choose from {list(SETTINGS)}")


def parse_settings(text: str) -> list:
    names = [canonical(s) for s in text.split(",") if s.strip()]
    if not names:
        raise ConfigError("no ablation settings given")
    return names


def apply_setting(config: TrainConfig, name: str, seed: int | None = None) -> TrainConfig:
    skip, reg, nfa = SETTINGS[canonical(name)]
    model = config.model.replace(use_skip_connections=skip, use_nfa=nfa)
    return config.replace(model=model, enable_fnid_reg=reg, seed=config.seed if seed is None else seed)


def ordering_checks(medians: dict) -> dict:
    """The four directional relations expected between settings; absent settings skip a check."""
    checks = {}

    def have(*names):
        return all(n in medians for n in names)

    if have("Setting1", "Setting2"):
        checks["id_csim(Setting2) > id_csim(Setting1)"] = medians["Setting2"].id_csim > medians["Setting1"].id_csim
        checks["psnr(Setting1) > psnr(Setting2)"] = medians["Setting1"].psnr > medians["Setting2"].psnr
    if have("Full", "Setting3"):
        checks["psnr(Full) > psnr(Setting3)"] = medians["Full"].psnr > medians["Setting3"].psnr
    if have("Full", "Setting2"):
        checks["id_csim(Full) >= id_csim(Setting2)"] = medians["Full"].id_csim >= medians["Setting2"].id_csim
    return checks


def run_ablation(config: TrainConfig, settings, seeds=(0,), num_sources: int = 8, split_seed: int = 12345,
                 id_seed: int = 1, pose_steps: int = 0, out_dir=None, log=print):
    """Train every setting for every seed under one budget and evaluate it.

    Returns ``{"runs": {setting: [MetricReport per seed]}, "medians": {...}, "checks": {...}}``.
    """
    settings = [canonical(s) for s in settings]
    res = config.model.resolution
    split = ImageBatch.stack(make_eval_split(num_sources, res, config.data, seed=split_seed))
    id_backend = OracleIDEncoder(res, dim=config.model.id_dim, seed=id_seed)
    pose_backend = train_learned_pose_exp(config.data, steps=pose_steps) if pose_steps > 0 else None
    runs = {}
    for name in settings:
        runs[name] = []
        for seed in seeds:
            cfg = apply_setting(config, name, seed)
            run_dir = Path(out_dir) / f"{name}_seed{seed}" if out_dir is not None else None
            state, _ = train(cfg, out_dir=run_dir)
            report = evaluate(state.generator, state.id_encoder, split, id_backend, pose_backend)
            runs[name].append(report)
            if run_dir is not None:
                report.save(run_dir / "metrics.json")
            if log is not None:
                log(f"{name} seed={seed} id_csim={report.id_csim:.4f} psnr={report.psnr:.2f}")
    medians = {name: summarize(r) for name, r in runs.items()}
    result = {"runs": runs, "medians": medians, "checks": ordering_checks(medians)}
    if out_dir is not None:
        save_result(result, Path(out_dir) / "ablation.json")
    return result


def save_result(result: dict, path):
    data = {
        "runs": {k: [r.to_dict() for r in v] for k, v in result["runs"].items()},
        "medians": {k: v.to_dict() for k, v in result["medians"].items()},
        "checks": result["checks"],
    }
    Path(path).write_text(json.dumps(data, indent=2))


def load_result(path) -> dict:
    data = json.loads(Path(path).read_text())
    return {
        "runs": {k: [MetricReport.from_dict(r) for r in v] for k, v in data["runs"].items()},
        "medians": {k: MetricReport.from_dict(v) for k, v in data["medians"].items()},
        "checks": data.get("checks", {}),
    }
