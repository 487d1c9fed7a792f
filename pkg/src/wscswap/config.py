"""INI run configuration: one section per module, parsed into the library's config objects."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .networks import PRESETS, ModelConfig
from .synthdata import DatasetConfig
from .trainer import TrainConfig

REQUIRED = {"trainer": ("steps", "seed"), "networks": ("preset",)}

TRAINER_KEYS = ("steps", "batch_size", "seed", "p_self", "lr_gen", "lr_disc", "lr_adv", "adam_betas",
                "checkpoint_every", "enable_fnid_reg", "id_backend", "id_seed")
DATA_KEYS = ("num_identities", "pose_dim", "exp_dim", "seed", "depth")


@dataclass
class EvalConfig:
    num_sources: int = 8
    split_seed: int = 12345
    id_seed: int = 1
    pose_backend: str = "learned"
    pose_steps: int = 300

    def __post_init__(self):
        if self.num_sources < 3:
            raise ConfigError(f"num_sources must be at least 3, got {self.num_sources}")
        if self.pose_backend not in ("learned", "none"):
            raise ConfigError(f"pose_backend must be 'learned' or 'none', got {self.pose_backend!r}")


@dataclass
class RunConfig:
    train: TrainConfig
    eval: EvalConfig = field(default_factory=EvalConfig)
    preset: str = "desk"
    out: str = "runs"


def _key_lines(text: str) -> dict:
    """(section, key) -> 1-based line number; (section, None) for headers."""
    lines, section = {}, None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = n
        elif section is not None:
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            lines[(section, key)] = n
    return lines


def _where(source, lines, section, key=None):
    n = lines.get((section, key)) or lines.get((section, None))
    return f"{source}:{n}" if n else str(source)


def _convert(raw: str, kind, what):
    try:
        if kind is bool:
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            return tuple(int(p) for p in raw.split(",") if p.strip())
        if kind == "floats":
            return tuple(float(p) for p in raw.split(",") if p.strip())
        if kind == "optint":
            return None if raw.strip().lower() in ("", "none") else int(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{what}: cannot read {raw!r}") from None


def _kinds(cls):
    out = {}
    for f in dataclasses.fields(cls):
        t = str(f.type)
        if "tuple" in t:
            out[f.name] = tuple
        elif "None" in t and "int" in t:
            out[f.name] = "optint"
        elif "bool" in t:
            out[f.name] = bool
        elif "float" in t:
            out[f.name] = float
        elif "int" in t:
            out[f.name] = int
        elif "str" in t:
            out[f.name] = str
    return out


def loads(text: str, source="<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(source))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    lines = _key_lines(text)
    known = {"trainer", "networks", "losses", "synthdata", "metrics", "run"}
    for sec in parser.sections():
        if sec not in known:
            raise ConfigError(f"{_where(source, lines, sec)}: unknown section [{sec}]")
    for sec, keys in REQUIRED.items():
        for k in keys:
            if not parser.has_option(sec, k):
                raise ConfigError(f"{_where(source, lines, sec)}: missing required key '{k}' in [{sec}]")

    def section(name, allowed, kinds):
        vals = {}
        if not parser.has_section(name):
            return vals
        for k, raw in parser.items(name):
            where = _where(source, lines, name, k)
            if k not in allowed:
                raise ConfigError(f"{where}: unknown key '{k}' in [{name}]")
            kind = kinds.get(k, str)
            vals[k] = _convert(raw, kind, f"{where}: [{name}] {k}")
        return vals

    def build(what, fn, **kw):
        try:
            return fn(**kw)
        except ConfigError as exc:
            raise ConfigError(f"{_where(source, lines, what)}: {exc}") from None

    model_kinds = _kinds(ModelConfig)
    net = section("networks", set(model_kinds) | {"preset"}, dict(model_kinds, preset=str))
    preset = net.pop("preset")
    if preset not in PRESETS:
        raise ConfigError(f"{_where(source, lines, 'networks', 'preset')}: unknown preset {preset!r}; "
                          f"choose from {sorted(PRESETS)}")
    model = build("networks", PRESETS[preset], **net)

    data_kinds = {k: int for k in DATA_KEYS}
    data = section("synthdata", set(DATA_KEYS), data_kinds)
    data = build("synthdata", DatasetConfig, resolution=model.resolution,
                 **{"exp_dim": model.reghead_dim - data.get("pose_dim", 3), **data})

    w_kinds = {f.name: float for f in dataclasses.fields(LossWeights)}
    weights = build("losses", LossWeights, **section("losses", set(w_kinds), w_kinds))

    t_kinds = dict(_kinds(TrainConfig), adam_betas="floats")
    tr = section("trainer", set(TRAINER_KEYS), t_kinds)
    train = build("trainer", TrainConfig, model=model, data=data, weights=weights, **tr)

    e_kinds = _kinds(EvalConfig)
    ev = build("metrics", EvalConfig, **section("metrics", set(e_kinds), e_kinds))
    run = section("run", {"out"}, {"out": str})
    return RunConfig(train=train, eval=ev, preset=preset, out=run.get("out", "runs"))


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text, source=path)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v)
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


def dumps(run: RunConfig) -> str:
    """Fully resolved configuration; ``loads(dumps(c)) == c``."""
    t = run.train
    parts = []

    def emit(name, pairs):
        parts.append(f"[{name}]")
        parts.extend(f"{k} = {_fmt(v)}" for k, v in pairs)
        parts.append("")

    emit("run", [("out", run.out)])
    emit("trainer", [(k, getattr(t, k)) for k in TRAINER_KEYS])
    emit("networks", [("preset", run.preset)] + [(f.name, getattr(t.model, f.name))
                                                  for f in dataclasses.fields(ModelConfig)])
    emit("losses", [(f.name, getattr(t.weights, f.name)) for f in dataclasses.fields(LossWeights)])
    emit("synthdata", [(k, getattr(t.data, k)) for k in DATA_KEYS])
    emit("metrics", [(f.name, getattr(run.eval, f.name)) for f in dataclasses.fields(EvalConfig)])
    return "\n".join(parts)


def config_hash(run: RunConfig) -> str:
    """Git blob hash of the resolved configuration text."""
    body = dumps(run).encode()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()
