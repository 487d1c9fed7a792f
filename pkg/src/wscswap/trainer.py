"""Alternating discriminator / AdvHead / generator optimisation."""
from __future__ import annotations

import contextlib
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .backends import OraclePoseExp, OracleSegmenter, make_id_backend
from .errors import CheckpointError, ConfigError, TrainingAborted
from .networks import AdvHead, ModelConfig, MultiScaleDiscriminator, SwapGenerator
from .synthdata import DatasetConfig, ImageBatch, SwapPair, sample_training_batch


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    p_self: float = 0.5
    lr_gen: float = 2e-4
    lr_disc: float = 4e-4
    lr_adv: float = 1e-4
    adam_betas: tuple = (0.5, 0.999)
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    seed: int = 0
    checkpoint_every: int = 0
    enable_fnid_reg: bool = True
    id_backend: str = "oracle"
    id_seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DatasetConfig = field(default_factory=DatasetConfig)

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be positive")
        if min(self.lr_gen, self.lr_disc, self.lr_adv) <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0 <= self.p_self <= 1:
            raise ConfigError("p_self must lie in [0, 1]")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be nonnegative")
        if self.data.resolution != self.model.resolution:
            raise ConfigError(
                f"dataset resolution {self.data.resolution} differs from model resolution {self.model.resolution}")
        if self.data.pose_dim + self.data.exp_dim != self.model.reghead_dim:
            raise ConfigError("reghead_dim must equal pose_dim + exp_dim")
        self.adam_betas = tuple(self.adam_betas)

    @property
    def effective_weights(self) -> L.LossWeights:
        w = self.weights
        if not self.enable_fnid_reg:
            w = w.replace(beta_fnid=0.0)
        if not self.model.use_nfa:
            w = w.replace(beta_nfa=0.0)
        return w

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["weights"] = L.LossWeights(**d["weights"])
        d["model"] = ModelConfig.from_dict(d["model"])
        d["data"] = DatasetConfig(**d["data"])
        return cls(**d)


@contextlib.contextmanager
def frozen(*modules):
    """Parameters of ``modules`` take no gradient; gradients still flow through them."""
    saved = [(p, p.requires_grad) for m in modules for p in m.parameters()]
    for p, _ in saved:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad_(flag)


def _finite(name, value, report=None):
    if not torch.isfinite(value).all():
        raise TrainingAborted(f"non-finite {name}", report)


class TrainState:
    def __init__(self, config: TrainConfig, id_encoder=None):
        self.config = config
        torch.manual_seed(config.seed)
        cfg = config.model
        self.generator = SwapGenerator(cfg)
        self.adv_head = AdvHead(cfg)
        self.discriminator = MultiScaleDiscriminator(cfg)
        self.id_encoder = id_encoder if id_encoder is not None else make_id_backend(
            config.id_backend, config.data, seed=config.id_seed, dim=cfg.id_dim)
        self.pose_backend = OraclePoseExp()
        self.segmenter = OracleSegmenter()
        b = config.adam_betas
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=config.lr_gen, betas=b)
        self.opt_adv = torch.optim.Adam(self.adv_head.parameters(), lr=config.lr_adv, betas=b)
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=config.lr_disc, betas=b)
        self.step = 0
        self.running = {}
        self.check_isolation = False

    def modules(self):
        return {"generator": self.generator, "adv_head": self.adv_head, "discriminator": self.discriminator}

    def optimizers(self):
        return {"opt_g": self.opt_g, "opt_adv": self.opt_adv, "opt_d": self.opt_d}

    def zero_grad(self):
        for m in self.modules().values():
            m.zero_grad(set_to_none=True)

    def _assert_clean(self):
        if self.check_isolation:
            for name, m in self.modules().items():
                for pname, p in m.named_parameters():
                    if p.grad is not None and bool(p.grad.abs().sum() != 0):
                        raise AssertionError(f"stale gradient on {name}.{pname}")


def forward_swap(source: ImageBatch | torch.Tensor, target: ImageBatch | torch.Tensor, state: TrainState):
    xs = source.pixels if isinstance(source, ImageBatch) else source
    xt = target.pixels if isinstance(target, ImageBatch) else target
    if xs.shape != xt.shape:
        raise ConfigError("source and target batches must have the same shape")
    with torch.no_grad():
        z_id = state.id_encoder(xs)
    enc = state.generator.encode(xt)
    y = state.generator.fuse(enc["z_fnid"], enc["fnid_pyr"], enc["nfa_pyr"], z_id, enc["shallow"])
    return y, dict(enc, z_id=z_id)


def train_step(pair: SwapPair, state: TrainState) -> L.LossReport:
    cfg = state.config
    w = cfg.effective_weights
    gen, adv, disc = state.generator, state.adv_head, state.discriminator
    xt = pair.target.pixels
    step = state.step + 1

    y, inter = forward_swap(pair.source, pair.target, state)
    z_fnid = inter["z_fnid"]
    with torch.no_grad():
        z_id_t = state.id_encoder(xt)

    # discriminator
    state.zero_grad()
    state._assert_clean()
    real_logits = disc(xt)
    l_disc, _ = L.hinge_gan(real_logits, disc(y.detach()))
    _finite("discriminator loss", l_disc)
    l_disc.backward()
    state.opt_d.step()

    # adversarial head on a detached code: the FNID encoder is untouched
    if cfg.enable_fnid_reg:
        state.zero_grad()
        state._assert_clean()
        _, l_ah = L.loss_adv_fnid(adv(z_fnid.detach()), z_id_t)
        _finite("AdvHead loss", l_ah)
        l_ah.backward()
        state.opt_adv.step()

    # generator
    state.zero_grad()
    state._assert_clean()
    with frozen(adv, disc):
        _, l_gen = L.hinge_gan([t.detach() for t in real_logits], disc(y))
        target_params = state.pose_backend(pair.target).as_vector().to(xt.dtype)
        if cfg.enable_fnid_reg:
            l_r_fnid = L.loss_reg_fnid(gen.reg_head(z_fnid), target_params)
            l_adv_fnid, l_ah_fnid = L.loss_adv_fnid(adv(z_fnid), z_id_t)
        else:
            with torch.no_grad():
                l_r_fnid = L.loss_reg_fnid(gen.reg_head(z_fnid), target_params)
                l_adv_fnid, l_ah_fnid = L.loss_adv_fnid(adv(z_fnid), z_id_t)
        l_id = L.loss_id(inter["z_id"], state.id_encoder(y))
        l_rec = L.loss_rec(xt, y, pair.is_self_swap)
        enc_y = gen.encode(y)
        l_attr = L.loss_attr(inter["fnid_pyr"], inter["nfa_pyr"], enc_y["fnid_pyr"], enc_y["nfa_pyr"])
        if cfg.model.use_nfa:
            mask = state.segmenter(pair.target)
            if w.beta_nfa > 0:
                l_nfa = L.loss_nfa(inter["z_nfa"], gen.masked_encode(xt, mask))
            else:
                with torch.no_grad():
                    l_nfa = L.loss_nfa(inter["z_nfa"], gen.masked_encode(xt, mask))
        else:
            l_nfa = torch.zeros((), dtype=xt.dtype)
        l_fnid, l_glb, l_total = L.compose(l_r_fnid, l_adv_fnid, l_id, l_rec, l_attr, l_gen, l_nfa, w)
        terms = dict(l_r_fnid=l_r_fnid, l_adv_fnid=l_adv_fnid, l_ah_fnid=l_ah_fnid, l_id=l_id,
                     l_rec=l_rec, l_attr=l_attr, l_adv_gan=l_gen, l_nfa=l_nfa, l_disc=l_disc)
        vals = {k: float(v.detach()) for k, v in terms.items()}
        if not torch.isfinite(l_total):
            raise TrainingAborted(f"non-finite total loss at step {step}", dict(vals, step=step))
        l_total.backward()
    state.opt_g.step()
    state.zero_grad()

    state.step = step
    report = L.LossReport(
        l_r_fnid=vals["l_r_fnid"], l_adv_fnid=vals["l_adv_fnid"], l_ah_fnid=vals["l_ah_fnid"],
        l_fnid=float(l_fnid.detach()), l_nfa=vals["l_nfa"], l_id=vals["l_id"], l_rec=vals["l_rec"],
        l_attr=vals["l_attr"], l_glb=float(l_glb.detach()), l_adv_gan=vals["l_adv_gan"], l_total=float(l_total.detach()),
        step=step, l_disc=vals["l_disc"],
    )
    for k, v in report.to_dict().items():
        if k != "step":
            state.running[k] = v if k not in state.running else 0.98 * state.running[k] + 0.02 * v
    return report


def batch_for_step(config: TrainConfig, step: int) -> SwapPair:
    rng = np.random.default_rng([config.seed, step])
    return sample_training_batch(config.data, config.batch_size, config.p_self, rng)


def save_checkpoint(state: TrainState, out_dir) -> Path:
    path = Path(out_dir) / f"ckpt_{state.step}"
    path.mkdir(parents=True, exist_ok=True)
    weights = {k: m.state_dict() for k, m in state.modules().items()}
    if isinstance(state.id_encoder, torch.nn.Module) and state.config.id_backend != "oracle":
        weights["id_encoder"] = state.id_encoder.state_dict()
    torch.save(weights, path / "weights")
    (path / "config").write_text(json.dumps(state.config.to_dict(), indent=2, sort_keys=True))
    opt = {k: o.state_dict() for k, o in state.optimizers().items()}
    opt.update(step=state.step, running=state.running, torch_rng=torch.get_rng_state())
    torch.save(opt, path / "optimizer")
    return path


def load_checkpoint(path, expected: TrainConfig | ModelConfig | None = None) -> TrainState:
    path = Path(path)
    try:
        stored = TrainConfig.from_dict(json.loads((path / "config").read_text()))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"unreadable checkpoint config in {path}: {exc}") from exc
    if expected is not None:
        want = expected.model if isinstance(expected, TrainConfig) else expected
        if want != stored.model:
            raise CheckpointError(f"checkpoint {path} was written for a different model configuration")
    weights = torch.load(path / "weights", weights_only=False)
    id_encoder = None
    if "id_encoder" in weights:
        from .backends import LearnedIDEncoder

        id_encoder = LearnedIDEncoder(stored.model.resolution, stored.model.id_dim)
        id_encoder.load_state_dict(weights["id_encoder"])
        id_encoder.eval().requires_grad_(False)
    config = expected if isinstance(expected, TrainConfig) else stored
    state = TrainState(config, id_encoder=id_encoder)
    for k, m in state.modules().items():
        m.load_state_dict(weights[k])
    opt_file = path / "optimizer"
    if opt_file.exists():
        opt = torch.load(opt_file, weights_only=False)
        for k, o in state.optimizers().items():
            o.load_state_dict(opt[k])
        state.step = int(opt["step"])
        state.running = dict(opt["running"])
        torch.set_rng_state(opt["torch_rng"])
    return state


def train(config: TrainConfig, out_dir=None, state: TrainState | None = None, log_path=None,
          callback=None):
    """Run ``train_step`` until ``config.steps``; returns (state, list of log records).

    Loss records go to ``train.jsonl``; wall-clock step times go to a separate
    ``timing.jsonl`` so the loss log is reproducible byte for byte.
    """
    torch.use_deterministic_algorithms(True)
    state = state if state is not None else TrainState(config)
    out_dir = Path(out_dir) if out_dir is not None else None
    if log_path is None and out_dir is not None:
        log_path = out_dir / "train.jsonl"
    fh = th = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        mode = "a" if state.step > 0 else "w"
        fh = open(log_path, mode)
        th = open(log_path.with_name("timing.jsonl"), mode)
    records = []
    try:
        while state.step < config.steps:
            t0 = time.perf_counter()
            report = train_step(batch_for_step(config, state.step + 1), state)
            rec = report.to_dict()
            records.append(rec)
            if fh is not None:
                fh.write(json.dumps(rec) + "\n")
                th.write(json.dumps({"step": state.step, "wall_ms": round((time.perf_counter() - t0) * 1000, 3)}) + "\n")
            if out_dir is not None and config.checkpoint_every and state.step % config.checkpoint_every == 0:
                save_checkpoint(state, out_dir)
            if callback is not None:
                callback(state, report)
        if out_dir is not None and not (config.checkpoint_every and state.step % config.checkpoint_every == 0):
            save_checkpoint(state, out_dir)
    finally:
        for h in (fh, th):
            if h is not None:
                h.close()
    return state, records
