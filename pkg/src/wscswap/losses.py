"""Training objectives. Every reduction is a mean over the batch (and over
elements where a norm is taken per map), except the pose/expression
regression which sums over its 67 coordinates."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class LossWeights:
    beta_adv_fnid: float = 0.1
    beta_rec: float = 0.2
    beta_attr: float = 0.5
    beta_glb: float = 5.0
    beta_fnid: float = 2.0
    beta_nfa: float = 100.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"{f.name} must be nonnegative")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class LossReport:
    l_r_fnid: float
    l_adv_fnid: float
    l_ah_fnid: float
    l_fnid: float
    l_nfa: float
    l_id: float
    l_rec: float
    l_attr: float
    l_glb: float
    l_adv_gan: float
    l_total: float
    step: int = 0
    l_disc: float = 0.0

    def to_dict(self):
        return dataclasses.asdict(self)

    def consistency_errors(self, weights: LossWeights):
        """Relative residuals of the three linear identities."""
        def rel(lhs, rhs):
            return abs(lhs - rhs) / max(1.0, abs(lhs))

        return {
            "fnid": rel(self.l_fnid, self.l_r_fnid + weights.beta_adv_fnid * self.l_adv_fnid),
            "glb": rel(self.l_glb, self.l_id + weights.beta_rec * self.l_rec + weights.beta_attr * self.l_attr),
            "total": rel(self.l_total, self.l_adv_gan + weights.beta_glb * self.l_glb
                         + weights.beta_fnid * self.l_fnid + weights.beta_nfa * self.l_nfa),
        }


def cosine_similarity(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Row-wise cosine similarity along the last dimension."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    na = torch.linalg.vector_norm(a, dim=-1)
    nb = torch.linalg.vector_norm(b, dim=-1)
    if bool((na == 0).any()) or bool((nb == 0).any()):
        raise ValueError("cosine similarity undefined for zero vectors")
    return (a * b).sum(-1) / (na * nb)


def loss_reg_fnid(reghead_out: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if reghead_out.shape != target.shape:
        raise ShapeError(f"RegHead output {tuple(reghead_out.shape)} vs target {tuple(target.shape)}")
    return ((reghead_out - target) ** 2).sum(-1).mean()


def loss_adv_fnid(advhead_out: torch.Tensor, target_id: torch.Tensor):
    """(encoder loss, AdvHead loss); they always sum to one."""
    csim = cosine_similarity(advhead_out, target_id).mean()
    return csim, 1 - csim


def loss_nfa(z_nfa: torch.Tensor, z_nfa_teacher: torch.Tensor) -> torch.Tensor:
    if z_nfa.shape != z_nfa_teacher.shape:
        raise ShapeError("NFA maps differ in shape")
    return ((z_nfa - z_nfa_teacher) ** 2).mean()


def loss_id(src_id: torch.Tensor, swap_id: torch.Tensor) -> torch.Tensor:
    return (1 - cosine_similarity(src_id, swap_id)).mean()


def loss_rec(target: torch.Tensor, output: torch.Tensor, is_self_swap: torch.Tensor) -> torch.Tensor:
    if target.shape != output.shape:
        raise ShapeError("target and output differ in shape")
    sel = is_self_swap.to(torch.bool)
    if not bool(sel.any()):
        return output.sum() * 0.0
    return ((target[sel] - output[sel]) ** 2).mean()


def loss_attr(fnid_pyr_t, nfa_pyr_t, fnid_pyr_y, nfa_pyr_y) -> torch.Tensor:
    """Target-branch maps are treated as constants."""
    fnid_pyr_t, fnid_pyr_y = list(fnid_pyr_t), list(fnid_pyr_y)
    nfa_pyr_t, nfa_pyr_y = list(nfa_pyr_t or []), list(nfa_pyr_y or [])
    if len(fnid_pyr_t) != len(fnid_pyr_y) or len(nfa_pyr_t) != len(nfa_pyr_y):
        raise ShapeError("pyramids differ in length")
    total = 0.0
    for t, y in zip(fnid_pyr_t + nfa_pyr_t, fnid_pyr_y + nfa_pyr_y):
        if t.shape != y.shape:
            raise ShapeError("pyramid levels differ in shape")
        total = total + ((t.detach() - y) ** 2).mean()
    return total


def hinge_gan(real_logits, fake_logits):
    """(discriminator loss, generator loss), each averaged over scales."""
    if len(real_logits) != len(fake_logits):
        raise ShapeError("real and fake logit lists differ in length")
    n = len(fake_logits)
    l_disc = sum(F.relu(1 - r).mean() + F.relu(1 + f).mean() for r, f in zip(real_logits, fake_logits)) / n
    l_gen = -sum(f.mean() for f in fake_logits) / n
    return l_disc, l_gen


def compose(l_r_fnid, l_adv_fnid, l_id, l_rec, l_attr, l_adv_gan, l_nfa, weights: LossWeights):
    """(l_fnid, l_glb, l_total); works on floats and tensors alike."""
    l_fnid = l_r_fnid + weights.beta_adv_fnid * l_adv_fnid
    l_glb = l_id + weights.beta_rec * l_rec + weights.beta_attr * l_attr
    l_total = l_adv_gan + weights.beta_glb * l_glb + weights.beta_fnid * l_fnid + weights.beta_nfa * l_nfa
    return l_fnid, l_glb, l_total


def total_loss(terms: dict, weights: LossWeights, step: int = 0) -> LossReport:
    """Build a LossReport from the partial terms.

    ``terms`` may give either the raw terms (l_r_fnid, l_adv_fnid, l_id,
    l_rec, l_attr) or the already combined l_fnid / l_glb; l_adv_gan and
    l_nfa are always required.
    """
    vals = {k: float(v) for k, v in terms.items()}
    raw = ("l_r_fnid", "l_adv_fnid", "l_id", "l_rec", "l_attr")
    get = vals.get
    if all(k in vals for k in raw):
        l_fnid, l_glb, l_total = compose(*(vals[k] for k in raw), vals["l_adv_gan"], vals["l_nfa"], weights)
    else:
        l_fnid, l_glb = vals["l_fnid"], vals["l_glb"]
        l_total = (vals["l_adv_gan"] + weights.beta_glb * l_glb + weights.beta_fnid * l_fnid
                   + weights.beta_nfa * vals["l_nfa"])
    for v in [*vals.values(), l_total, l_fnid, l_glb]:
        if v != v or v in (float("inf"), float("-inf")):
            raise ValueError("loss terms must be finite")
    return LossReport(
        l_r_fnid=get("l_r_fnid", 0.0), l_adv_fnid=get("l_adv_fnid", 0.0),
        l_ah_fnid=get("l_ah_fnid", 1.0 - get("l_adv_fnid", 0.0)),
        l_fnid=l_fnid, l_nfa=vals["l_nfa"], l_id=get("l_id", 0.0), l_rec=get("l_rec", 0.0),
        l_attr=get("l_attr", 0.0), l_glb=l_glb, l_adv_gan=vals["l_adv_gan"], l_total=l_total,
        step=step, l_disc=get("l_disc", 0.0),
    )
