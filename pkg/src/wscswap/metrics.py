"""Evaluation suite: ID retrieval, ID-CSim, ID-Consis, pose/expression error, PSNR."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F

from .backends import OracleIDEncoder, PoseExpParams
from .errors import ConfigError, ShapeError
from .synthdata import ImageBatch


def _unit(v: torch.Tensor) -> torch.Tensor:
    return F.normalize(v.double(), dim=-1)


@dataclass
class SwapGrid:
    """``id_vectors[i, k]`` embeds the swap of source i onto target ``target_index(i, k)``."""

    id_vectors: torch.Tensor
    source_ids: torch.Tensor
    target_pose: PoseExpParams | None = None
    swap_pose: PoseExpParams | None = None

    def __post_init__(self):
        n = self.source_ids.shape[0]
        if n < 3:
            raise ConfigError(f"a swap grid needs at least 3 sources, got {n}")
        if self.id_vectors.dim() != 3 or tuple(self.id_vectors.shape[:2]) != (n, n - 1):
            raise ShapeError(f"id_vectors must be {n} x {n - 1} x D, got {tuple(self.id_vectors.shape)}")
        if self.id_vectors.shape[2] != self.source_ids.shape[1]:
            raise ShapeError("swap and source embeddings differ in dimension")
        if (self.target_pose is None) != (self.swap_pose is None):
            raise ShapeError("target and swap pose parameters must be given together")
        if self.target_pose is not None and len(self.target_pose) != len(self.swap_pose):
            raise ShapeError("target and swap pose batches differ in length")

    @property
    def num_sources(self):
        return self.source_ids.shape[0]

    @staticmethod
    def target_index(i: int, k: int) -> int:
        return k if k < i else k + 1

    @classmethod
    def from_full(cls, full: torch.Tensor, source_ids: torch.Tensor, **kw) -> "SwapGrid":
        """Drop the diagonal of an N x N x D tensor."""
        n = full.shape[0]
        keep = ~torch.eye(n, dtype=torch.bool)
        return cls(full[keep].reshape(n, n - 1, -1), source_ids, **kw)


@dataclass
class MetricReport:
    id_retrieval: float
    id_csim: float
    id_consis: float
    pose_err: float | None = None
    exp_err: float | None = None
    psnr: float | None = None
    num_sources: int | None = None

    def __post_init__(self):
        if not 0 <= self.id_retrieval <= 1:
            raise ValueError("id_retrieval outside [0, 1]")
        for name in ("id_csim", "id_consis"):
            if not -1 - 1e-9 <= getattr(self, name) <= 1 + 1e-9:
                raise ValueError(f"{name} outside [-1, 1]")
        if any(v is not None and v < 0 for v in (self.pose_err, self.exp_err)):
            raise ValueError("errors must be nonnegative")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        missing = {"id_retrieval", "id_csim", "id_consis"} - set(d)
        if missing:
            raise ConfigError(f"metric report lacks {sorted(missing)}")
        return cls(**{k: v for k, v in d.items() if k in names})

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


HIGHER_IS_BETTER = {"id_retrieval": True, "id_csim": True, "id_consis": True, "pose_err": False,
                    "exp_err": False, "psnr": True}


def id_csim(grid: SwapGrid) -> float:
    src = _unit(grid.source_ids)
    swp = _unit(grid.id_vectors)
    return float((swp * src[:, None, :]).sum(-1).mean())


def id_consis(grid: SwapGrid) -> float:
    n = grid.num_sources
    if n < 3:
        raise ConfigError("ID-Consis needs at least 3 sources")
    swp = _unit(grid.id_vectors)
    gram = swp @ swp.transpose(1, 2)
    off = gram.sum((1, 2)) - gram.diagonal(dim1=1, dim2=2).sum(-1)
    return float(off.sum() / 2 / (n * (n - 1) * (n - 2) / 2))


def id_retrieval(grid: SwapGrid) -> float:
    n = grid.num_sources
    sims = _unit(grid.id_vectors) @ _unit(grid.source_ids).T
    # argmax returns the first maximum, so ties go to the lowest source index
    nearest = sims.argmax(-1)
    truth = torch.arange(n)[:, None].expand(n, n - 1)
    return float((nearest == truth).double().mean())


def pose_exp_error(targets: PoseExpParams, swaps: PoseExpParams):
    if len(targets) != len(swaps):
        raise ShapeError("target and swap batches differ in length")
    if targets.pose.shape != swaps.pose.shape or targets.expression.shape != swaps.expression.shape:
        raise ShapeError("pose/expression dimensions differ")
    pose = torch.linalg.vector_norm(targets.pose.double() - swaps.pose.double(), dim=1).mean()
    exp = torch.linalg.vector_norm(targets.expression.double() - swaps.expression.double(), dim=1).mean()
    return float(pose), float(exp)


def relative_performance(baseline: MetricReport, method: MetricReport) -> dict:
    """Signed fractional change per metric, positive meaning better; None for a zero baseline."""
    out = {}
    for name, higher in HIGHER_IS_BETTER.items():
        b, m = getattr(baseline, name), getattr(method, name)
        if b is None or m is None or b == 0:
            out[name] = None
            continue
        out[name] = (m - b) / abs(b) if higher else (b - m) / abs(b)
    return out


def psnr(reference: torch.Tensor, output: torch.Tensor) -> float:
    """Mean per-image PSNR for pixels in [-1, 1]."""
    if reference.shape != output.shape:
        raise ShapeError("images differ in shape")
    mse = ((reference.double() - output.double()) ** 2).flatten(1).mean(1)
    return float((10 * torch.log10(4.0 / mse.clamp_min(1e-20))).mean())


def metrics_from_grid(grid: SwapGrid, self_psnr: float | None = None) -> MetricReport:
    pose_err = exp_err = None
    if grid.target_pose is not None:
        pose_err, exp_err = pose_exp_error(grid.target_pose, grid.swap_pose)
    return MetricReport(
        id_retrieval=id_retrieval(grid), id_csim=id_csim(grid), id_consis=id_consis(grid),
        pose_err=pose_err, exp_err=exp_err, psnr=self_psnr, num_sources=grid.num_sources,
    )


@torch.no_grad()
def build_grid(generator, source_encoder, sources: ImageBatch, id_backend, pose_backend=None):
    """Swap every ordered pair; returns (grid, self-swap outputs).

    ``source_encoder`` produces the identity vector the generator was trained to
    consume; ``id_backend`` only measures the results.
    """
    n = len(sources)
    if n < 3:
        raise ConfigError(f"evaluation needs at least 3 sources, got {n}")
    generator.eval()
    try:
        x = sources.pixels
        z_cond = source_encoder(x)
        z_id_src = id_backend(x)
        enc = generator.encode(x)
        rows, selfs, swaps = [], [], []
        for i in range(n):
            z = z_cond[i:i + 1].expand(n, -1)
            y = generator.fuse(enc["z_fnid"], enc["fnid_pyr"], enc["nfa_pyr"], z.to(x.dtype), enc["shallow"])
            rows.append(id_backend(y))
            selfs.append(y[i])
            swaps.append(y)
    finally:
        generator.train()
    keep = ~torch.eye(n, dtype=torch.bool)
    full = torch.stack(rows)
    kw = {}
    if pose_backend is not None:
        ys = torch.stack(swaps)[keep]
        targets = x[None].expand(n, -1, -1, -1, -1)[keep]
        tgt_factors = None
        if sources.factors is not None:
            tgt_factors = [sources.factors[j] for i in range(n) for j in range(n) if j != i]
        kw["target_pose"] = pose_backend(ImageBatch(targets, tgt_factors))
        kw["swap_pose"] = pose_backend(ys)
    grid = SwapGrid.from_full(full, z_id_src, **kw)
    return grid, torch.stack(selfs)


def evaluate(generator, source_encoder, sources: ImageBatch | list, id_backend=None,
             pose_backend=None) -> MetricReport:
    """Full N x (N - 1) swap protocol on ``sources``; ``id_backend`` defaults to a
    separately seeded oracle so it differs from the one used in training."""
    if isinstance(sources, list):
        sources = ImageBatch.stack(sources)
    if id_backend is None:
        id_backend = OracleIDEncoder(sources.resolution, dim=generator.cfg.id_dim, seed=1)
    grid, selfs = build_grid(generator, source_encoder, sources, id_backend, pose_backend)
    return metrics_from_grid(grid, psnr(sources.pixels, selfs))


def summarize(reports: list) -> MetricReport:
    """Per-metric median over repeated runs."""
    if not reports:
        raise ValueError("no reports to summarize")

    def med(name):
        vals = sorted(getattr(r, name) for r in reports if getattr(r, name) is not None)
        if not vals:
            return None
        mid = len(vals) // 2
        return vals[mid] if len(vals) % 2 else (vals[mid - 1] + vals[mid]) / 2

    fields = [f.name for f in dataclasses.fields(MetricReport) if f.name != "num_sources"]
    out = {f: med(f) for f in fields}
    out["num_sources"] = reports[0].num_sources
    if out["psnr"] is not None and math.isnan(out["psnr"]):
        out["psnr"] = None
    return MetricReport(**out)
