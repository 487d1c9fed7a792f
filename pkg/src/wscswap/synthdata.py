"""Procedural face-like images with independently controllable factors.

Identity drives the face outline, skin colour and a skin texture built from
window-periodic sinusoids; pose translates and rotates the face; expression
deforms eyes and mouth; two seeds drive background and hair, which live
strictly outside the face ellipse.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, ShapeError

POSE_LIMIT = np.pi / 4
# face-centre translation at full yaw/pitch, as a fraction of the image width
POSE_SHIFT = 0.03
# texture frequencies are integer cycles over a window of width/4 pixels
TEXTURE_KMAX = 3
TEXTURE_STD = 0.15
_ID_SALT = 0x1D
_EXP_SALT = 0xE7
EXP_CONTROLS = 4


def texture_bins(kmax=TEXTURE_KMAX):
    """Half-plane integer frequency pairs (kx, ky), DC excluded."""
    bins = []
    for ky in range(0, kmax + 1):
        for kx in range(-kmax, kmax + 1):
            if ky == 0 and kx <= 0:
                continue
            bins.append((kx, ky))
    return np.array(bins, dtype=np.int64)


@dataclass(frozen=True)
class IdentityParams:
    axes: tuple
    eye_dx: float
    skin: np.ndarray
    coef: np.ndarray  # complex, (3, n_bins)


@lru_cache(maxsize=4096)
def identity_params(identity_id: int) -> IdentityParams:
    rng = np.random.default_rng([_ID_SALT, int(identity_id)])
    axes = (float(rng.uniform(0.34, 0.40)), float(rng.uniform(0.40, 0.45)))
    eye_dx = float(rng.uniform(0.09, 0.13))
    skin = rng.uniform(-0.4, 0.4, size=3)
    nb = len(texture_bins())
    scale = TEXTURE_STD / np.sqrt(nb)
    coef = (rng.normal(size=(3, nb)) + 1j * rng.normal(size=(3, nb))) * scale
    return IdentityParams(axes, eye_dx, skin, coef)


@lru_cache(maxsize=16)
def _expression_mixing(exp_dim: int):
    """(mix, unmix): ``mix`` maps the visible mouth/eye controls to coefficients.

    Rows of ``mix`` have unit L1 norm, so controls in [-1, 1] give coefficients in
    [-1, 1]. Sampled expressions lie in its column space, which keeps every
    coefficient recoverable from the rendered face.
    """
    k = min(EXP_CONTROLS, exp_dim)
    rng = np.random.default_rng([_EXP_SALT, exp_dim])
    mix = rng.normal(size=(exp_dim, k))
    mix /= np.abs(mix).sum(axis=1, keepdims=True)
    return mix, np.linalg.pinv(mix)


def expression_controls(expression: np.ndarray) -> np.ndarray:
    """Mouth curvature, mouth opening, mouth width, eye opening, each in [-1, 1]."""
    _, unmix = _expression_mixing(len(expression))
    out = np.zeros(EXP_CONTROLS)
    out[:unmix.shape[0]] = np.clip(unmix @ expression, -1.0, 1.0)
    return out


@dataclass
class FactorVector:
    identity_id: int
    pose: np.ndarray
    expression: np.ndarray
    background_seed: int
    hair_seed: int

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        self.expression = np.asarray(self.expression, dtype=np.float64)
        if np.any(np.abs(self.pose) > POSE_LIMIT + 1e-12):
            raise ConfigError(f"pose components must lie in [-pi/4, pi/4], got {self.pose}")
        if np.any(np.abs(self.expression) > 1 + 1e-12):
            raise ConfigError("expression components must lie in [-1, 1]")
        if self.identity_id < 0:
            raise ConfigError("identity_id must be nonnegative")

    def replace(self, **changes) -> "FactorVector":
        d = dict(identity_id=self.identity_id, pose=self.pose.copy(),
                 expression=self.expression.copy(),
                 background_seed=self.background_seed, hair_seed=self.hair_seed)
        d.update(changes)
        return FactorVector(**d)

    def to_dict(self):
        return {
            "identity_id": int(self.identity_id),
            "pose": [float(v) for v in self.pose],
            "expression": [float(v) for v in self.expression],
            "background_seed": int(self.background_seed),
            "hair_seed": int(self.hair_seed),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["identity_id"], d["pose"], d["expression"],
                   d["background_seed"], d["hair_seed"])


@dataclass
class ImageBatch:
    pixels: torch.Tensor
    factors: list | None = None
    face_masks: torch.Tensor | None = None

    def __post_init__(self):
        if self.pixels.dim() != 4 or self.pixels.shape[1] != 3:
            raise ShapeError(f"pixels must be B x 3 x H x W, got {tuple(self.pixels.shape)}")
        if self.pixels.shape[2] != self.pixels.shape[3]:
            raise ShapeError("images must be square")
        if self.factors is not None and len(self.factors) != len(self):
            raise ShapeError("one FactorVector per image required")
        if self.face_masks is not None and (
            self.face_masks.shape[0] != len(self) or self.face_masks.shape[1] != 1
            or self.face_masks.shape[2:] != self.pixels.shape[2:]
        ):
            raise ShapeError("face_masks must be B x 1 x H x W matching pixels")

    def __len__(self):
        return self.pixels.shape[0]

    @property
    def resolution(self):
        return self.pixels.shape[-1]

    def select(self, index) -> "ImageBatch":
        index = list(index)
        return ImageBatch(
            self.pixels[index],
            None if self.factors is None else [self.factors[i] for i in index],
            None if self.face_masks is None else self.face_masks[index],
        )

    def to(self, dtype) -> "ImageBatch":
        masks = None if self.face_masks is None else self.face_masks.to(dtype)
        return ImageBatch(self.pixels.to(dtype), self.factors, masks)

    @staticmethod
    def stack(batches) -> "ImageBatch":
        batches = list(batches)
        pixels = torch.cat([b.pixels for b in batches])
        factors = None
        if all(b.factors is not None for b in batches):
            factors = [f for b in batches for f in b.factors]
        masks = None
        if all(b.face_masks is not None for b in batches):
            masks = torch.cat([b.face_masks for b in batches])
        return ImageBatch(pixels, factors, masks)


@dataclass
class SwapPair:
    source: ImageBatch
    target: ImageBatch
    is_self_swap: torch.Tensor

    def __len__(self):
        return len(self.target)


@dataclass
class DatasetConfig:
    num_identities: int = 200
    resolution: int = 64
    pose_dim: int = 3
    exp_dim: int = 64
    p_self: float = 0.5
    seed: int = 0
    depth: int = 5

    def __post_init__(self):
        check_resolution(self.resolution, self.depth)
        if self.num_identities < 3:
            raise ConfigError("num_identities must be at least 3")
        if not 0.0 <= self.p_self <= 1.0:
            raise ConfigError(f"p_self must lie in [0, 1], got {self.p_self}")
        if self.pose_dim < 1 or self.exp_dim < 1:
            raise ConfigError("pose_dim and exp_dim must be positive")


def check_resolution(resolution: int, depth: int) -> None:
    if resolution % (2 ** depth) != 0:
        raise ConfigError(f"resolution {resolution} is not divisible by 2^{depth}")
    if resolution % 4 != 0 or resolution // 4 < 2 * TEXTURE_KMAX + 1:
        raise ConfigError(f"resolution {resolution} too small for the identity texture window")


def _grid(resolution):
    c = (np.arange(resolution) + 0.5) / resolution - 0.5
    return np.meshgrid(c, c, indexing="xy")  # x varies along columns


@lru_cache(maxsize=8)
def _texture_basis(resolution):
    x, y = _grid(resolution)
    bins = texture_bins()
    n = resolution // 4
    theta = 2 * np.pi * (bins[:, 0, None, None] * x + bins[:, 1, None, None] * y) * resolution / n
    return np.exp(1j * theta)


def _face_layer(factor: FactorVector, resolution: int):
    """Face colour image and its mask; depends on identity, pose, expression only."""
    x, y = _grid(resolution)
    ident = identity_params(factor.identity_id)
    pose = np.zeros(3)
    pose[: min(3, len(factor.pose))] = factor.pose[:3]
    yaw, pitch, roll = pose
    cx = POSE_SHIFT * yaw / POSE_LIMIT
    cy = POSE_SHIFT * pitch / POSE_LIMIT
    dx, dy = x - cx, y - cy
    cr, sr = np.cos(roll), np.sin(roll)
    u = cr * dx + sr * dy
    v = -sr * dx + cr * dy
    a, b = ident.axes
    mask = (u / a) ** 2 + (v / b) ** 2 <= 1.0

    # texture in face-translated pixel coordinates: Re(coef * exp(i theta)),
    # with the translation folded into a per-bin phase
    bins = texture_bins()
    n = resolution // 4
    phase = np.exp(-2j * np.pi * (bins[:, 0] * cx + bins[:, 1] * cy) * resolution / n)
    tex = np.tensordot(ident.coef * phase, _texture_basis(resolution), axes=1).real
    img = ident.skin[:, None, None] + tex

    curv, mouth_open, mouth_w, eye_open = expression_controls(factor.expression)
    shift = POSE_SHIFT * yaw / POSE_LIMIT
    ry = 0.04 * (0.625 + 0.375 * eye_open)
    eyes = np.zeros_like(mask)
    for side in (-1.0, 1.0):
        ex = side * ident.eye_dx + shift
        eyes |= ((u - ex) / 0.04) ** 2 + ((v + 0.27) / ry) ** 2 <= 1.0
    half_w = 0.08 + 0.02 * mouth_w
    mu = u - shift
    centre = 0.30 + 0.03 * curv * (mu / 0.1) ** 2 - 0.015 * curv
    thick = 0.0165 + 0.0085 * mouth_open
    mouth = (np.abs(mu) <= half_w) & (np.abs(v - centre) <= thick)
    img[:, eyes] = np.array([-0.85, -0.85, -0.7])[:, None]
    img[:, mouth] = np.array([0.7, -0.5, -0.4])[:, None]
    return img, mask, eyes | mouth


def _outer_layer(factor: FactorVector, resolution: int):
    """Background gradient plus hair band; depends on the two seeds only."""
    x, y = _grid(resolution)
    rb = np.random.default_rng([int(factor.background_seed), 0xB6])
    c0, c1 = rb.uniform(-0.8, 0.8, size=(2, 3))
    ang = rb.uniform(0, 2 * np.pi)
    s = ((x * np.cos(ang) + y * np.sin(ang)) / np.sqrt(0.5) + 1) / 2
    f1, f2 = rb.uniform(3, 10, size=(2, 2)) * rb.choice([-1, 1], size=(2, 2))
    p1, p2 = rb.uniform(0, 2 * np.pi, size=2)
    tone = rb.uniform(-1, 1, size=3)
    wave = (0.12 * np.sin(2 * np.pi * (f1[0] * x + f1[1] * y) + p1)
            + 0.08 * np.sin(2 * np.pi * (f2[0] * x + f2[1] * y) + p2))
    img = c0[:, None, None] + (c1 - c0)[:, None, None] * s + tone[:, None, None] * wave

    rh = np.random.default_rng([int(factor.hair_seed), 0x4A])
    h0 = rh.uniform(0.15, 0.3)
    amp = rh.uniform(0.0, 0.04)
    fr = rh.integers(1, 4)
    ph = rh.uniform(0, 2 * np.pi)
    line = -0.5 + h0 + amp * np.sin(2 * np.pi * fr * (x + 0.5) + ph)
    band = y < line
    colour = rh.uniform(-0.9, 0.3, size=3)
    fx = rh.uniform(8, 14)
    slope = rh.uniform(-3, 3)
    stripes = 0.15 * np.sin(2 * np.pi * (fx * x + slope * y) + rh.uniform(0, 2 * np.pi))
    hair = colour[:, None, None] + stripes
    img = np.where(band[None], hair, img)
    return img


def _render_arrays(factor: FactorVector, resolution: int):
    face, mask, _ = _face_layer(factor, resolution)
    outer = _outer_layer(factor, resolution)
    img = np.clip(np.where(mask[None], face, outer), -1.0, 1.0)
    return img, mask


def render_face(factor: FactorVector, resolution: int, depth: int = 5) -> ImageBatch:
    check_resolution(resolution, depth)
    img, mask = _render_arrays(factor, resolution)
    return ImageBatch(
        torch.from_numpy(img[None].astype(np.float32)),
        [factor],
        torch.from_numpy(mask[None, None].astype(np.float32)),
    )


def render_batch(factors, resolution: int, depth: int = 5) -> ImageBatch:
    check_resolution(resolution, depth)
    factors = list(factors)
    imgs = np.empty((len(factors), 3, resolution, resolution), dtype=np.float32)
    masks = np.empty((len(factors), 1, resolution, resolution), dtype=np.float32)
    for i, f in enumerate(factors):
        img, mask = _render_arrays(f, resolution)
        imgs[i] = img
        masks[i, 0] = mask
    return ImageBatch(torch.from_numpy(imgs), factors, torch.from_numpy(masks))


def feature_mask(factor: FactorVector, resolution: int) -> np.ndarray:
    """Pixels covered by eyes or mouth."""
    return _face_layer(factor, resolution)[2]


def sample_expression(rng: np.random.Generator, exp_dim: int) -> np.ndarray:
    mix, _ = _expression_mixing(exp_dim)
    return mix @ rng.uniform(-1.0, 1.0, size=mix.shape[1])


def sample_factor(rng: np.random.Generator, config: DatasetConfig, identity_id=None) -> FactorVector:
    if identity_id is None:
        identity_id = int(rng.integers(config.num_identities))
    return FactorVector(
        identity_id=identity_id,
        pose=rng.uniform(-POSE_LIMIT, POSE_LIMIT, size=config.pose_dim),
        expression=sample_expression(rng, config.exp_dim),
        background_seed=int(rng.integers(2**31)),
        hair_seed=int(rng.integers(2**31)),
    )


def sample_training_batch(config: DatasetConfig, batch_size: int, p_self: float | None = None,
                          rng: np.random.Generator | None = None) -> SwapPair:
    p_self = config.p_self if p_self is None else p_self
    if not 0.0 <= p_self <= 1.0:
        raise ConfigError(f"p_self must lie in [0, 1], got {p_self}")
    if batch_size < 1:
        raise ConfigError("batch_size must be positive")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    targets, sources, self_swap = [], [], []
    for _ in range(batch_size):
        t = sample_factor(rng, config)
        is_self = bool(rng.random() < p_self)
        targets.append(t)
        sources.append(t if is_self else sample_factor(rng, config))
        self_swap.append(is_self)
    return SwapPair(
        render_batch(sources, config.resolution, config.depth),
        render_batch(targets, config.resolution, config.depth),
        torch.tensor(self_swap, dtype=torch.bool),
    )


def make_eval_split(num_sources: int, resolution: int, config: DatasetConfig | None = None,
                    seed: int = 12345) -> list:
    if num_sources < 3:
        raise ConfigError(f"evaluation needs at least 3 sources, got {num_sources}")
    config = config or DatasetConfig(resolution=resolution, num_identities=max(200, num_sources))
    if num_sources > config.num_identities:
        raise ConfigError("num_sources exceeds num_identities")
    rng = np.random.default_rng([seed, 0xE5])
    ids = rng.choice(config.num_identities, size=num_sources, replace=False)
    return [render_face(sample_factor(rng, config, int(i)), resolution, config.depth) for i in ids]


def export_png(batch: ImageBatch, out_dir, prefix="img") -> Path:
    """Write each image and mask as PNG plus a metadata.jsonl sidecar."""
    from .images import save_png

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = out_dir / "metadata.jsonl"
    with meta.open("w") as fh:
        for i in range(len(batch)):
            name = f"{prefix}_{i:05d}.png"
            save_png(batch.pixels[i], out_dir / name)
            rec = {"image": name}
            if batch.face_masks is not None:
                mname = f"{prefix}_{i:05d}_mask.png"
                save_png(batch.face_masks[i] * 2 - 1, out_dir / mname)
                rec["mask"] = mname
            if batch.factors is not None:
                rec["factors"] = batch.factors[i].to_dict()
            fh.write(json.dumps(rec) + "\n")
    return meta
