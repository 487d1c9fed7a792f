"""Stand-ins for the pre-trained models: ID encoder, pose/expression predictor, face segmenter.

The oracle ID encoder reads the central skin window of a face, takes the
amplitude spectrum at the identity texture frequencies (translation
invariant) plus the mean colour, whitens it against reference identities and
projects it to a unit vector. It is differentiable, so it can drive the ID loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError
from .synthdata import DatasetConfig, ImageBatch, identity_params, sample_training_batch, texture_bins


class BackendError(ShapeError):
    pass


@dataclass
class PoseExpParams:
    pose: torch.Tensor
    expression: torch.Tensor

    def __post_init__(self):
        if self.pose.shape[0] != self.expression.shape[0]:
            raise ShapeError("pose and expression batch sizes differ")

    def __len__(self):
        return self.pose.shape[0]

    def as_vector(self) -> torch.Tensor:
        return torch.cat([self.pose, self.expression], dim=1)


def _pixels(images):
    return images.pixels if isinstance(images, ImageBatch) else images


class OracleIDEncoder(nn.Module):
    def __init__(self, resolution: int = 64, dim: int = 512, seed: int = 0,
                 reference_ids: int = 512, dc_weight: float = 4.0):
        super().__init__()
        self.resolution = resolution
        self.dim = dim
        self.seed = seed
        n = resolution // 4
        self.window = n
        self.start = (resolution - n) // 2
        bins = texture_bins()
        self.register_buffer("ky", torch.as_tensor(bins[:, 1] % n))
        self.register_buffer("kx", torch.as_tensor(bins[:, 0] % n))

        ref = np.stack([self._analytic_features(i) for i in range(reference_ids)])
        mean, std = ref.mean(0), ref.std(0)
        weight = np.ones_like(mean)
        weight[:3] = dc_weight
        self.register_buffer("mean", torch.as_tensor(mean))
        self.register_buffer("scale", torch.as_tensor(weight / std))
        g = np.random.default_rng([seed, 0x1DE])
        proj = g.normal(size=(dim, len(mean))) / np.sqrt(dim)
        self.register_buffer("proj", torch.as_tensor(proj))

    @staticmethod
    def _analytic_features(identity_id):
        p = identity_params(identity_id)
        return np.concatenate([p.skin, (np.abs(p.coef) / 2).ravel()])

    def features(self, pixels: torch.Tensor) -> torch.Tensor:
        if pixels.shape[-1] != self.resolution or pixels.shape[-2] != self.resolution:
            raise ShapeError(f"ID encoder expects {self.resolution}px images, got {tuple(pixels.shape[-2:])}")
        s, n = self.start, self.window
        win = pixels[:, :, s:s + n, s:s + n]
        spec = torch.fft.fft2(win) / (n * n)
        dc = spec[:, :, 0, 0].real
        sel = spec[:, :, self.ky, self.kx]
        amp = torch.sqrt(sel.real ** 2 + sel.imag ** 2 + 1e-12)
        return torch.cat([dc, amp.flatten(1)], dim=1)

    def forward(self, images) -> torch.Tensor:
        pixels = _pixels(images)
        f = self.features(pixels)
        f = (f - self.mean.to(f.dtype)) * self.scale.to(f.dtype)
        z = f @ self.proj.to(f.dtype).T
        return F.normalize(z, dim=1)


class _TinyCNN(nn.Module):
    def __init__(self, out_dim, width=32):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, width, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(width, 2 * width, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * width, 4 * width, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(4 * width, 4 * width, 3, 1, 1), nn.LeakyReLU(0.2),
        )
        self.head = nn.Linear(4 * width * 4 * 4, out_dim)

    def forward(self, x):
        h = self.body(x)
        h = F.adaptive_avg_pool2d(h, 4)
        return self.head(h.flatten(1))


class LearnedIDEncoder(nn.Module):
    """Tiny CNN trained by cosine-margin identity classification on renders."""

    def __init__(self, resolution: int = 64, dim: int = 512, width: int = 32):
        super().__init__()
        self.resolution = resolution
        self.dim = dim
        self.net = _TinyCNN(dim, width)

    def forward(self, images) -> torch.Tensor:
        pixels = _pixels(images)
        if pixels.shape[-1] != self.resolution:
            raise ShapeError(f"ID encoder expects {self.resolution}px images")
        return F.normalize(self.net(pixels), dim=1)


def train_learned_id_encoder(config: DatasetConfig, steps: int = 300, batch_size: int = 32,
                             seed: int = 0, dim: int = 512, lr: float = 1e-3) -> LearnedIDEncoder:
    torch.manual_seed(seed)
    enc = LearnedIDEncoder(config.resolution, dim)
    classes = nn.Parameter(torch.randn(config.num_identities, dim) * 0.01)
    opt = torch.optim.Adam(list(enc.parameters()) + [classes], lr=lr)
    rng = np.random.default_rng([seed, 0x1D5])
    for _ in range(steps):
        batch = sample_training_batch(config, batch_size, p_self=1.0, rng=rng).target
        labels = torch.tensor([f.identity_id for f in batch.factors])
        logits = 16.0 * (enc(batch) @ F.normalize(classes, dim=1).T)
        margin = F.one_hot(labels, config.num_identities) * 16.0 * 0.2
        loss = F.cross_entropy(logits - margin, labels)
        opt.zero_grad()
        loss.backward()
        opt.step()
    enc.eval().requires_grad_(False)
    return enc


class OraclePoseExp:
    """Returns the ground-truth factors carried by rendered images."""

    def __call__(self, images: ImageBatch) -> PoseExpParams:
        if not isinstance(images, ImageBatch) or images.factors is None:
            raise BackendError("oracle pose/expression predictor needs factor metadata")
        pose = torch.tensor(np.stack([f.pose for f in images.factors]))
        exp = torch.tensor(np.stack([f.expression for f in images.factors]))
        return PoseExpParams(pose, exp)


class LearnedPoseExp(nn.Module):
    def __init__(self, resolution: int = 64, pose_dim: int = 3, exp_dim: int = 64, width: int = 32):
        super().__init__()
        self.resolution = resolution
        self.pose_dim = pose_dim
        self.net = _TinyCNN(pose_dim + exp_dim, width)

    def forward(self, images) -> PoseExpParams:
        pixels = _pixels(images)
        if pixels.shape[-1] != self.resolution:
            raise ShapeError(f"pose/expression predictor expects {self.resolution}px images")
        out = self.net(pixels.float()).double()
        return PoseExpParams(out[:, : self.pose_dim], out[:, self.pose_dim:])

    def __call__(self, images) -> PoseExpParams:
        return super().__call__(images)


def train_learned_pose_exp(config: DatasetConfig, steps: int = 300, batch_size: int = 32,
                           seed: int = 0, lr: float = 1e-3) -> LearnedPoseExp:
    torch.manual_seed(seed)
    model = LearnedPoseExp(config.resolution, config.pose_dim, config.exp_dim)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    oracle = OraclePoseExp()
    rng = np.random.default_rng([seed, 0x905])
    for _ in range(steps):
        batch = sample_training_batch(config, batch_size, p_self=1.0, rng=rng).target
        target = oracle(batch).as_vector().float()
        pred = model.net(batch.pixels)
        loss = F.mse_loss(pred, target)
        opt.zero_grad()
        loss.backward()
        opt.step()
    model.eval().requires_grad_(False)
    return model


class OracleSegmenter:
    """The renderer's own elliptical face mask."""

    def __call__(self, images: ImageBatch) -> torch.Tensor:
        if not isinstance(images, ImageBatch):
            raise BackendError("oracle segmenter needs an ImageBatch")
        if images.face_masks is not None:
            return images.face_masks.to(images.pixels.dtype)
        if images.factors is None:
            raise BackendError("oracle segmenter needs masks or factor metadata")
        from .synthdata import render_batch

        return render_batch(images.factors, images.resolution).face_masks.to(images.pixels.dtype)


ID_BACKENDS = ("oracle", "learned")
POSE_BACKENDS = ("oracle", "learned")
SEG_BACKENDS = ("oracle",)


def make_id_backend(name: str, config: DatasetConfig, seed: int = 0, dim: int = 512, steps: int = 300):
    if name == "oracle":
        return OracleIDEncoder(config.resolution, dim=dim, seed=seed)
    if name == "learned":
        return train_learned_id_encoder(config, steps=steps, seed=seed, dim=dim)
    raise ConfigError(f"unknown id backend {name!r}; choose from {ID_BACKENDS}")


def make_pose_backend(name: str, config: DatasetConfig, seed: int = 0, steps: int = 300):
    if name == "oracle":
        return OraclePoseExp()
    if name == "learned":
        return train_learned_pose_exp(config, steps=steps, seed=seed)
    raise ConfigError(f"unknown pose backend {name!r}; choose from {POSE_BACKENDS}")


def make_segmenter(name: str):
    if name == "oracle":
        return OracleSegmenter()
    raise ConfigError(f"unknown segmentation backend {name!r}; choose from {SEG_BACKENDS}")
