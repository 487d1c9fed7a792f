"""Trainable components: FNID/NFA encoders and decoders, masked-image encoder,
RegHead, AdvHead, the AAD fusion decoder and the multi-scale discriminator."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ModelConfig:
    resolution: int = 64
    fnid_widths: tuple = (32, 64, 128, 256, 256)
    nfa_down_widths: tuple = (32, 64, 128)
    nfa_channels: int = 128
    nfa_resblocks: int = 2
    fnid_dec_widths: tuple = (128, 64, 32, 16)
    nfa_dec_widths: tuple = (32, 16)
    n_s: int | None = None
    use_skip_connections: bool = False
    use_nfa: bool = True
    id_dim: int = 512
    reghead_dim: int = 67
    adv_hidden: int = 1024
    disc_widths: tuple = (32, 64, 128)
    disc_scales: int = 3

    def __post_init__(self):
        for name in ("fnid_widths", "nfa_down_widths", "fnid_dec_widths", "nfa_dec_widths", "disc_widths"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.resolution % (2 ** self.fnid_depth) != 0:
            raise ConfigError(f"resolution {self.resolution} not divisible by 2^{self.fnid_depth}")
        if not self.n_a < self.n_f:
            raise ConfigError(f"n_a ({self.n_a}) must be smaller than n_f ({self.n_f})")
        if self.n_f > self.fnid_depth:
            raise ConfigError("FNID decoder cannot be deeper than the encoder")
        if not self.nfa_down_depth < self.fnid_depth:
            raise ConfigError("NFA map must be spatially larger than the FNID code")
        if self.n_a > self.nfa_down_depth:
            raise ConfigError("NFA decoder cannot upsample beyond the input resolution")
        if self.n_s is not None and self.n_s < self.fusion_levels:
            raise ConfigError(f"n_s={self.n_s} must cover all {self.fusion_levels} fusion levels")
        if self.n_s is not None and self.n_s < self.n_f:
            raise ConfigError("n_s must be at least n_f")
        coarsest = self.resolution // 2 ** (self.disc_scales - 1 + len(self.disc_widths))
        if self.disc_scales < 1 or coarsest < 2:
            raise ConfigError("discriminator scales and depth leave no spatial extent at the coarsest scale")

    @property
    def fnid_depth(self):
        return len(self.fnid_widths)

    @property
    def nfa_down_depth(self):
        return len(self.nfa_down_widths)

    @property
    def n_f(self):
        return len(self.fnid_dec_widths)

    @property
    def n_a(self):
        return len(self.nfa_dec_widths)

    @property
    def code_size(self):
        return self.resolution // 2 ** self.fnid_depth

    @property
    def nfa_size(self):
        return self.resolution // 2 ** self.nfa_down_depth

    def fnid_sizes(self):
        """Spatial size of each FNID pyramid level, finest first."""
        return [self.code_size * 2 ** (self.n_f - i) for i in range(self.n_f)]

    def nfa_sizes(self):
        return [self.nfa_size * 2 ** (self.n_a - i) for i in range(self.n_a)]

    def skip_sizes(self):
        return [self.resolution // 2 ** (i + 1) for i in range(self.fnid_depth - 1)]

    @property
    def fusion_levels(self):
        finest = max(self.fnid_sizes() + (self.nfa_sizes() if self.use_nfa else []))
        levels, s = 1, self.code_size
        while s < finest:
            s *= 2
            levels += 1
        return levels

    @property
    def num_blocks(self):
        return self.n_s if self.n_s is not None else self.fusion_levels

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def desk(cls, **changes):
        return cls(**changes)

    @classmethod
    def paper(cls, **changes):
        base = dict(
            resolution=256,
            fnid_widths=(32, 64, 128, 256, 512, 1024, 1024),
            nfa_down_widths=(32, 64, 128, 256),
            nfa_channels=512,
            nfa_resblocks=3,
            fnid_dec_widths=(1024, 512, 256, 128, 64, 32),
            nfa_dec_widths=(256, 128, 64, 32),
            disc_widths=(64, 128, 256),
        )
        base.update(changes)
        return cls(**base)

    @classmethod
    def tiny(cls, **changes):
        base = dict(
            resolution=32,
            fnid_widths=(4, 6, 8, 8),
            nfa_down_widths=(4, 6),
            nfa_channels=6,
            nfa_resblocks=1,
            fnid_dec_widths=(6, 4, 4),
            nfa_dec_widths=(4,),
            id_dim=8,
            reghead_dim=5,
            adv_hidden=8,
            disc_widths=(4, 4, 4),
            disc_scales=2,
        )
        base.update(changes)
        return cls(**base)


PRESETS = {"desk": ModelConfig.desk, "paper": ModelConfig.paper, "tiny": ModelConfig.tiny}


def init_weights(module):
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.kaiming_normal_(module.weight, a=0.2, mode="fan_in", nonlinearity="leaky_relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def _down(c_in, c_out, norm=True):
    layers = [nn.Conv2d(c_in, c_out, 4, 2, 1)]
    if norm:
        layers.append(nn.InstanceNorm2d(c_out))
    layers.append(nn.LeakyReLU(0.2))
    return nn.Sequential(*layers)


def _check_images(x, resolution):
    if x.dim() != 4 or x.shape[-1] != resolution or x.shape[-2] != resolution:
        raise ShapeError(f"expected B x 3 x {resolution} x {resolution} images, got {tuple(x.shape)}")


class FNIDEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.resolution = cfg.resolution
        widths = (3,) + cfg.fnid_widths
        # the deepest stage has too few pixels for instance statistics
        self.stages = nn.ModuleList(
            _down(widths[i], widths[i + 1], norm=i < cfg.fnid_depth - 1) for i in range(cfg.fnid_depth)
        )

    def forward(self, x):
        _check_images(x, self.resolution)
        shallow = []
        for stage in self.stages:
            x = stage(x)
            shallow.append(x)
        return x, shallow[:-1]


class ResBlock(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(c_in, c_out, 3, 1, 1), nn.InstanceNorm2d(c_out), nn.LeakyReLU(0.2),
            nn.Conv2d(c_out, c_out, 3, 1, 1), nn.InstanceNorm2d(c_out),
        )
        self.shortcut = nn.Identity() if c_in == c_out else nn.Conv2d(c_in, c_out, 1)

    def forward(self, x):
        return F.leaky_relu(self.body(x) + self.shortcut(x), 0.2)


class NFAEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.resolution = cfg.resolution
        widths = (3,) + cfg.nfa_down_widths
        self.down = nn.Sequential(*[_down(widths[i], widths[i + 1]) for i in range(cfg.nfa_down_depth)])
        blocks = []
        c = widths[-1]
        for _ in range(cfg.nfa_resblocks):
            blocks.append(ResBlock(c, cfg.nfa_channels))
            c = cfg.nfa_channels
        self.res = nn.Sequential(*blocks)

    def forward(self, x):
        _check_images(x, self.resolution)
        return self.res(self.down(x))


class PyramidDecoder(nn.Module):
    """Stride-2 transposed convolutions; returns feature maps finest first."""

    def __init__(self, c_in, widths):
        super().__init__()
        chans = (c_in,) + tuple(widths)
        self.c_in = c_in
        self.stages = nn.ModuleList(
            nn.Sequential(nn.ConvTranspose2d(chans[i], chans[i + 1], 4, 2, 1), nn.ReLU())
            for i in range(len(widths))
        )

    def forward(self, z):
        if z.dim() != 4 or z.shape[1] != self.c_in:
            raise ShapeError(f"decoder expects {self.c_in} input channels, got {tuple(z.shape)}")
        maps = []
        for stage in self.stages:
            z = stage(z)
            maps.append(z)
        return maps[::-1]


class RegHead(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.fc = nn.Linear(cfg.fnid_widths[-1] * cfg.code_size ** 2, cfg.reghead_dim)

    def forward(self, code):
        return self.fc(code.flatten(1))


class AdvHead(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        flat = cfg.fnid_widths[-1] * cfg.code_size ** 2
        self.mlp = nn.Sequential(
            nn.Linear(flat, cfg.adv_hidden), nn.LeakyReLU(0.2),
            nn.Linear(cfg.adv_hidden, cfg.adv_hidden), nn.LeakyReLU(0.2),
            nn.Linear(cfg.adv_hidden, cfg.id_dim),
        )
        self.apply(init_weights)

    def forward(self, code):
        return F.normalize(self.mlp(code.flatten(1)), dim=1)


class AAD(nn.Module):
    """Per-pixel blend of attribute- and identity-conditioned denormalisation."""

    def __init__(self, c_h, c_attr, c_id):
        super().__init__()
        self.norm = nn.InstanceNorm2d(c_h)
        self.attr_gamma = nn.Conv2d(c_attr, c_h, 1)
        self.attr_beta = nn.Conv2d(c_attr, c_h, 1)
        self.id_gamma = nn.Linear(c_id, c_h)
        self.id_beta = nn.Linear(c_id, c_h)
        self.mask = nn.Conv2d(c_h, 1, 3, 1, 1)

    def forward(self, h, attr, z_id):
        h = self.norm(h)
        a = self.attr_gamma(attr) * h + self.attr_beta(attr)
        i = self.id_gamma(z_id)[:, :, None, None] * h + self.id_beta(z_id)[:, :, None, None]
        m = torch.sigmoid(self.mask(h))
        return (1 - m) * a + m * i


class AADResBlock(nn.Module):
    def __init__(self, c_in, c_out, c_attr, c_id):
        super().__init__()
        self.aad1 = AAD(c_in, c_attr, c_id)
        self.conv1 = nn.Conv2d(c_in, c_in, 3, 1, 1)
        self.aad2 = AAD(c_in, c_attr, c_id)
        self.conv2 = nn.Conv2d(c_in, c_out, 3, 1, 1)
        self.shortcut = None
        if c_in != c_out:
            self.aad3 = AAD(c_in, c_attr, c_id)
            self.shortcut = nn.Conv2d(c_in, c_out, 3, 1, 1)

    def forward(self, h, attr, z_id):
        x = self.conv1(F.relu(self.aad1(h, attr, z_id)))
        x = self.conv2(F.relu(self.aad2(x, attr, z_id)))
        if self.shortcut is not None:
            h = self.shortcut(F.relu(self.aad3(h, attr, z_id)))
        return x + h


class FusionDecoder(nn.Module):
    """AAD blocks from the code resolution upwards, one per pyramid size.

    Each block's attribute input is the concatenation of every feature map
    available at its size: the FNID code (first block only), the FNID
    pyramid level, the NFA pyramid level and, in the skip ablation, the
    matching FNID encoder activation.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        fnid = dict(zip(cfg.fnid_sizes(), cfg.fnid_dec_widths[::-1]))
        nfa = dict(zip(cfg.nfa_sizes(), cfg.nfa_dec_widths[::-1])) if cfg.use_nfa else {}
        skip = dict(zip(cfg.skip_sizes(), cfg.fnid_widths[:-1])) if cfg.use_skip_connections else {}

        sizes = [cfg.code_size * 2 ** i for i in range(cfg.fusion_levels)]
        sizes += [sizes[-1]] * (cfg.num_blocks - len(sizes))
        self.sizes = sizes

        def width(s):
            return fnid.get(s) or nfa.get(s) or cfg.fnid_dec_widths[-1]

        c_code = cfg.fnid_widths[-1]
        c_state = cfg.fnid_dec_widths[0]
        self.stem = nn.Conv2d(c_code, c_state, 1)
        blocks = []
        for i, s in enumerate(sizes):
            c_attr = fnid.get(s, 0) + nfa.get(s, 0) + skip.get(s, 0) + (c_code if i == 0 else 0)
            nxt = sizes[i + 1] if i + 1 < len(sizes) else s
            c_out = width(nxt) if nxt != s else width(s)
            blocks.append(AADResBlock(c_state, c_out, c_attr, cfg.id_dim))
            c_state = c_out
        self.blocks = nn.ModuleList(blocks)
        self.to_rgb = nn.Conv2d(c_state, 3, 3, 1, 1)

    def forward(self, code, fnid_pyr, nfa_pyr, z_id, skips=None):
        cfg = self.cfg
        if len(fnid_pyr) != cfg.n_f:
            raise ShapeError(f"expected {cfg.n_f} FNID maps, got {len(fnid_pyr)}")
        if cfg.use_nfa and (nfa_pyr is None or len(nfa_pyr) != cfg.n_a):
            raise ShapeError(f"expected {cfg.n_a} NFA maps")
        if z_id.dim() != 2 or z_id.shape[1] != cfg.id_dim:
            raise ShapeError(f"expected ID vectors of dim {cfg.id_dim}, got {tuple(z_id.shape)}")
        if code.shape[-1] != cfg.code_size:
            raise ShapeError("FNID code has the wrong spatial size")
        attrs = {}
        maps = list(fnid_pyr)
        if cfg.use_nfa:
            maps += list(nfa_pyr)
        if cfg.use_skip_connections:
            if skips is None or len(skips) != cfg.fnid_depth - 1:
                raise ShapeError("skip ablation needs every shallow encoder activation")
            maps += list(skips)
        for m in maps:
            attrs.setdefault(m.shape[-1], []).append(m)
        expected = set(cfg.fnid_sizes()) | (set(cfg.nfa_sizes()) if cfg.use_nfa else set())
        if not expected <= set(attrs):
            raise ShapeError("feature pyramid sizes do not match the model configuration")

        h = self.stem(code)
        for i, (s, block) in enumerate(zip(self.sizes, self.blocks)):
            parts = ([code] if i == 0 else []) + attrs.get(s, [])
            h = block(h, torch.cat(parts, dim=1), z_id)
            if i + 1 < len(self.sizes) and self.sizes[i + 1] != s:
                h = F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False)
        if h.shape[-1] != cfg.resolution:
            h = F.interpolate(h, size=cfg.resolution, mode="bilinear", align_corners=False)
        return torch.tanh(self.to_rgb(h))


class SwapGenerator(nn.Module):
    """Everything updated in the generator phase: encoders, decoders, fusion, RegHead."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.fnid_encoder = FNIDEncoder(cfg)
        self.fnid_decoder = PyramidDecoder(cfg.fnid_widths[-1], cfg.fnid_dec_widths)
        if cfg.use_nfa:
            self.nfa_encoder = NFAEncoder(cfg)
            self.masked_encoder = NFAEncoder(cfg)
            self.nfa_decoder = PyramidDecoder(cfg.nfa_channels, cfg.nfa_dec_widths)
        self.fusion = FusionDecoder(cfg)
        self.reg_head = RegHead(cfg)
        self.apply(init_weights)

    def fnid_encode(self, x):
        return self.fnid_encoder(x)

    def nfa_encode(self, x):
        return self.nfa_encoder(x)

    def masked_encode(self, x, mask):
        if mask.shape[0] != x.shape[0] or mask.shape[-2:] != x.shape[-2:]:
            raise ShapeError("mask and image sizes differ")
        return self.masked_encoder((1 - mask) * x)

    def fnid_decode(self, code):
        return self.fnid_decoder(code)

    def nfa_decode(self, z_nfa):
        return self.nfa_decoder(z_nfa)

    def fuse(self, code, fnid_pyr, nfa_pyr, z_id, skips=None):
        return self.fusion(code, fnid_pyr, nfa_pyr, z_id, skips)

    def encode(self, x):
        """Codes and pyramids of a target image."""
        code, shallow = self.fnid_encode(x)
        out = {"z_fnid": code, "shallow": shallow, "fnid_pyr": self.fnid_decode(code)}
        if self.cfg.use_nfa:
            z_nfa = self.nfa_encode(x)
            out["z_nfa"] = z_nfa
            out["nfa_pyr"] = self.nfa_decode(z_nfa)
        else:
            out["z_nfa"] = None
            out["nfa_pyr"] = None
        return out

    def forward(self, target_pixels, z_id):
        enc = self.encode(target_pixels)
        y = self.fuse(enc["z_fnid"], enc["fnid_pyr"], enc["nfa_pyr"], z_id, enc["shallow"])
        return y, enc


class PatchDiscriminator(nn.Module):
    def __init__(self, widths):
        super().__init__()
        layers, c = [], 3
        for i, w in enumerate(widths):
            layers.append(nn.Conv2d(c, w, 4, 2, 1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(w))
            layers.append(nn.LeakyReLU(0.2))
            c = w
        layers.append(nn.Conv2d(c, 1, 3, 1, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class MultiScaleDiscriminator(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.resolution = cfg.resolution
        self.discs = nn.ModuleList(PatchDiscriminator(cfg.disc_widths) for _ in range(cfg.disc_scales))
        self.apply(init_weights)

    def scales(self):
        return [self.resolution // 2 ** i for i in range(len(self.discs))]

    def forward(self, x):
        _check_images(x, self.resolution)
        logits = []
        for i, d in enumerate(self.discs):
            if i > 0:
                x = F.avg_pool2d(x, 3, stride=2, padding=1, count_include_pad=False)
            logits.append(d(x))
        return logits
