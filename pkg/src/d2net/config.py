"""Architectural configuration with validated defaults.

Defaults follow the published recipe where it is explicit (24 base channels,
level depths [2, 4, 4, 6], refinement depth 2, 8x8 frequency patches) and
otherwise pick the variant that lands the trainable-parameter count next to
the published 5.22M: a quarter-resolution latent, pointwise-then-depthwise
projection groups, and feedforward expansion 3.  Every such choice is a
config field, so the alternatives stay reachable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError

LATENT_CHOICES = ("quarter", "eighth")
NORM_CHOICES = ("layernorm", "none")
GROUP_CHOICES = ("pointwise-then-dwconv", "literal")


@dataclass(frozen=True)
class BlockConfig:
    """Shape-independent knobs shared by every feature-extraction block."""

    freq_patch: int = 8
    branch_ratio: float = 0.125
    square_kernel: int = 5
    band_kernel: int = 11
    ffn_expand: float = 3.0
    norm: str = "layernorm"
    conv_group_order: str = "pointwise-then-dwconv"

    def validate(self) -> None:
        if self.freq_patch < 2:
            raise ConfigError(f"freq_patch must be >= 2, got {self.freq_patch}")
        if not 0.0 < self.branch_ratio <= 1.0 / 3.0:
            raise ConfigError(f"branch_ratio must lie in (0, 1/3], got {self.branch_ratio}")
        for name in ("square_kernel", "band_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{name} must be a positive odd integer, got {k}")
        if self.ffn_expand <= 0:
            raise ConfigError(f"ffn_expand must be positive, got {self.ffn_expand}")
        if self.norm not in NORM_CHOICES:
            raise ConfigError(f"norm must be one of {NORM_CHOICES}, got {self.norm!r}")
        if self.conv_group_order not in GROUP_CHOICES:
            raise ConfigError(
                f"conv_group_order must be one of {GROUP_CHOICES}, got {self.conv_group_order!r}"
            )

    def branch_channels(self, channels: int) -> int:
        g = int(self.branch_ratio * channels)
        if 3 * g > channels:
            raise ConfigError(
                f"3 * branch channels ({3 * g}) exceeds C={channels}; lower branch_ratio"
            )
        return g


@dataclass(frozen=True)
class NetworkConfig:
    """Full encoder-decoder layout."""

    base_channels: int = 24
    level_depths: tuple[int, int, int, int] = (2, 4, 4, 6)
    decoder_depths: tuple[int, int, int] = (4, 4, 2)
    refine_depth: int = 2
    latent_at: str = "quarter"
    block: BlockConfig = field(default_factory=BlockConfig)

    def validate(self) -> None:
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if len(self.level_depths) != 4 or any(d < 0 for d in self.level_depths):
            raise ConfigError(f"level_depths must be 4 non-negative ints, got {self.level_depths}")
        if len(self.decoder_depths) != 3 or any(d < 0 for d in self.decoder_depths):
            raise ConfigError(
                f"decoder_depths must be 3 non-negative ints, got {self.decoder_depths}"
            )
        if self.refine_depth < 0:
            raise ConfigError(f"refine_depth must be >= 0, got {self.refine_depth}")
        if self.latent_at not in LATENT_CHOICES:
            raise ConfigError(f"latent_at must be one of {LATENT_CHOICES}, got {self.latent_at!r}")
        self.block.validate()

    @property
    def level_channels(self) -> tuple[int, int, int, int]:
        c = self.base_channels
        if self.latent_at == "eighth":
            return (c, 2 * c, 4 * c, 8 * c)
        return (c, 2 * c, 4 * c, 4 * c)

    @property
    def num_downsamples(self) -> int:
        return 3 if self.latent_at == "eighth" else 2

    @property
    def pad_multiple(self) -> int:
        """Input extents are padded to a multiple of this before the forward."""
        return max(self.block.freq_patch, 2 ** self.num_downsamples)


_BLOCK_KEYS = {f.name for f in fields(BlockConfig)}
_NET_KEYS = {f.name for f in fields(NetworkConfig)} - {"block"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in ("level_depths", "decoder_depths"):
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if key in ("base_channels", "refine_depth", "freq_patch", "square_kernel", "band_kernel"):
        return int(raw)
    if key in ("branch_ratio", "ffn_expand"):
        return float(raw)
    return raw


def config_from_mapping(mapping: dict[str, str]) -> NetworkConfig:
    """Build a NetworkConfig from flat ``key = value`` strings."""
    net_kwargs = {}
    block_kwargs = {}
    for key, raw in mapping.items():
        if key in _NET_KEYS:
            net_kwargs[key] = _parse_value(key, raw)
        elif key in _BLOCK_KEYS:
            block_kwargs[key] = _parse_value(key, raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    cfg = NetworkConfig(block=BlockConfig(**block_kwargs), **net_kwargs)
    cfg.validate()
    return cfg


def load_config_file(path) -> NetworkConfig:
    """Parse a line-oriented ``key = value`` config file ('#' comments)."""
    mapping: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = line.split("=", 1)
            mapping[key.strip()] = raw.strip()
    return config_from_mapping(mapping)


def config_to_lines(cfg: NetworkConfig) -> list[str]:
    """Flat, reproducible ``key = value`` rendering (the CLI banner)."""
    lines = [
        f"base_channels = {cfg.base_channels}",
        f"level_depths = {','.join(map(str, cfg.level_depths))}",
        f"decoder_depths = {','.join(map(str, cfg.decoder_depths))}",
        f"refine_depth = {cfg.refine_depth}",
        f"latent_at = {cfg.latent_at}",
    ]
    b = cfg.block
    lines += [
        f"freq_patch = {b.freq_patch}",
        f"branch_ratio = {b.branch_ratio}",
        f"square_kernel = {b.square_kernel}",
        f"band_kernel = {b.band_kernel}",
        f"ffn_expand = {b.ffn_expand}",
        f"norm = {b.norm}",
        f"conv_group_order = {b.conv_group_order}",
    ]
    return lines


def toy_config(base_channels: int = 4, freq_patch: int = 4) -> NetworkConfig:
    """Small config for gradient certification and fast tests."""
    return NetworkConfig(
        base_channels=base_channels,
        level_depths=(1, 1, 1, 1),
        decoder_depths=(1, 1, 1),
        refine_depth=1,
        latent_at="quarter",
        block=BlockConfig(freq_patch=freq_patch, branch_ratio=0.25,
                          square_kernel=3, band_kernel=5, ffn_expand=2.0),
    )


def toy_train_config() -> NetworkConfig:
    """Reduced network for desk-scale CPU training runs: same topology and
    block zoo as the default, sized to finish a few thousand steps in
    minutes."""
    return NetworkConfig(
        base_channels=12,
        level_depths=(1, 1, 1, 2),
        decoder_depths=(1, 1, 1),
        refine_depth=1,
        latent_at="quarter",
        block=BlockConfig(freq_patch=8, branch_ratio=0.25, square_kernel=5,
                          band_kernel=11, ffn_expand=2.0),
    )


def override(cfg: NetworkConfig, **changes) -> NetworkConfig:
    block_changes = {k: v for k, v in changes.items() if k in _BLOCK_KEYS}
    net_changes = {k: v for k, v in changes.items() if k not in _BLOCK_KEYS}
    if block_changes:
        net_changes["block"] = replace(cfg.block, **block_changes)
    out = replace(cfg, **net_changes)
    out.validate()
    return out
