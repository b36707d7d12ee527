"""Pipeline configuration stored as flat ``key = value`` text."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .tddl import TrainConfig


class ConfigError(ValueError):
    """Unknown key, unparsable value or out-of-range setting."""


@dataclass
class PipelineConfig:
    # imaging
    sigma: float = 1.2
    M: int = 4
    resize_cap: int = 400
    # segmentation
    seg_k: float = 200.0
    seg_min_size: int = 100
    merge_thresholds: tuple = (0.7, 0.6, 0.5)
    # forest
    forest_trees: int = 200
    forest_min_leaf: int = 8
    forest_seed: int = 0
    # fusion
    patch_size: int = 9
    stride: int = 9
    gt_threshold: float = 0.3
    # dictionary learning
    d: int = 150
    lambda1: float = 0.015
    lambda2: float = 0.002
    nu: float = 1e-4
    rho: float = 0.01
    t0: float = 0.0  # 0 means T / 10
    T: int = 100_000
    tddl_seed: int = 0
    jsc_max_iter: int = 300
    jsc_tol: float = 1e-7

    def __post_init__(self):
        self.merge_thresholds = tuple(float(v) for v in self.merge_thresholds)
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.sigma > 0, "sigma must be positive"),
            (self.M >= 1, "M must be at least 1"),
            (self.resize_cap >= 1, "resize_cap must be positive"),
            (self.seg_k > 0, "seg_k must be positive"),
            (self.seg_min_size >= 1, "seg_min_size must be >= 1"),
            (len(self.merge_thresholds) == self.M - 1,
             f"merge_thresholds needs M-1 = {self.M - 1} values"),
            (all(0 < v <= 1 for v in self.merge_thresholds), "merge_thresholds must lie in (0, 1]"),
            (self.forest_trees >= 1, "forest_trees must be >= 1"),
            (self.forest_min_leaf >= 1, "forest_min_leaf must be >= 1"),
            (self.patch_size >= 1, "patch_size must be >= 1"),
            (1 <= self.stride <= self.patch_size, "stride must lie in [1, patch_size]"),
            (0 < self.gt_threshold < 1, "gt_threshold must lie in (0, 1)"),
            (self.d >= 1, "d must be >= 1"),
            (self.lambda1 >= 0, "lambda1 must be >= 0"),
            (self.lambda2 > 0, "lambda2 must be positive"),
            (self.nu >= 0, "nu must be >= 0"),
            (self.rho > 0, "rho must be positive"),
            (self.t0 == 0 or self.t0 >= 1, "t0 must be 0 (auto) or >= 1"),
            (self.T >= 0, "T must be >= 0"),
            (self.jsc_max_iter >= 1, "jsc_max_iter must be >= 1"),
            (self.jsc_tol > 0, "jsc_tol must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lambda1=self.lambda1, lambda2=self.lambda2, nu=self.nu,
                           rho=self.rho, t0=self.t0 or None, T=self.T, d=self.d,
                           rng_seed=self.tddl_seed, jsc_max_iter=self.jsc_max_iter,
                           jsc_tol=self.jsc_tol)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    # -- text form ---------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        base = base or cls()
        types = {f.name: type(getattr(base, f.name)) for f in dataclasses.fields(cls)}
        changes = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            changes[key] = _parse(key, val, types[key], lineno)
        try:
            return dataclasses.replace(base, **changes)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_text(Path(path).read_text())


def _parse(key, val, typ, lineno):
    try:
        if typ is tuple:
            return tuple(float(v) for v in val.split(",") if v.strip())
        if typ is int:
            f = float(val)
            if f != int(f):
                raise ValueError(val)
            return int(f)
        return typ(val)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
