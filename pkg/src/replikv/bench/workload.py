"""Workload specification and deterministic operation generation.

Workload files use flat ``key=value`` properties. Recognized keys (YCSB
naming): readproportion, insertproportion, valuesize, threadcount,
operationcount, recordcount, requestdistribution (uniform | zipfian),
zipfianconstant, amplificationfactor.
"""

from __future__ import annotations

import random
from bisect import bisect_left
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from ..errors import ConfigError

ZIPFIAN_THETA = 0.99  # YCSB default skew


@dataclass
class WorkloadSpec:
    read_proportion: float = 0.5
    insert_proportion: float = 0.5
    value_size: int = 64
    thread_count: int = 1
    operation_count: int = 100
    key_count: int = 1000
    key_distribution: str = "zipfian"  # "uniform" | "zipfian"
    zipfian_theta: float = ZIPFIAN_THETA
    amplification_factor: int = 1
    name: str = "workload"

    def validate(self):
        for p in (self.read_proportion, self.insert_proportion):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"proportion {p} outside [0, 1]")
        if self.read_proportion + self.insert_proportion > 1.0 + 1e-9:
            raise ConfigError("read + insert proportions exceed 1")
        if self.key_distribution not in ("uniform", "zipfian"):
            raise ConfigError(f"unknown key distribution {self.key_distribution!r}")
        if self.amplification_factor < 1:
            raise ConfigError("amplification_factor must be >= 1")
        if self.operation_count <= 0 or self.thread_count <= 0 or self.key_count <= 0:
            raise ConfigError("counts must be positive")

    PROPERTY_KEYS = {
        "readproportion": ("read_proportion", float),
        "insertproportion": ("insert_proportion", float),
        "valuesize": ("value_size", int),
        "threadcount": ("thread_count", int),
        "operationcount": ("operation_count", int),
        "recordcount": ("key_count", int),
        "requestdistribution": ("key_distribution", str),
        "zipfianconstant": ("zipfian_theta", float),
        "amplificationfactor": ("amplification_factor", int),
        "name": ("name", str),
    }

    @classmethod
    def from_properties(cls, text: str, name: str | None = None) -> "WorkloadSpec":
        spec = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"workload line {lineno}: expected key=value, got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip().lower()
            value = value.strip()
            try:
                attr, cast = cls.PROPERTY_KEYS[key]
            except KeyError:
                raise ConfigError(f"workload line {lineno}: unknown property {key!r}") from None
            try:
                setattr(spec, attr, cast(value))
            except ValueError as exc:
                raise ConfigError(f"workload line {lineno}: bad value for {key}: {exc}") from None
        if name:
            spec.name = name
        spec.validate()
        return spec

    @classmethod
    def load(cls, path: str | Path) -> "WorkloadSpec":
        p = Path(path)
        return cls.from_properties(p.read_text(), name=p.stem)

    def to_properties(self) -> str:
        lines = []
        for prop, (attr, _) in self.PROPERTY_KEYS.items():
            lines.append(f"{prop}={getattr(self, attr)}")
        return "\n".join(lines) + "\n"


class ZipfianSampler:
    """Exact zipfian sampling over ranks 0..n-1 via a precomputed CDF."""

    _cache: dict[tuple[int, float], list[float]] = {}

    def __init__(self, n: int, theta: float):
        key = (n, theta)
        cdf = self._cache.get(key)
        if cdf is None:
            weights = [1.0 / (i + 1) ** theta for i in range(n)]
            total = sum(weights)
            acc = 0.0
            cdf = []
            for w in weights:
                acc += w / total
                cdf.append(acc)
            cdf[-1] = 1.0
            self._cache[key] = cdf
        self.cdf = cdf

    def sample(self, rng: random.Random) -> int:
        return bisect_left(self.cdf, rng.random())


def key_name(index: int) -> str:
    return f"user{index:08d}"


class OpStream:
    """Seeded per-worker operation sequence: ("get", key) or
    ("insert", key, value). Identical (spec, seed, worker) always yields
    the identical sequence."""

    def __init__(self, spec: WorkloadSpec, seed: int, worker: int):
        spec.validate()
        self.spec = spec
        self.rng = random.Random(seed * 1_000_003 + worker * 7919 + 1)
        self.sampler = (
            ZipfianSampler(spec.key_count, spec.zipfian_theta)
            if spec.key_distribution == "zipfian"
            else None
        )
        total = spec.read_proportion + spec.insert_proportion
        self.read_cut = spec.read_proportion / total if total > 0 else 0.0

    def _key(self) -> str:
        if self.sampler is not None:
            return key_name(self.sampler.sample(self.rng))
        return key_name(self.rng.randrange(self.spec.key_count))

    def __iter__(self):
        for _ in range(self.spec.operation_count):
            if self.rng.random() < self.read_cut:
                yield ("get", self._key())
            else:
                yield ("insert", self._key(), self.rng.randbytes(self.spec.value_size))
