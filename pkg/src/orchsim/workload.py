"""Synthetic multimodal workloads, trace files and composition statistics."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .core import (
    DEFAULT_DOWNSAMPLE_RATES,
    TEXT,
    ConfigError,
    Example,
    OrchSimError,
    make_example,
)


class TraceParseError(OrchSimError, ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class DistKind(str, enum.Enum):
    LOGNORMAL = "LogNormal"
    UNIFORM = "Uniform"
    FIXED = "Fixed"


@dataclass(frozen=True)
class LengthDist:
    """Integer length distribution driven by a standard-normal latent.

    LogNormal(mu, sigma) is rounded up; Uniform(low, high) is inclusive.
    """

    kind: DistKind
    params: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", DistKind(self.kind))
        object.__setattr__(self, "params", tuple(self.params))
        p = self.params
        if self.kind == DistKind.LOGNORMAL:
            if len(p) != 2 or not all(map(math.isfinite, p)) or p[1] < 0:
                raise ConfigError(f"LogNormal needs (mu, sigma >= 0), got {p}")
        elif self.kind == DistKind.UNIFORM:
            if len(p) != 2 or not (1 <= p[0] <= p[1]) or int(p[0]) != p[0] or int(p[1]) != p[1]:
                raise ConfigError(f"Uniform needs integers 1 <= low <= high, got {p}")
        elif len(p) != 1 or p[0] < 1 or int(p[0]) != p[0]:
            raise ConfigError(f"Fixed needs one integer >= 1, got {p}")

    def from_latent(self, z: np.ndarray) -> np.ndarray:
        if self.kind == DistKind.LOGNORMAL:
            mu, sigma = self.params
            x = np.ceil(np.exp(mu + sigma * z))
        elif self.kind == DistKind.UNIFORM:
            low, high = self.params
            u = ndtr(z)
            x = low + np.minimum(np.floor(u * (high - low + 1)), high - low)
        else:
            x = np.full(z.shape, self.params[0])
        return np.maximum(x, 1).astype(np.int64)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "params": list(self.params)}


def lognormal(median: float, sigma: float) -> LengthDist:
    return LengthDist(DistKind.LOGNORMAL, (math.log(median), sigma))


@dataclass(frozen=True)
class PartSpec:
    modality: str
    dist: LengthDist


@dataclass(frozen=True)
class TaskProfile:
    """One task family. ``correlated`` names two part indices whose latent
    draws share correlation ``correlation`` (Gaussian copula)."""

    name: str
    parts: tuple[PartSpec, ...]
    correlation: float = 0.0
    correlated: tuple[int, int] | None = None
    interleave_order: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ConfigError(f"profile {self.name!r} has no parts")
        if not -1.0 <= self.correlation <= 1.0:
            raise ConfigError("correlation must lie in [-1, 1]")
        if self.correlated is not None:
            a, b = self.correlated
            if a == b or not (0 <= a < len(self.parts) and 0 <= b < len(self.parts)):
                raise ConfigError(f"profile {self.name!r}: bad correlated pair {self.correlated}")
        if self.interleave_order is not None:
            object.__setattr__(self, "interleave_order", tuple(self.interleave_order))
            if sorted(self.interleave_order) != list(range(len(self.parts))):
                raise ConfigError(f"profile {self.name!r}: interleave_order is not a permutation")

    @property
    def modalities(self) -> set[str]:
        return {p.modality for p in self.parts}

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "parts": [{"modality": p.modality, **p.dist.to_dict()} for p in self.parts],
            "correlation": self.correlation,
            "correlated": list(self.correlated) if self.correlated else None,
            "interleave_order": list(self.interleave_order) if self.interleave_order else None,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> TaskProfile:
        try:
            parts = tuple(
                PartSpec(p["modality"], LengthDist(p["kind"], tuple(p["params"])))
                for p in raw["parts"]
            )
            correlated = raw.get("correlated")
            order = raw.get("interleave_order")
            return cls(raw["name"], parts, float(raw.get("correlation", 0.0)),
                       tuple(correlated) if correlated else None,
                       tuple(order) if order else None)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad task profile {raw!r}: {exc}") from exc


# Default mix: image instructions, speech recognition and spoken question
# answering. Vision lengths are patches (14px), audio lengths
# are mel frames (100 per second).
def default_profiles() -> list[TaskProfile]:
    return [
        TaskProfile(
            "vision_instruct",
            (PartSpec(TEXT, lognormal(40, 0.6)),
             PartSpec("vision", LengthDist(DistKind.UNIFORM, (256, 4096))),
             PartSpec(TEXT, lognormal(120, 0.8))),
        ),
        TaskProfile(
            "asr",
            (PartSpec("audio", lognormal(1200, 0.5)),
             PartSpec(TEXT, lognormal(60, 0.5))),
            correlation=0.9, correlated=(0, 1),
        ),
        TaskProfile(
            "spoken_qa",
            (PartSpec("audio", lognormal(900, 0.6)),
             PartSpec(TEXT, lognormal(12, 0.8))),
        ),
    ]


DEFAULT_WEIGHTS = (0.5, 0.25, 0.25)


def generate(profiles: Sequence[TaskProfile], weights: Sequence[float], n: int, seed: int,
             rates: Mapping[str, int] | None = None) -> list[Example]:
    """Sample ``n`` examples; example ids are ``0..n-1`` in sampling order."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    if len(profiles) != len(weights) or not profiles:
        raise ConfigError("need one weight per profile")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not math.isclose(float(w.sum()), 1.0, abs_tol=1e-9):
        raise ConfigError(f"profile weights must be non-negative and sum to 1, got {list(weights)}")
    rng = np.random.default_rng(seed)
    choice = rng.choice(len(profiles), size=n, p=w / w.sum())
    lengths: list[np.ndarray | None] = [None] * len(profiles)
    for k, prof in enumerate(profiles):
        count = int(np.sum(choice == k))
        z = rng.standard_normal((count, len(prof.parts)))
        if prof.correlated is not None and count:
            a, b = prof.correlated
            rho = prof.correlation
            z[:, b] = rho * z[:, a] + math.sqrt(1.0 - rho * rho) * z[:, b]
        lengths[k] = np.column_stack([p.dist.from_latent(z[:, j]) for j, p in enumerate(prof.parts)])
    cursor = [0] * len(profiles)
    out = []
    for ex_id, k in enumerate(choice):
        prof = profiles[k]
        row = lengths[k][cursor[k]]  # type: ignore[index]
        cursor[k] += 1
        parts = [(p.modality, int(x)) for p, x in zip(prof.parts, row)]
        out.append(make_example(ex_id, parts, prof.interleave_order, rates))
    return out


def example_ratios(ex: Example) -> dict[str, Fraction]:
    """Exact share of each modality in the interleaved sequence."""
    total = sum(ex.encoded_lengths)
    shares: dict[str, int] = {}
    for part, enc in zip(ex.parts, ex.encoded_lengths):
        shares[part.modality] = shares.get(part.modality, 0) + enc
    return {m: Fraction(v, total) for m, v in shares.items()}


@dataclass
class CompositionStats:
    ratios: dict[str, np.ndarray]
    mean: dict[str, float]
    variance: dict[str, float]
    histogram: dict[str, np.ndarray]
    bin_edges: np.ndarray = field(repr=False)


def composition_stats(examples: Iterable[Example], modalities: Iterable[str] | None = None,
                      bins: int = 10) -> CompositionStats:
    """Per-modality distribution of each example's length share (0 when absent)."""
    per_example = [example_ratios(ex) for ex in examples]
    if modalities is None:
        modalities = sorted({m for r in per_example for m in r})
    edges = np.linspace(0.0, 1.0, bins + 1)
    ratios, mean, var, hist = {}, {}, {}, {}
    for m in modalities:
        arr = np.array([float(r.get(m, 0)) for r in per_example])
        ratios[m] = arr
        mean[m] = float(arr.mean()) if arr.size else 0.0
        var[m] = float(arr.var()) if arr.size else 0.0
        hist[m] = np.histogram(arr, bins=edges)[0]
    return CompositionStats(ratios, mean, var, hist, edges)


def _record(ex: Example) -> dict:
    return {
        "example_id": ex.example_id,
        "parts": [{"modality": p.modality, "metadata_length": p.metadata_length} for p in ex.parts],
        "interleave_order": list(ex.interleave_order),
    }


def save_trace(examples: Iterable[Example], path: str | Path) -> None:
    """Write one JSON record per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(json.dumps(_record(ex), separators=(",", ":")))
            fh.write("\n")


def load_trace(path: str | Path, rates: Mapping[str, int] | None = None) -> list[Example]:
    """Read a trace written by :func:`save_trace`.

    Modalities other than text must appear in ``rates``.
    """
    rates = DEFAULT_DOWNSAMPLE_RATES if rates is None else rates
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                parts = [(str(p["modality"]), p["metadata_length"]) for p in rec["parts"]]
                ex_id = rec["example_id"]
                order = rec.get("interleave_order")
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise TraceParseError(lineno, f"malformed record ({exc})") from exc
            if not isinstance(ex_id, int) or not all(isinstance(x, int) for _, x in parts):
                raise TraceParseError(lineno, "example_id and metadata_length must be integers")
            for modality, _ in parts:
                if modality != TEXT and modality not in rates:
                    raise ConfigError(f"line {lineno}: unknown modality {modality!r}")
            try:
                out.append(make_example(ex_id, parts, order, rates))
            except ConfigError as exc:
                raise TraceParseError(lineno, str(exc)) from exc
    return out
