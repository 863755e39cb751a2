"""Shared domain types: sequence items, examples, mini-batches, rearrangements
and the per-batch cost model.

Only lengths and identities flow through the simulator; no tensor data.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

LLM = "llm"
TEXT = "text"

# Downsample rates applied to encoder outputs before the connector.
DEFAULT_DOWNSAMPLE_RATES: dict[str, int] = {TEXT: 1, "vision": 4, "audio": 4}

Slot = tuple[int, int]


class OrchSimError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(OrchSimError, ValueError):
    pass


class ContractError(OrchSimError, ValueError):
    """An operation was called with arguments violating its precondition."""


class BijectionError(ContractError):
    pass


class PaddingMode(str, enum.Enum):
    PADDED = "Padded"
    UNPADDED = "Unpadded"


class CostVariant(str, enum.Enum):
    LINEAR_ONLY = "LinearOnly"
    TRANSFORMER_QUADRATIC = "TransformerQuadratic"
    CONV_TRANSFORMER_PADDED = "ConvTransformerPadded"


@dataclass(frozen=True, order=True)
class SeqItem:
    """One sequence seen by one phase: a whole example (LLM phase) or a single
    modality part of it (encoder phases)."""

    example_id: int
    modality: str
    length: int
    origin_instance: int = 0
    part: int = 0

    def __post_init__(self):
        if self.length < 1:
            raise ContractError(f"item length must be >= 1, got {self.length}")
        if self.origin_instance < 0:
            raise ContractError("origin_instance must be non-negative")

    @property
    def key(self) -> tuple[int, str, int]:
        return (self.example_id, self.modality, self.part)


@dataclass(frozen=True)
class Part:
    modality: str
    metadata_length: int

    def __post_init__(self):
        if not self.modality:
            raise ConfigError("modality name must be non-empty")
        if self.metadata_length < 1:
            raise ConfigError(f"metadata_length must be >= 1, got {self.metadata_length}")


def encoded_length(metadata_length: int, rate: int) -> int:
    # ceiling division keeps every part at >= 1 token
    return -(-metadata_length // rate)


@dataclass(frozen=True)
class Example:
    example_id: int
    parts: tuple[Part, ...]
    interleave_order: tuple[int, ...]
    encoded_lengths: tuple[int, ...]

    def __post_init__(self):
        n = len(self.parts)
        if n == 0:
            raise ConfigError(f"example {self.example_id} has no parts")
        if sorted(self.interleave_order) != list(range(n)):
            raise ConfigError(
                f"example {self.example_id}: interleave_order {list(self.interleave_order)} "
                f"is not a permutation of range({n})"
            )
        if len(self.encoded_lengths) != n or min(self.encoded_lengths) < 1:
            raise ConfigError(f"example {self.example_id}: bad encoded_lengths")

    @property
    def modalities(self) -> set[str]:
        return {p.modality for p in self.parts}


def make_example(
    example_id: int,
    parts: Iterable[tuple[str, int] | Part],
    interleave_order: Sequence[int] | None = None,
    rates: Mapping[str, int] | None = None,
) -> Example:
    """Build an :class:`Example`, computing encoded lengths from ``rates``.

    Modalities missing from ``rates`` raise :class:`ConfigError`; text always
    has rate 1.
    """
    rates = DEFAULT_DOWNSAMPLE_RATES if rates is None else rates
    parts = tuple(p if isinstance(p, Part) else Part(*p) for p in parts)
    encoded = []
    for p in parts:
        if p.modality == TEXT:
            rate = 1
        elif p.modality in rates:
            rate = rates[p.modality]
        else:
            raise ConfigError(f"example {example_id}: unregistered modality {p.modality!r}")
        if rate < 1:
            raise ConfigError(f"downsample rate for {p.modality!r} must be >= 1")
        encoded.append(encoded_length(p.metadata_length, rate))
    order = tuple(range(len(parts))) if interleave_order is None else tuple(interleave_order)
    return Example(example_id, parts, order, tuple(encoded))


def interleaved_length(ex: Example) -> int:
    """Length of the full interleaved sequence the LLM backbone processes."""
    return sum(ex.encoded_lengths)


@dataclass(frozen=True)
class MiniBatch:
    instance: int
    items: tuple[SeqItem, ...] = ()
    padding_mode: PaddingMode = PaddingMode.UNPADDED

    @property
    def lengths(self) -> list[int]:
        return [it.length for it in self.items]

    def with_mode(self, mode: PaddingMode) -> MiniBatch:
        return replace(self, padding_mode=PaddingMode(mode))

    def __len__(self):
        return len(self.items)


def batch_length(batch: MiniBatch) -> int:
    """Padded: batch size times the longest item. Unpadded: sum of lengths.
    Empty batches have length 0."""
    if not batch.items:
        return 0
    lengths = batch.lengths
    if batch.padding_mode == PaddingMode.PADDED:
        return len(lengths) * max(lengths)
    return sum(lengths)


@dataclass(frozen=True)
class CostModel:
    alpha: float = 1.0
    beta: float = 0.0
    padding_mode: PaddingMode = PaddingMode.UNPADDED
    variant: CostVariant = CostVariant.TRANSFORMER_QUADRATIC

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        object.__setattr__(self, "padding_mode", PaddingMode(self.padding_mode))
        object.__setattr__(self, "variant", CostVariant(self.variant))

    def of_lengths(self, lengths: Sequence[int]) -> float:
        """Cost of a batch given only its item lengths."""
        if not lengths:
            return 0.0
        b = len(lengths)
        longest = max(lengths)
        if self.padding_mode == PaddingMode.PADDED:
            L = b * longest
        else:
            L = sum(lengths)
        if self.variant == CostVariant.LINEAR_ONLY:
            return self.alpha * L
        if self.variant == CostVariant.CONV_TRANSFORMER_PADDED:
            return self.alpha * L + self.beta * b * longest * longest
        if self.padding_mode == PaddingMode.PADDED:
            return self.alpha * L + self.beta * L * L / b
        return self.alpha * L + self.beta * sum(x * x for x in lengths)


def cost(model: CostModel, batch: MiniBatch) -> float:
    if model.padding_mode != batch.padding_mode:
        raise ContractError(
            f"cost model expects {model.padding_mode.value} batches, "
            f"got {batch.padding_mode.value}"
        )
    return model.of_lengths(batch.lengths)


@dataclass(frozen=True, eq=True)
class Rearrangement:
    """Bijective relocation of items from (source instance, slot) to
    (destination instance, slot).

    Destination slots on each instance must be exactly ``0..k-1``.
    """

    d: int
    moves: Mapping[Slot, Slot] = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise ContractError("a rearrangement needs d >= 1")
        moves = dict(self.moves)
        object.__setattr__(self, "moves", moves)
        seen: dict[Slot, Slot] = {}
        per_dest: dict[int, int] = {}
        for src, dst in moves.items():
            if not (0 <= src[0] < self.d and 0 <= dst[0] < self.d):
                raise BijectionError(f"move {src} -> {dst} leaves instance range [0, {self.d})")
            if dst in seen:
                raise BijectionError(f"{seen[dst]} and {src} both map to {dst}")
            seen[dst] = src
            per_dest[dst[0]] = per_dest.get(dst[0], 0) + 1
        for (inst, slot) in seen:
            if not 0 <= slot < per_dest[inst]:
                raise BijectionError(f"destination slots on instance {inst} are not contiguous")

    __hash__ = None  # type: ignore[assignment]

    def __len__(self):
        return len(self.moves)

    def __getitem__(self, src: Slot) -> Slot:
        return self.moves[src]

    @classmethod
    def identity(cls, batches: Sequence[MiniBatch] | Sequence[int], d: int | None = None):
        """Identity over ``batches`` (or over a list of per-instance sizes)."""
        sizes = [len(b) if isinstance(b, MiniBatch) else int(b) for b in batches]
        d = len(sizes) if d is None else d
        return cls(d, {(i, j): (i, j) for i, n in enumerate(sizes) for j in range(n)})

    def relabel(self, instance_of: Sequence[int]) -> Rearrangement:
        """Move destination batch ``k`` wholesale to instance ``instance_of[k]``."""
        return Rearrangement(
            self.d, {s: (instance_of[t[0]], t[1]) for s, t in self.moves.items()}
        )

    def dest_sizes(self) -> list[int]:
        sizes = [0] * self.d
        for inst, _ in self.moves.values():
            sizes[inst] += 1
        return sizes


def group_by_origin(items: Iterable[SeqItem], d: int,
                    mode: PaddingMode = PaddingMode.UNPADDED) -> list[MiniBatch]:
    """Origin mini-batches: items grouped by origin instance, keeping input order."""
    buckets: list[list[SeqItem]] = [[] for _ in range(d)]
    for it in items:
        if it.origin_instance >= d:
            raise ContractError(f"origin_instance {it.origin_instance} >= d={d}")
        buckets[it.origin_instance].append(it)
    return [MiniBatch(i, tuple(b), mode) for i, b in enumerate(buckets)]


def apply(re: Rearrangement, batches: Sequence[MiniBatch]) -> list[MiniBatch]:
    """Relocate every item of ``batches`` according to ``re``.

    Returns ``re.d`` new batches; item order inside each follows the
    destination slot.
    """
    sources = {(b.instance, j) for b in batches for j in range(len(b))}
    if len({b.instance for b in batches}) != len(batches):
        raise BijectionError("duplicate source instance in batches")
    if sources != set(re.moves):
        missing = sources - set(re.moves)
        extra = set(re.moves) - sources
        raise BijectionError(
            f"rearrangement does not cover batches (missing {sorted(missing)[:5]}, "
            f"extra {sorted(extra)[:5]})"
        )
    mode = batches[0].padding_mode if batches else PaddingMode.UNPADDED
    out: list[list[SeqItem | None]] = [[None] * n for n in re.dest_sizes()]
    for b in batches:
        for j, it in enumerate(b.items):
            inst, slot = re.moves[(b.instance, j)]
            out[inst][slot] = it
    return [MiniBatch(i, tuple(items), mode) for i, items in enumerate(out)]  # type: ignore[arg-type]
