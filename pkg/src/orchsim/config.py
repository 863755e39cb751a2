"""Run configuration: a single JSON file, overridable from the command line."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .balancers import BalancePolicy, PolicyKind
from .core import LLM, ConfigError, CostModel
from .exchange import ExchangeMode
from .orchestrator import OrchestratorOptions, PhaseSpec, SolverTimeModel, default_phases
from .topology import NODE, ClusterTopology
from .workload import DEFAULT_WEIGHTS, TaskProfile, default_profiles


@dataclass(frozen=True)
class Switches:
    """Baseline arms of the ablation grid."""

    no_balance: bool = False
    llm_only_balance: bool = False
    all_pad: bool = False
    all_rmpad: bool = False
    allgather_communicator: bool = False
    disable_nodewise: bool = False

    def __post_init__(self):
        if self.all_pad and self.all_rmpad:
            raise ConfigError("all_pad and all_rmpad cannot both be set")


@dataclass(frozen=True)
class GenerationSpec:
    n: int = 4096
    profiles: tuple[TaskProfile, ...] = field(default_factory=lambda: tuple(default_profiles()))
    weights: tuple[float, ...] = DEFAULT_WEIGHTS


@dataclass(frozen=True)
class VerifyCaps:
    trials: int = 300
    max_items: int = 10
    padded_trials: int = 300
    nodewise_trials: int = 100
    composition_trials: int = 100
    exhaustive_n: int = 0


@dataclass(frozen=True)
class RunConfig:
    topology: ClusterTopology = field(default_factory=lambda: ClusterTopology(32, 8, 10.0, 1.0))
    phases: tuple[PhaseSpec, ...] = field(default_factory=lambda: tuple(default_phases()))
    trace: str | None = None
    generation: GenerationSpec | None = field(default_factory=GenerationSpec)
    mini_batch_size: int = 32
    iterations: int | None = None
    seed: int = 0
    switches: Switches = field(default_factory=Switches)
    protocol_constant: float = 1.0
    seconds_per_cost_unit: float = 1e-6
    seconds_per_exchange_unit: float = 1e-6
    nodewise_granularity: str = NODE
    verify: VerifyCaps = field(default_factory=VerifyCaps)

    def __post_init__(self):
        if (self.trace is None) == (self.generation is None):
            raise ConfigError("exactly one of 'trace' and 'generation' must be given")
        if self.mini_batch_size < 1:
            raise ConfigError("mini_batch_size must be >= 1")
        if self.iterations is not None and self.iterations < 1:
            raise ConfigError("iterations must be >= 1")

    @property
    def global_batch(self) -> int:
        return self.topology.d * self.mini_batch_size

    @property
    def rates(self) -> dict[str, int]:
        return {p.modality: p.downsample_rate for p in self.phases if p.modality != LLM}

    def effective_phases(self) -> list[PhaseSpec]:
        sw = self.switches
        out = []
        for p in self.phases:
            if p.modality != LLM and (sw.all_pad or sw.all_rmpad):
                kind = PolicyKind.BINARY_PADDED if sw.all_pad else PolicyKind.GREEDY_UNPADDED
                p = replace(p, policy=BalancePolicy(kind))
            out.append(p)
        return out

    def options(self) -> OrchestratorOptions:
        sw = self.switches
        return OrchestratorOptions(
            balance_encoders=not (sw.no_balance or sw.llm_only_balance),
            balance_llm=not sw.no_balance,
            nodewise=not sw.disable_nodewise,
            communicator=ExchangeMode.ALL_GATHER if sw.allgather_communicator else ExchangeMode.ALL_TO_ALL,
            nodewise_granularity=self.nodewise_granularity,
            protocol_constant=self.protocol_constant,
            seconds_per_cost_unit=self.seconds_per_cost_unit,
            seconds_per_exchange_unit=self.seconds_per_exchange_unit,
            solver_time=SolverTimeModel(),
        )

    def to_dict(self) -> dict:
        t = self.topology
        return {
            "topology": {"d": t.d, "c": t.c, "intra_bw": t.intra_bw, "inter_bw": t.inter_bw},
            "phases": [_phase_to_dict(p) for p in self.phases],
            "trace": self.trace,
            "generation": None if self.generation is None else {
                "n": self.generation.n,
                "profiles": [p.to_dict() for p in self.generation.profiles],
                "weights": list(self.generation.weights),
            },
            "mini_batch_size": self.mini_batch_size,
            "iterations": self.iterations,
            "seed": self.seed,
            "switches": {f.name: getattr(self.switches, f.name) for f in fields(Switches)},
            "protocol_constant": self.protocol_constant,
            "seconds_per_cost_unit": self.seconds_per_cost_unit,
            "seconds_per_exchange_unit": self.seconds_per_exchange_unit,
            "nodewise_granularity": self.nodewise_granularity,
            "verify": {f.name: getattr(self.verify, f.name) for f in fields(VerifyCaps)},
        }


def _phase_to_dict(p: PhaseSpec) -> dict:
    cm = p.cost_model
    return {
        "name": p.name,
        "modality": p.modality,
        "downsample_rate": p.downsample_rate,
        "policy": {"kind": p.policy.kind.value, "tolerance_v": p.policy.tolerance_v,
                   "lambda": p.policy.lam},
        "cost_model": {"alpha": cm.alpha, "beta": cm.beta, "padding_mode": cm.padding_mode.value,
                       "variant": cm.variant.value},
    }


def _phase_from_dict(raw: Mapping) -> PhaseSpec:
    pol = raw.get("policy", {})
    cm = raw.get("cost_model", {})
    return PhaseSpec(
        name=raw["name"],
        modality=raw["modality"],
        policy=BalancePolicy(pol.get("kind", PolicyKind.GREEDY_UNPADDED), int(pol.get("tolerance_v", 0)),
                             float(pol.get("lambda", 0.0))),
        cost_model=CostModel(float(cm.get("alpha", 1.0)), float(cm.get("beta", 0.0)),
                             cm.get("padding_mode", "Unpadded"), cm.get("variant", "TransformerQuadratic")),
        downsample_rate=int(raw.get("downsample_rate", 1)),
    )


_KNOWN = {f.name for f in fields(RunConfig)}


def config_from_dict(raw: Mapping[str, Any]) -> RunConfig:
    unknown = set(raw) - _KNOWN
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    kw: dict[str, Any] = {}
    try:
        if "topology" in raw:
            kw["topology"] = ClusterTopology(**raw["topology"])
        if "phases" in raw:
            kw["phases"] = tuple(_phase_from_dict(p) for p in raw["phases"])
        if "switches" in raw:
            kw["switches"] = Switches(**raw["switches"])
        if "verify" in raw:
            kw["verify"] = VerifyCaps(**raw["verify"])
        if raw.get("trace") is not None:
            kw["trace"] = str(raw["trace"])
            kw["generation"] = None
        if "generation" in raw and raw["generation"] is not None:
            gen = raw["generation"]
            base = GenerationSpec()
            profiles = tuple(TaskProfile.from_dict(p) for p in gen["profiles"]) if "profiles" in gen else base.profiles
            weights = tuple(float(w) for w in gen.get("weights", base.weights))
            kw["generation"] = GenerationSpec(int(gen.get("n", base.n)), profiles, weights)
            if raw.get("trace") is not None:
                raise ConfigError("exactly one of 'trace' and 'generation' must be given")
        for key in ("mini_batch_size", "iterations", "seed"):
            if key in raw and raw[key] is not None:
                kw[key] = int(raw[key])
        for key in ("protocol_constant", "seconds_per_cost_unit", "seconds_per_exchange_unit"):
            if key in raw:
                kw[key] = float(raw[key])
        if "nodewise_granularity" in raw:
            kw["nodewise_granularity"] = str(raw["nodewise_granularity"])
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    cfg = RunConfig(**kw)
    if cfg.generation is not None and len(cfg.generation.profiles) != len(cfg.generation.weights):
        raise ConfigError("generation needs one weight per profile")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(raw)
