"""Simulator for balancing multimodal training batches across data-parallel
instances, phase by phase."""

from .balancers import (
    BalancePolicy,
    BalanceResult,
    PolicyKind,
    balance,
    balance_binary_padded,
    balance_convtransformer,
    balance_greedy_unpadded,
    balance_quadratic_tolerance,
)
from .core import (
    LLM,
    TEXT,
    BijectionError,
    ConfigError,
    ContractError,
    CostModel,
    CostVariant,
    Example,
    MiniBatch,
    OrchSimError,
    PaddingMode,
    Rearrangement,
    SeqItem,
    apply,
    batch_length,
    cost,
    make_example,
)
from .exchange import ExchangeMode, compose, inverse, plan_exchange, simulate_exchange
from .oracle import oracle_optimal
from .orchestrator import OrchestratorOptions, PhaseSpec, default_phases, run_iteration
from .report import report_schema
from .topology import ClusterTopology, nodewise_rearrange
from .workload import default_profiles, generate, load_trace, save_trace

__version__ = "0.1.0"
