"""Space-time Bell-CHSH experiments with post-selection, local hidden-variable
baselines, and the ST key distribution protocol built on them."""
from .engine import ChshEstimate, RoundLog, RoundRecord, chsh_statistic, partition, simulate, simulate_round
from .errors import ConfigError, InsufficientDataError, KernelError, ProtocolError, StBellError
from .kernel import BACKEND as KERNEL_BACKEND
from .observables import ContextChoice, SubensembleLabel
from .qkd import EveModel, QkdConfig, QkdReport, run_protocol
from .rng import RngSpec

__version__ = "0.1.0"

__all__ = [
    "ChshEstimate", "ConfigError", "ContextChoice", "EveModel", "InsufficientDataError", "KERNEL_BACKEND",
    "KernelError", "ProtocolError", "QkdConfig", "QkdReport", "RngSpec", "RoundLog", "RoundRecord",
    "StBellError", "SubensembleLabel", "chsh_statistic", "partition", "run_protocol", "simulate", "simulate_round",
]
