from .generator import SynthConfig, SynthDataset, generate, solve_bias_for_utility
from .metrics import auc, kendall_tau

__all__ = ["SynthConfig", "SynthDataset", "generate", "solve_bias_for_utility", "auc", "kendall_tau"]
