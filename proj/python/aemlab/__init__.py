"""Entropy-modulated group policy optimization on tabular agents.

Thin wrapper over the native ``_aemlab`` module.
"""

from ._aemlab import (
    BudgetError,
    ConfigError,
    Error,
    LengthError,
    ProtocolError,
    StatisticsError,
    __version__,
    config_keys,
    default_config,
    entropy,
    entropy_nesting_gaps,
    grpo_advantages,
    natural_gradient,
    population_alpha,
    resp_entropy_drift,
    response_entropy_proxy,
    rloo_advantages,
    run_cli,
)
from ._aemlab import train as _train


def train(config=None, out_dir=""):
    """Run one training job and return the per-step metrics as dicts.

    ``config`` maps dotted keys (``"train.lr"``) to values; non-string values
    are converted with ``str`` (booleans as ``true``/``false``).
    """
    kv = {}
    for key, value in (config or {}).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        kv[key] = value if isinstance(value, str) else repr(value)
    return _train(kv, str(out_dir))


__all__ = [
    "BudgetError",
    "ConfigError",
    "Error",
    "LengthError",
    "ProtocolError",
    "StatisticsError",
    "config_keys",
    "default_config",
    "entropy",
    "entropy_nesting_gaps",
    "grpo_advantages",
    "natural_gradient",
    "population_alpha",
    "resp_entropy_drift",
    "response_entropy_proxy",
    "rloo_advantages",
    "run_cli",
    "train",
]
