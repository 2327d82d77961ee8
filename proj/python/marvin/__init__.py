"""Mixed-precision RISC-V extension simulator and co-design toolkit."""

from ._core import (
    MarvinError,
    PrecisionConfig,
    all_configs,
    decode,
    default_slack_table,
    disassemble,
    dse,
    dynamic_power,
    encode_nn_mac,
    fixtures,
    hypervolume,
    layer_speedup,
    min_valid_voltage,
    mul32_partial_products,
    nn_mac,
    pareto_front,
    power_sweep,
    run,
    total_power,
)

__all__ = [
    "MarvinError",
    "PrecisionConfig",
    "all_configs",
    "decode",
    "default_slack_table",
    "disassemble",
    "dse",
    "dynamic_power",
    "encode_nn_mac",
    "fixtures",
    "hypervolume",
    "layer_speedup",
    "min_valid_voltage",
    "mul32_partial_products",
    "nn_mac",
    "pareto_front",
    "power_sweep",
    "run",
    "total_power",
]
