"""
Graybox NLP - Service Tools Package
"""

from .networks import describe_formulations, generate_network, network_stats
from .solve import run_bench_config, solve_adversarial_case, solve_dispatch_case

__all__ = [
    "describe_formulations",
    "generate_network",
    "network_stats",
    "run_bench_config",
    "solve_adversarial_case",
    "solve_dispatch_case",
]
