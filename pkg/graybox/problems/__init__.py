"""
Graybox NLP - Test Problems Package
"""

from .adversarial import (
    AdversarialSpec,
    build_adversarial,
    make_adversarial_instance,
    verify_adversarial,
)
from .bench import BenchConfig, BenchReport, BenchRow, run_bench, write_csv, write_json
from .dispatch import (
    DispatchCase,
    DispatchSpec,
    build_dispatch,
    constant_surrogate,
    economic_dispatch,
    make_dispatch_instance,
    straddling_surrogate,
)
from .images import load_reference_input, save_image_csv

__all__ = [
    "AdversarialSpec",
    "build_adversarial",
    "make_adversarial_instance",
    "verify_adversarial",
    "BenchConfig",
    "BenchReport",
    "BenchRow",
    "run_bench",
    "write_csv",
    "write_json",
    "DispatchCase",
    "DispatchSpec",
    "build_dispatch",
    "constant_surrogate",
    "economic_dispatch",
    "make_dispatch_instance",
    "straddling_surrogate",
    "load_reference_input",
    "save_image_csv",
]
