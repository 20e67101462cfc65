"""
Graybox NLP - Solve Tools
Service functions behind the CLI and MCP surfaces. They never raise; every
result is a dict with a "success" flag.
"""

import json
import logging
from pathlib import Path
from typing import Optional

from ..config import get_settings
from ..formulations import Formulation, formulation_stats
from ..ipm import IpmOptions, compute_kkt_residuals, solve
from ..nn import load_weights
from ..problems.adversarial import AdversarialSpec, build_adversarial, verify_adversarial
from ..problems.bench import BenchConfig, run_bench, write_csv, write_json
from ..problems.dispatch import DispatchCase, build_dispatch, surrogate_frequencies
from ..problems.images import load_reference_input

logger = logging.getLogger(__name__)


def _options(tol: Optional[float], max_iter: Optional[int]) -> IpmOptions:
    overrides = {}
    if tol is not None:
        overrides["tol"] = tol
    if max_iter is not None:
        overrides["max_iter"] = max_iter
    return IpmOptions.from_settings(**overrides)


def _write(result: dict, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(json.dumps(result, indent=2), encoding="utf-8")


def solve_adversarial_case(
    weights: str,
    ref: str,
    target: int,
    confidence: Optional[float] = None,
    formulation: str = "reduced",
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    out: Optional[str] = None,
) -> dict:
    """Find the smallest L1 change of the reference image that reaches the target class."""
    try:
        confidence = get_settings().confidence if confidence is None else confidence
        spec = AdversarialSpec(
            classifier=load_weights(weights),
            x_ref=load_reference_input(ref),
            target=target,
            confidence=confidence,
            formulation=Formulation(formulation),
        )
        problem = build_adversarial(spec)
        stats = formulation_stats(problem)
        result = solve(problem, _options(tol, max_iter))
        x = result.x[problem.groups["x"]]
        check = verify_adversarial(spec, x)
        residuals = compute_kkt_residuals(problem, result.x, result.lam, result.z)
        payload = {
            "success": True,
            "status": result.status.value,
            "optimal": result.optimal,
            "formulation": spec.formulation.value,
            "objective": result.objective,
            "iterations": result.iterations,
            "kkt_error": residuals.kkt_error,
            "target": target,
            "target_confidence": check.target_confidence,
            "predicted": check.predicted,
            "l1_distance": check.l1_distance,
            "stats": stats.to_dict(),
            "timing": result.timing.to_dict(),
            "x": x.tolist(),
        }
        _write(payload, out)
        return payload
    except Exception as e:
        logger.error("[CLI] solve-adversarial failed: %s", e)
        return {"success": False, "optimal": False, "error": str(e)}


def solve_dispatch_case(
    weights: str,
    spec: str,
    formulation: str = "reduced",
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    out: Optional[str] = None,
    eta: Optional[float] = None,
) -> dict:
    """
    Cheapest dispatch that keeps every surrogate frequency above the floor.

    The floor is `eta` if given, else the case file's, else GRAYBOX_FREQUENCY_FLOOR.
    """
    try:
        case = DispatchCase.load(spec)
        dispatch = case.to_spec(load_weights(weights), Formulation(formulation), eta=eta)
        problem = build_dispatch(dispatch)
        stats = formulation_stats(problem)
        result = solve(problem, _options(tol, max_iter))
        p = result.x[problem.groups["p"]]
        frequencies = surrogate_frequencies(dispatch, p)
        residuals = compute_kkt_residuals(problem, result.x, result.lam, result.z)
        payload = {
            "success": True,
            "status": result.status.value,
            "optimal": result.optimal,
            "formulation": dispatch.formulation.value,
            "objective": result.objective,
            "iterations": result.iterations,
            "kkt_error": residuals.kkt_error,
            "p": p.tolist(),
            "frequencies": frequencies.tolist(),
            "min_frequency": float(frequencies.min()),
            "eta": dispatch.eta,
            "stats": stats.to_dict(),
            "timing": result.timing.to_dict(),
        }
        _write(payload, out)
        return payload
    except Exception as e:
        logger.error("[CLI] solve-dispatch failed: %s", e)
        return {"success": False, "optimal": False, "error": str(e)}


def run_bench_config(
    config: Optional[str] = None,
    out_csv: Optional[str] = None,
    out_json: Optional[str] = None,
    workers: Optional[int] = None,
    config_json: Optional[str] = None,
) -> dict:
    """Run a bench sweep from a config file (or inline JSON) and write the reports."""
    try:
        if config_json is not None:
            bench = BenchConfig.model_validate_json(config_json)
        elif config is not None:
            bench = BenchConfig.load(config)
        else:
            bench = BenchConfig()
        report = run_bench(bench, workers=workers)
        if out_csv:
            write_csv(report, out_csv)
        if out_json:
            write_json(report, out_json)
        return {
            "success": True,
            "optimal": report.all_optimal,
            "rows": len(report.rows),
            "statuses": [row.status for row in report.rows],
            "iteration_trend": report.iteration_trend(),
            "parity": report.parity(),
            "out_csv": out_csv,
            "out_json": out_json,
        }
    except Exception as e:
        logger.error("[BENCH] sweep failed: %s", e)
        return {"success": False, "optimal": False, "error": str(e)}
