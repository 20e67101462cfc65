"""
Graybox NLP - Formulation Benchmark
Sweep problem families x network sizes x formulations, solve every cell and
emit structure, iteration and timing-split tables as CSV and JSON.
"""

import csv
import json
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from ..config import get_settings
from ..errors import ConfigError
from ..formulations import Formulation, formulation_stats
from ..ipm import IpmOptions, IpmResult, compute_kkt_residuals, solve
from ..model import NlpProblem
from ..nn import ActivationKind, NeuralNet, load_weights
from .adversarial import build_adversarial, make_adversarial_instance
from .dispatch import build_dispatch, make_dispatch_instance

logger = logging.getLogger(__name__)

ProblemFamily = Literal["adversarial", "dispatch"]


# ============================================================================
# Configuration
# ============================================================================

class NetConfig(BaseModel):
    """One network size: hidden widths for seeded nets, or a weight file."""
    hidden: list[int] = Field(default_factory=lambda: [16])
    activation: ActivationKind = ActivationKind.TANH
    weights: Optional[str] = None


class AdversarialFamilyConfig(BaseModel):
    image_side: int = 8
    n_classes: int = 10
    confidence: float = 0.6
    instances: int = 1


class DispatchFamilyConfig(BaseModel):
    n_gen: int = 32
    n_demand: int = 32
    n_bus: int = 8
    eta: Optional[float] = None
    instances: int = 1


def _default_nets() -> list[NetConfig]:
    return [
        NetConfig(hidden=[32, 32]),
        NetConfig(hidden=[128, 128]),
        NetConfig(hidden=[384, 384]),
    ]


class BenchConfig(BaseModel):
    """Bench sweep definition, loaded from JSON."""
    families: list[ProblemFamily] = Field(default_factory=lambda: ["adversarial", "dispatch"])
    nets: list[NetConfig] = Field(default_factory=_default_nets)
    formulations: list[Formulation] = Field(
        default_factory=lambda: [Formulation.FULL_SPACE, Formulation.REDUCED_SPACE]
    )
    adversarial: AdversarialFamilyConfig = Field(default_factory=AdversarialFamilyConfig)
    dispatch: DispatchFamilyConfig = Field(default_factory=DispatchFamilyConfig)
    seed: int = 0
    platform: Literal["cpu"] = "cpu"
    tol: Optional[float] = None
    max_iter: Optional[int] = None
    time_limit_s: Optional[float] = None
    workers: Optional[int] = None

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BenchConfig":
        try:
            return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except ValidationError as exc:
            raise ConfigError(f"{path}: invalid bench config: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read bench config {path}: {exc}") from exc

    def ipm_options(self) -> IpmOptions:
        overrides = {}
        if self.tol is not None:
            overrides["tol"] = self.tol
        if self.max_iter is not None:
            overrides["max_iter"] = self.max_iter
        if self.time_limit_s is not None:
            overrides["time_limit_s"] = self.time_limit_s
        return IpmOptions.from_settings(**overrides)


# ============================================================================
# Report
# ============================================================================

@dataclass
class BenchRow:
    """One solved cell. Columns after hess_nnz are extras appended to the table."""
    problem: str
    formulation: str
    nn_params: int
    solve_time_s: float
    iterations: int
    time_per_iter_s: float
    objective: float
    pct_function: float
    pct_jacobian: float
    pct_hessian: float
    pct_solver: float
    n_var: int
    n_con: int
    jac_nnz: int
    hess_nnz: int
    status: str
    seed: int
    instance: int
    kkt_error: float
    max_residual: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @property
    def dominant(self) -> str:
        shares = {
            "function": self.pct_function,
            "jacobian": self.pct_jacobian,
            "hessian": self.pct_hessian,
            "solver": self.pct_solver,
        }
        return max(shares, key=shares.get)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["dominant"] = self.dominant
        return data


# Columns that hold wall-clock measurements.
TIMING_COLUMNS = (
    "solve_time_s", "time_per_iter_s", "pct_function", "pct_jacobian", "pct_hessian", "pct_solver",
)


@dataclass
class BenchReport:
    rows: list[BenchRow]
    config: BenchConfig

    @property
    def all_optimal(self) -> bool:
        return all(row.status == "Optimal" for row in self.rows)

    def _pairs(self) -> dict[tuple, dict[str, BenchRow]]:
        pairs: dict[tuple, dict[str, BenchRow]] = {}
        for row in self.rows:
            key = (row.problem, row.instance, row.seed)
            pairs.setdefault(key, {})[row.formulation] = row
        return pairs

    def iteration_trend(self) -> list[dict]:
        """Per instance: does the reduced-space solve need no more iterations than full-space?"""
        trend = []
        for (problem, instance, seed), cells in self._pairs().items():
            full = cells.get(Formulation.FULL_SPACE.value)
            reduced = cells.get(Formulation.REDUCED_SPACE.value)
            if full is None or reduced is None:
                continue
            trend.append({
                "problem": problem,
                "instance": instance,
                "seed": seed,
                "full_iterations": full.iterations,
                "reduced_iterations": reduced.iterations,
                "reduced_le_full": reduced.iterations <= full.iterations,
            })
        return trend

    def parity(self) -> list[dict]:
        """Relative objective difference between formulations per instance."""
        out = []
        for (problem, instance, seed), cells in self._pairs().items():
            full = cells.get(Formulation.FULL_SPACE.value)
            reduced = cells.get(Formulation.REDUCED_SPACE.value)
            if full is None or reduced is None:
                continue
            scale = max(abs(full.objective), abs(reduced.objective), 1e-8)
            diff = abs(full.objective - reduced.objective) / scale
            out.append({
                "problem": problem,
                "instance": instance,
                "seed": seed,
                "relative_difference": diff if math.isfinite(diff) else None,
                "agree": bool(math.isfinite(diff) and diff <= 1e-4),
            })
        return out

    def to_dict(self) -> dict:
        return {
            "config": self.config.model_dump(mode="json"),
            "columns": BenchRow.columns(),
            "timing_columns": list(TIMING_COLUMNS),
            "rows": [row.to_dict() for row in self.rows],
            "iteration_trend": self.iteration_trend(),
            "parity": self.parity(),
        }


def write_csv(report: BenchReport, path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=BenchRow.columns())
        writer.writeheader()
        for row in report.rows:
            writer.writerow(asdict(row))


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_json_safe(v) for v in value]
    return value


def write_json(report: BenchReport, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(_json_safe(report.to_dict()), indent=2), encoding="utf-8")


# ============================================================================
# Sweep
# ============================================================================

@dataclass(frozen=True)
class BenchCell:
    index: int
    family: str
    net_index: int
    instance: int
    seed: int
    formulation: Formulation


def _cells(config: BenchConfig) -> list[BenchCell]:
    cells = []
    for family in config.families:
        family_cfg = config.adversarial if family == "adversarial" else config.dispatch
        for net_index in range(len(config.nets)):
            for instance in range(family_cfg.instances):
                seed = config.seed + 1000 * net_index + instance
                for formulation in config.formulations:
                    cells.append(BenchCell(len(cells), family, net_index, instance, seed,
                                           Formulation(formulation)))
    return cells


def _build(config: BenchConfig, cell: BenchCell) -> tuple[NlpProblem, NeuralNet]:
    net_cfg = config.nets[cell.net_index]
    loaded = load_weights(net_cfg.weights) if net_cfg.weights else None
    label = f"{cell.family}-{cell.net_index}-{cell.instance}"
    if cell.family == "adversarial":
        fam = config.adversarial
        inst = make_adversarial_instance(
            side=fam.image_side, hidden=net_cfg.hidden, n_classes=fam.n_classes, seed=cell.seed,
            activation=net_cfg.activation, classifier=loaded,
        )
        spec = inst.spec(cell.formulation, fam.confidence)
        return build_adversarial(spec, name=label), inst.classifier
    fam = config.dispatch
    inst = make_dispatch_instance(
        n_gen=fam.n_gen, n_demand=fam.n_demand, hidden=net_cfg.hidden, n_bus=fam.n_bus,
        seed=cell.seed, eta=fam.eta, surrogate=loaded,
    )
    return build_dispatch(inst.spec(cell.formulation), name=label), inst.surrogate


def _max_residual(problem: NlpProblem, result: IpmResult) -> float:
    g = problem.constraint_values(result.x)
    lower = problem.lower_bounds()
    bounded = np.isfinite(lower)
    violation = np.maximum(lower[bounded] - result.x[bounded], 0.0)
    return float(max(np.max(np.abs(g), initial=0.0), np.max(violation, initial=0.0)))


def run_cell(config: BenchConfig, cell: BenchCell, opts: IpmOptions) -> BenchRow:
    """Build, solve and verify one cell; failures become a status, never an exception."""
    nn_params = 0
    stats = None
    try:
        problem, net = _build(config, cell)
        nn_params = net.n_params
        stats = formulation_stats(problem)
        result = solve(problem, opts)
        if np.all(np.isfinite(result.x)):
            kkt = compute_kkt_residuals(problem, result.x, result.lam, result.z).kkt_error
            residual = _max_residual(problem, result)
        else:
            kkt = residual = math.nan
    except Exception as exc:
        logger.warning("[BENCH] cell %d (%s/%s) failed: %s", cell.index, cell.family,
                       cell.formulation.value, exc)
        return BenchRow(
            problem=cell.family, formulation=cell.formulation.value, nn_params=nn_params,
            solve_time_s=math.nan, iterations=0, time_per_iter_s=math.nan, objective=math.nan,
            pct_function=math.nan, pct_jacobian=math.nan, pct_hessian=math.nan,
            pct_solver=math.nan,
            n_var=stats.n_var if stats else 0, n_con=stats.n_con if stats else 0,
            jac_nnz=stats.jac_nnz if stats else 0, hess_nnz=stats.hess_nnz if stats else 0,
            status=f"Error({type(exc).__name__})", seed=cell.seed, instance=cell.instance,
            kkt_error=math.nan, max_residual=math.nan,
        )

    shares = result.timing.percentages()
    return BenchRow(
        problem=cell.family,
        formulation=cell.formulation.value,
        nn_params=nn_params,
        solve_time_s=result.timing.total_s,
        iterations=result.iterations,
        time_per_iter_s=result.time_per_iter_s,
        objective=result.objective,
        pct_function=shares["function"],
        pct_jacobian=shares["jacobian"],
        pct_hessian=shares["hessian"],
        pct_solver=shares["solver"],
        n_var=stats.n_var,
        n_con=stats.n_con,
        jac_nnz=stats.jac_nnz,
        hess_nnz=stats.hess_nnz,
        status=result.status.value,
        seed=cell.seed,
        instance=cell.instance,
        kkt_error=kkt,
        max_residual=residual,
    )


def run_bench(config: BenchConfig, workers: Optional[int] = None) -> BenchReport:
    """
    Solve every (family, net, instance, formulation) cell.

    Cells may run on a thread pool; rows are collected under a lock and
    returned in cell order.
    """
    if config.platform != "cpu":
        raise ConfigError(f"unsupported platform '{config.platform}'")
    workers = workers or config.workers or get_settings().bench_workers
    opts = config.ipm_options()
    cells = _cells(config)
    collected: dict[int, BenchRow] = {}
    lock = threading.Lock()
    started = time.perf_counter()

    def work(cell: BenchCell) -> None:
        row = run_cell(config, cell, opts)
        with lock:
            collected[cell.index] = row
        logger.info("[BENCH] %s net=%d inst=%d %s: %s, %d iterations, f=%.6g, %.2fs",
                    cell.family, cell.net_index, cell.instance, cell.formulation.value,
                    row.status, row.iterations, row.objective, row.solve_time_s)

    logger.info("[BENCH] %d cells, %d worker(s)", len(cells), workers)
    if workers <= 1:
        for cell in cells:
            work(cell)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, cells))

    report = BenchReport([collected[i] for i in sorted(collected)], config)
    logger.info("[BENCH] done in %.1fs; %d/%d optimal", time.perf_counter() - started,
                sum(r.status == "Optimal" for r in report.rows), len(report.rows))
    return report
