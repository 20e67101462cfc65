"""
Graybox NLP - MCP Server
Exposes network, solve and bench tools via the Model Context Protocol using FastMCP.
"""

import logging
from typing import Optional

from fastmcp import FastMCP

from .config import get_settings
from .tools.networks import describe_formulations, generate_network, network_stats
from .tools.solve import run_bench_config, solve_adversarial_case, solve_dispatch_case

logger = logging.getLogger(__name__)


# Initialize MCP server
mcp = FastMCP(
    name="graybox-nlp",
    instructions="Solve NLPs with neural networks embedded as constraints and compare "
                 "full-space against reduced-space formulations",
)


# ============================================================================
# MCP Tools
# ============================================================================

@mcp.tool()
def mcp_network_stats(weights: str, formulation: str = "reduced") -> dict:
    """
    Model structure of a weight file plus the variable, constraint and
    nonzero counts of its full-space or reduced-space embedding.
    """
    return network_stats(weights=weights, formulation=formulation)


@mcp.tool()
def mcp_generate_network(
    shape: str,
    out: str,
    activation: str = "tanh",
    final: Optional[str] = None,
    seed: int = 0,
) -> dict:
    """Write a seeded network with widths like '16,32,32,3' to a GBNN or JSON file."""
    return generate_network(shape=shape, out=out, activation=activation, final=final, seed=seed)


@mcp.tool()
def mcp_solve_adversarial(
    weights: str,
    ref: str,
    target: int,
    confidence: Optional[float] = None,
    formulation: str = "reduced",
    tol: Optional[float] = None,
) -> dict:
    """Smallest L1 perturbation of a reference image classified as `target`."""
    return solve_adversarial_case(
        weights=weights, ref=ref, target=target, confidence=confidence,
        formulation=formulation, tol=tol,
    )


@mcp.tool()
def mcp_solve_dispatch(
    weights: str,
    spec: str,
    formulation: str = "reduced",
    tol: Optional[float] = None,
    eta: Optional[float] = None,
) -> dict:
    """Economic dispatch with a frequency-surrogate network kept above its floor."""
    return solve_dispatch_case(weights=weights, spec=spec, formulation=formulation, tol=tol,
                               eta=eta)


@mcp.tool()
def mcp_run_bench(
    config: Optional[str] = None,
    config_json: Optional[str] = None,
    out_csv: Optional[str] = None,
    out_json: Optional[str] = None,
) -> dict:
    """Run a formulation-comparison sweep from a config path or inline JSON."""
    return run_bench_config(config=config, config_json=config_json, out_csv=out_csv,
                            out_json=out_json)


# ============================================================================
# MCP Resources
# ============================================================================

@mcp.resource("graybox://formulations")
def get_formulations() -> str:
    """How the two network encodings are laid out."""
    return describe_formulations()


# ============================================================================
# Entry Point
# ============================================================================

def run_server():
    """Run the MCP server."""
    import asyncio
    logging.basicConfig(level=get_settings().log_level_value)
    logger.info("[MCP] starting graybox-nlp server")
    asyncio.run(mcp.run_async())


if __name__ == "__main__":
    run_server()
