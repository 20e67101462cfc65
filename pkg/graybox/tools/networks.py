"""
Graybox NLP - Network Tools
Generate weight files and report model-structure and formulation statistics.
"""

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

from ..formulations import Formulation, embed, embedding_stats, formulation_stats
from ..model import NlpProblem
from ..nn import load_weights, network_summary, random_network, save_weights

logger = logging.getLogger(__name__)

FORMULATION_NOTES = """\
Full-space ("full"): every layer becomes variables z_l, y_l with
  z_l = W_l y_{l-1} + b_l   (linear block, nnz(W_l) + n_l Jacobian entries)
  y_l = sigma_l(z_l)        (activation block, 2 n_l entries, n_l + n_l^2 for softmax)
  Many small sparse constraints; variable count grows with every hidden layer.

Reduced-space ("reduced"): one block y = NN(x) evaluated as a gray box.
  Jacobian: dense m x n network Jacobian plus identity on y (m n + m entries).
  Hessian: dense lower triangle over the n inputs (n (n + 1) / 2 entries),
  assembled from one Lagrangian-Hessian oracle call per evaluation.
  Problem structure does not depend on depth or hidden widths.
"""


def parse_shape(shape: Union[str, Sequence[int]]) -> list[int]:
    """'16,32,32,3' -> [16, 32, 32, 3]."""
    if isinstance(shape, str):
        return [int(part) for part in shape.split(",") if part.strip()]
    return [int(w) for w in shape]


def generate_network(
    shape: Union[str, Sequence[int]],
    out: str,
    activation: str = "tanh",
    final: Optional[str] = None,
    seed: int = 0,
) -> dict:
    """Write a seeded network to `out` (GBNN, or JSON for .json paths)."""
    try:
        net = random_network(parse_shape(shape), activation, final, seed)
        save_weights(net, out)
        logger.info("[CLI] wrote %s (%d parameters)", out, net.n_params)
        return {
            "success": True,
            "path": str(Path(out)),
            "seed": seed,
            "widths": net.widths,
            "summary": network_summary(net).to_dict(),
        }
    except Exception as e:
        return {"success": False, "error": str(e)}


def network_stats(weights: str, formulation: str = "reduced") -> dict:
    """Structure of a weight file and of its embedding over free input variables."""
    try:
        net = load_weights(weights)
        problem = NlpProblem(name=Path(weights).stem)
        inputs = problem.add_variables("x", net.input_dim)
        handle = embed(problem, net, inputs, Formulation(formulation))
        return {
            "success": True,
            "formulation": Formulation(formulation).value,
            "summary": network_summary(net).to_dict(),
            "stats": formulation_stats(problem).to_dict(),
            "embedding": embedding_stats(problem, handle).to_dict(),
        }
    except Exception as e:
        return {"success": False, "error": str(e)}


def describe_formulations() -> str:
    return FORMULATION_NOTES
