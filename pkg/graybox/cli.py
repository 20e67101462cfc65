"""
Graybox NLP - Command Line
`graybox solve-adversarial | solve-dispatch | bench | gen-net | stats`
"""

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from dotenv import load_dotenv

from .config import get_settings
from .tools.networks import generate_network, network_stats
from .tools.solve import run_bench_config, solve_adversarial_case, solve_dispatch_case

logger = logging.getLogger(__name__)

FORMULATION_CHOICES = ("full", "reduced")


def _print(payload: dict) -> None:
    print(json.dumps(payload, indent=2))


def _cmd_solve_adversarial(args: argparse.Namespace) -> int:
    result = solve_adversarial_case(
        weights=args.weights, ref=args.ref, target=args.target, confidence=args.confidence,
        formulation=args.formulation, tol=args.tol, max_iter=args.max_iter, out=args.out,
    )
    result.pop("x", None)
    _print(result)
    return 0 if result.get("optimal") else 1


def _cmd_solve_dispatch(args: argparse.Namespace) -> int:
    result = solve_dispatch_case(
        weights=args.weights, spec=args.spec, formulation=args.formulation, tol=args.tol,
        max_iter=args.max_iter, out=args.out, eta=args.eta,
    )
    _print(result)
    return 0 if result.get("optimal") else 1


def _cmd_bench(args: argparse.Namespace) -> int:
    result = run_bench_config(
        config=args.config, out_csv=args.out_csv, out_json=args.out_json, workers=args.workers,
    )
    _print(result)
    return 0 if result.get("optimal") else 1


def _cmd_gen_net(args: argparse.Namespace) -> int:
    result = generate_network(
        shape=args.shape, out=args.out, activation=args.activation, final=args.final,
        seed=args.seed,
    )
    _print(result)
    return 0 if result.get("success") else 1


def _cmd_stats(args: argparse.Namespace) -> int:
    result = network_stats(weights=args.weights, formulation=args.formulation)
    _print(result)
    return 0 if result.get("success") else 1


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = argparse.ArgumentParser(
        prog="graybox",
        description="Optimization with neural networks embedded as constraints",
    )
    parser.add_argument("--log-level", default=settings.log_level,
                        help="logging level (default: %(default)s)")
    sub = parser.add_subparsers(dest="command", required=True)

    adv = sub.add_parser("solve-adversarial", help="minimal L1 adversarial perturbation")
    adv.add_argument("--weights", required=True, help="classifier weight file (GBNN or .json)")
    adv.add_argument("--ref", required=True, help="reference image (CSV or IDX)")
    adv.add_argument("--target", required=True, type=int, help="target class index")
    adv.add_argument("--confidence", type=float, default=settings.confidence)
    adv.add_argument("--formulation", choices=FORMULATION_CHOICES, default="reduced")
    adv.add_argument("--tol", type=float, default=settings.tol)
    adv.add_argument("--max-iter", type=int, default=settings.max_iter)
    adv.add_argument("--out", help="result JSON path")
    adv.set_defaults(handler=_cmd_solve_adversarial)

    disp = sub.add_parser("solve-dispatch", help="surrogate-constrained economic dispatch")
    disp.add_argument("--weights", required=True, help="surrogate weight file")
    disp.add_argument("--spec", required=True, help="dispatch case JSON")
    disp.add_argument("--formulation", choices=FORMULATION_CHOICES, default="reduced")
    disp.add_argument("--eta", type=float, default=None,
                      help=f"frequency floor (default: case file or {settings.frequency_floor})")
    disp.add_argument("--tol", type=float, default=settings.tol)
    disp.add_argument("--max-iter", type=int, default=settings.max_iter)
    disp.add_argument("--out", help="result JSON path")
    disp.set_defaults(handler=_cmd_solve_dispatch)

    bench = sub.add_parser("bench", help="formulation comparison sweep")
    bench.add_argument("--config", help="bench config JSON (defaults when omitted)")
    bench.add_argument("--out-csv", help="report CSV path")
    bench.add_argument("--out-json", help="report JSON path")
    bench.add_argument("--workers", type=int, default=None,
                       help=f"parallel cells (default: config or {settings.bench_workers})")
    bench.set_defaults(handler=_cmd_bench)

    gen = sub.add_parser("gen-net", help="write a seeded network")
    gen.add_argument("--shape", required=True, help="comma-separated widths, e.g. 16,32,32,3")
    gen.add_argument("--activation", default="tanh",
                     choices=("linear", "tanh", "sigmoid"))
    gen.add_argument("--final", default=None,
                     choices=("linear", "tanh", "sigmoid", "softmax"))
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output path (.gbnn or .json)")
    gen.set_defaults(handler=_cmd_gen_net)

    stats = sub.add_parser("stats", help="structure of an embedded network")
    stats.add_argument("--weights", required=True)
    stats.add_argument("--formulation", choices=FORMULATION_CHOICES, default="reduced")
    stats.set_defaults(handler=_cmd_stats)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logger.debug("[CLI] %s", args.command)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
