# GraphicalMTPOptimizer/src/main.py
"""
Command-line entry point: ``python -m src.main <command> [options]``.

Every command builds the stages it depends on (reusing cached artifacts in
the output directory) and stops after its own stage.
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from src import config
from src.errors import EXIT_CODES, ConfigError
from src.pipeline import Pipeline, RunConfig, compare_methods, evaluate_graph, run_pipeline
from src.storage import locked_output_dir, save_json

COMMANDS = ["simulate", "sample", "cv", "train", "optimize", "refine", "baseline", "evaluate", "compare", "report"]
SEED_ORDER = ["panel", "graphs", "eval_panel", "split", "cobyla_start"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Optimize graphical multiple test procedures.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default="scenario1", help="Run configuration JSON file or preset name.")
    parser.add_argument("--seed", type=int, default=None, help="Base seed replacing the run's seeds.")
    parser.add_argument("--out", default=None, help="Output directory (default runs/<name>).")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--correlation", type=float, default=None, help="Exchangeable correlation override.")
    parser.add_argument("--graph", default=None, help="Graph JSON file (evaluate).")
    parser.add_argument("--n", type=int, default=None, help="Number of p-value vectors (overrides the config).")
    parser.add_argument("--method", default="all", choices=["all", "isres", "cobyla", "brute_force"],
                        help="Baseline to run (baseline).")
    parser.add_argument("--verbose", action="store_true")
    return parser


def load_run(args: argparse.Namespace) -> RunConfig:
    """Resolves the configuration and applies the command-line overrides."""
    run = config.load_run_config(args.config, args.correlation)
    if args.seed is not None:
        run["seeds"].update({name: args.seed + k for k, name in enumerate(SEED_ORDER)})
    if args.threads is not None:
        run["threads"] = args.threads
    if args.n is not None:
        run["n_pvalues"] = args.n
    return RunConfig.from_dict(run, out_dir=args.out)


def run_command(args: argparse.Namespace) -> None:
    cfg = load_run(args)
    if args.command == "report":
        run_pipeline(cfg)
        return
    if args.command == "compare":
        compare_methods(cfg)
        return
    if args.command == "evaluate":
        if args.graph is None:
            raise ConfigError("evaluate needs --graph.")
        seed = cfg.seeds["eval_panel"] if args.seed is None else args.seed
        row = evaluate_graph(args.graph, cfg.scenario, cfg.objective, cfg.n_pvalues, seed, cfg.threads)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        save_json(row, cfg.out_dir / f"evaluate_{row['graph_digest']}.json")
        print(json.dumps(row))
        return

    with locked_output_dir(cfg.out_dir):
        pipe = Pipeline(cfg)
        if args.command == "simulate":
            panel = pipe.panel()
            logging.info(f"Panel of {panel.n} x {panel.m} p-values in {cfg.out_dir / 'panel.bin'}")
        elif args.command == "sample":
            ds = pipe.dataset()
            logging.info(f"Dataset of {ds.B} graphs, objective range [{ds.Y.min():.4f}, {ds.Y.max():.4f}]")
        elif args.command == "cv":
            chosen, _ = pipe.cv()
            logging.info(f"Chosen structure {chosen.label()}")
        elif args.command == "train":
            _, fit, _ = pipe.model()
            logging.info(f"Validation MSE {fit['validation_mse']:.3e}")
        elif args.command == "optimize":
            pipe.optimize()
        elif args.command == "refine":
            pipe.refine()
        elif args.command == "baseline":
            if args.method in ("all", "isres"):
                pipe.isres()
            if args.method in ("all", "cobyla"):
                pipe.cobyla()
            if args.method in ("all", "brute_force"):
                pipe.brute_force()


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    # Configure logging.
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s: %(message)s")
    try:
        run_command(args)
    except Exception as e:
        for error_type, code in EXIT_CODES.items():
            if isinstance(e, error_type):
                logging.error(f"{type(e).__name__}: {e}")
                for note in getattr(e, "__notes__", []):
                    logging.error(note)
                return code
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
