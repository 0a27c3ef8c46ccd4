# GraphicalMTPOptimizer/src/pipeline.py
"""
End-to-end optimization runs.

A run goes through these stages, each persisted under the output directory
and reused when its configuration digest is unchanged:

    panel -> dataset -> cv -> model -> optimize -> refine
    eval_panel, isres, cobyla, brute_force (comparison)

The digest of a stage covers its own settings and the digests of the
stages it consumes, so changing any setting rebuilds everything downstream.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from src import config, report as report_io
from src.errors import ConfigError, GraphError
from src.graph import Graph, validate_graph
from src.graph_space import ParamSpace, build_space
from src.objective import ObjectiveSpec, decide_all, empirical_objective, objective_report_row, standard_error
from src.optimizers.augmented_lagrangian import ALConfig, AugmentedLagrangian
from src.optimizers.base import OptProblem, OptResult, PanelObjective, SurrogateObjective
from src.optimizers.brute_force import BruteForce
from src.optimizers.isres import ISRES, ISRESConfig
from src.optimizers.local_refine import LocalRefiner, RefineConfig
from src.rng import make_rng
from src.storage import (
    digest,
    find_artifact,
    load_frame,
    load_json,
    locked_output_dir,
    record_artifact,
    save_frame,
    save_json,
)
from src.surrogate import Dataset, Network, NetworkSpec, TrainConfig, cross_validate, mse, train
from src.trial_sim import PValuePanel, Scenario, load_panel, sample_pvalues, save_panel

# Stages whose elapsed time makes up the surrogate pipeline's wall-clock time.
FNN_STAGES = ("panel", "dataset", "cv", "model", "optimize", "refine")


@contextmanager
def stage(name: str):
    """Logs a failing stage and tags its exception with the stage name."""
    try:
        yield
    except Exception as e:
        logging.error(f"Stage '{name}' failed: {e}")
        e.add_note(f"stage: {name}")
        raise


@dataclass
class RunConfig:
    """
    Everything one run needs, parsed and validated.

    Built from the dictionaries of ``config.load_run_config``; ``raw`` keeps
    that dictionary for the record.
    """
    name: str
    scenario: Scenario
    space: ParamSpace
    objective: ObjectiveSpec
    n_graphs: int
    n_pvalues: int
    validation_fraction: float
    cv_folds: int
    seeds: Dict[str, int]
    candidates: List[NetworkSpec]
    cv_training: TrainConfig
    final_training: TrainConfig
    al: ALConfig
    refine: RefineConfig
    isres: ISRESConfig
    baselines: Dict[str, bool]
    isres_budget_factor: float
    threads: int
    plot: bool
    out_dir: Path
    raw: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], out_dir: Optional[Union[str, Path]] = None) -> "RunConfig":
        """
        Parses a run configuration dictionary.

        Raises:
            ConfigError: On missing sections or inconsistent dimensions.
        """
        try:
            scenario = Scenario.from_dict(data["scenario"])
            space, _ = build_space(data.get("family") or {"m": scenario.m, "alpha_total": scenario.alpha_one_sided})
            objective = ObjectiveSpec.from_dict(data["objective"])
            optimizers = data.get("optimizers", config.OPTIMIZER_SETTINGS)
            training = data.get("training", config.TRAINING)
            run = cls(
                name=str(data.get("name", "run")),
                scenario=scenario,
                space=space,
                objective=objective,
                n_graphs=int(data["n_graphs"]),
                n_pvalues=int(data["n_pvalues"]),
                validation_fraction=float(data.get("validation_fraction", 0.2)),
                cv_folds=int(data.get("cv_folds", 5)),
                seeds={k: int(v) for k, v in data["seeds"].items()},
                candidates=[NetworkSpec.from_dict(c) for c in data.get("fnn_candidates") or config.default_fnn_candidates(scenario.m)],
                cv_training=TrainConfig(**training["CV"]),
                final_training=TrainConfig(**training["FINAL"]),
                al=ALConfig(**optimizers["AUGMENTED_LAGRANGIAN"]),
                refine=RefineConfig(**optimizers["LOCAL_REFINE"]),
                isres=ISRESConfig(**optimizers["ISRES"]),
                baselines=dict(data.get("baselines", {})),
                isres_budget_factor=float(data.get("isres_budget_factor", 1.5)),
                threads=max(1, int(data.get("threads", 1))),
                plot=bool(data.get("plot", False)),
                out_dir=Path(out_dir or data.get("out_dir") or Path("runs") / str(data.get("name", "run"))),
                raw=data,
            )
        except KeyError as e:
            raise ConfigError(f"Run configuration is missing {e}.")
        except TypeError as e:
            raise ConfigError(f"Run configuration has an unexpected field: {e}")

        if not run.scenario.m == run.space.m == run.objective.m:
            raise ConfigError(
                f"Dimensions disagree: scenario m={run.scenario.m}, family m={run.space.m}, "
                f"{run.objective.m} weights."
            )
        missing = {"panel", "graphs", "eval_panel", "split", "cobyla_start"} - set(run.seeds)
        if missing:
            raise ConfigError(f"Run configuration lacks seeds {sorted(missing)}.")
        if run.n_graphs < 2 or run.n_pvalues < 1:
            raise ConfigError("A run needs at least 2 sampled graphs and 1 p-value vector.")
        if not 0.0 <= run.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must lie in [0, 1), got {run.validation_fraction}.")
        return run


@dataclass
class Report:
    """
    Result of a run: one row per method plus the surrogate's fit.

    Every value in ``rows`` was recomputed from the method's decoded graph
    on the training panel and on the held-out evaluation panel.
    """
    name: str
    rows: List[Dict[str, Any]]
    network: Dict[str, Any]
    cv_table: pd.DataFrame
    dataset_max: float
    fit: Dict[str, float]
    artifacts: Dict[str, str] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records(self.rows)

    def row(self, method: str) -> Dict[str, Any]:
        for row in self.rows:
            if row["method"] == method:
                return row
        raise KeyError(f"No report row for method '{method}'.")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "rows": self.rows,
            "network": self.network,
            "dataset_max": self.dataset_max,
            "fit": self.fit,
            "artifacts": self.artifacts,
        }


class Pipeline:
    """
    Runs and caches the stages of one run configuration.

    Stage methods build their inputs on demand, so any stage can be
    requested directly (the CLI subcommands do exactly that).
    """

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.elapsed: Dict[str, float] = {}
        self._memo: Dict[str, Any] = {}
        self._digests: Dict[str, str] = {}

    # ------------------------------------------------------------------
    # digests
    # ------------------------------------------------------------------
    def stage_digest(self, name: str) -> str:
        if name in self._digests:
            return self._digests[name]
        c = self.cfg
        if name == "panel":
            value = digest(name, c.scenario.to_dict(), c.n_pvalues, c.seeds["panel"])
        elif name == "eval_panel":
            value = digest(name, c.scenario.to_dict(), c.n_pvalues, c.seeds["eval_panel"])
        elif name == "dataset":
            value = digest(name, self.stage_digest("panel"), c.space.to_dict(), c.objective.to_dict(),
                           c.n_graphs, c.seeds["graphs"])
        elif name == "cv":
            value = digest(name, self.stage_digest("dataset"), c.validation_fraction, c.seeds["split"],
                           [s.to_dict() for s in c.candidates], asdict(c.cv_training), c.cv_folds)
        elif name == "model":
            value = digest(name, self.stage_digest("cv"), asdict(c.final_training))
        elif name == "optimize":
            value = digest(name, self.stage_digest("model"), asdict(c.al))
        elif name == "refine":
            value = digest(name, self.stage_digest("optimize"), asdict(c.refine))
        elif name == "isres":
            value = digest(name, self.stage_digest("refine"), asdict(c.isres), c.isres_budget_factor)
        elif name == "cobyla":
            value = digest(name, self.stage_digest("dataset"), asdict(c.refine), c.seeds["cobyla_start"], c.al.multi_start)
        elif name == "brute_force":
            value = digest(name, self.stage_digest("dataset"))
        else:
            raise ConfigError(f"Unknown stage '{name}'.")
        self._digests[name] = value
        return value

    def _cached(self, name: str, build: Callable[[], Any], save: Callable[[Any], Path], load: Callable[[Path], Any]):
        if name in self._memo:
            return self._memo[name]
        stage_digest = self.stage_digest(name)
        entry = find_artifact(self.out, name, stage_digest)
        if entry is not None:
            logging.info(f"Reusing stage '{name}' ({stage_digest}).")
            with stage(name):
                value = load(self.out / entry["path"])
            self.elapsed[name] = float(entry["elapsed_seconds"])
        else:
            logging.info(f"Running stage '{name}' ({stage_digest}).")
            started = time.perf_counter()
            with stage(name):
                value = build()
                elapsed = time.perf_counter() - started
                path = save(value)
            record_artifact(self.out, name, path, stage_digest, name, elapsed)
            self.elapsed[name] = elapsed
            logging.info(f"Stage '{name}' finished in {elapsed:.2f} s.")
        self._memo[name] = value
        return value

    def _save_result(self, name: str):
        return lambda result: save_json(result.to_dict(), self.out / f"{name}.json")

    @staticmethod
    def _load_result(path: Path) -> OptResult:
        return OptResult.from_dict(load_json(path))

    # ------------------------------------------------------------------
    # surrogate pipeline
    # ------------------------------------------------------------------
    def panel(self) -> PValuePanel:
        c = self.cfg
        return self._cached(
            "panel",
            lambda: sample_pvalues(c.scenario, c.n_pvalues, c.seeds["panel"], c.threads),
            lambda p: save_panel(p, self.out / "panel.bin"),
            load_panel,
        )

    def eval_panel(self) -> PValuePanel:
        c = self.cfg
        return self._cached(
            "eval_panel",
            lambda: sample_pvalues(c.scenario, c.n_pvalues, c.seeds["eval_panel"], c.threads),
            lambda p: save_panel(p, self.out / "eval_panel.bin"),
            load_panel,
        )

    def _build_dataset(self) -> Dataset:
        c = self.cfg
        panel = self.panel()
        X = c.space.sample_uniform(c.n_graphs, c.seeds["graphs"])
        score = lambda x: empirical_objective(decide_all(c.space.decode(x), panel, alpha_total=c.space.alpha_total), c.objective)
        if c.threads > 1:
            with ThreadPoolExecutor(max_workers=c.threads) as pool:
                Y = list(pool.map(score, X))
        else:
            Y = [score(x) for x in X]
        logging.info(f"Evaluated {c.n_graphs} sampled graphs on {panel.n} p-value vectors.")
        return Dataset(X, np.array(Y))

    def dataset(self) -> Dataset:
        return self._cached(
            "dataset",
            self._build_dataset,
            lambda ds: save_frame(ds.to_frame(), self.out / "dataset.csv"),
            lambda path: Dataset.from_frame(load_frame(path)),
        )

    def split(self):
        """Seeded (training rows, validation rows) partition of the dataset."""
        c = self.cfg
        B = self.dataset().B
        order = make_rng(c.seeds["split"]).permutation(B)
        n_validation = int(round(c.validation_fraction * B))
        return np.sort(order[n_validation:]), np.sort(order[:n_validation])

    def _build_cv(self):
        c = self.cfg
        train_rows, _ = self.split()
        return cross_validate(self.dataset().subset(train_rows), c.candidates, c.cv_folds, c.cv_training)

    def _save_cv(self, value) -> Path:
        chosen, table = value
        save_frame(table, self.out / "cv_table.csv")
        return save_json({"chosen": chosen.to_dict(), "table": "cv_table.csv"}, self.out / "cv.json")

    def _load_cv(self, path: Path):
        data = load_json(path)
        return NetworkSpec.from_dict(data["chosen"]), load_frame(path.parent / data["table"])

    def cv(self):
        return self._cached("cv", self._build_cv, self._save_cv, self._load_cv)

    def _build_model(self):
        c = self.cfg
        chosen, _ = self.cv()
        ds = self.dataset()
        train_rows, validation_rows = self.split()
        net = train(ds.subset(train_rows), chosen, c.final_training)
        predictions = net.predict(ds.X)
        part = np.full(ds.B, "training", dtype=object)
        part[validation_rows] = "validation"
        residuals = pd.DataFrame({
            "row": np.arange(ds.B),
            "part": part,
            "y": ds.Y,
            "prediction": predictions,
            "residual": predictions - ds.Y,
        })
        fit = {
            "train_mse": mse(net, ds.subset(train_rows)),
            "validation_mse": mse(net, ds.subset(validation_rows)) if validation_rows.size else float("nan"),
        }
        logging.info(f"Surrogate {chosen.label()}: training MSE {fit['train_mse']:.3e}, "
                     f"validation MSE {fit['validation_mse']:.3e}")
        return net, fit, residuals

    def _save_model(self, value) -> Path:
        net, fit, residuals = value
        save_frame(residuals, self.out / "residuals.csv")
        save_json(fit, self.out / "model_fit.json")
        return net.save(self.out / "model.json")

    def _load_model(self, path: Path):
        return Network.load(path), load_json(path.parent / "model_fit.json"), load_frame(path.parent / "residuals.csv")

    def model(self):
        """(network, fit metrics, residual table)."""
        return self._cached("model", self._build_model, self._save_model, self._load_model)

    def optimize(self) -> OptResult:
        c = self.cfg
        net, _, _ = self.model()
        problem = OptProblem.for_space(SurrogateObjective(net), c.space)
        return self._cached(
            "optimize",
            lambda: AugmentedLagrangian(settings=c.al).optimize(problem, threads=c.threads),
            self._save_result("optimize"),
            self._load_result,
        )

    def true_problem(self) -> OptProblem:
        c = self.cfg
        return OptProblem.for_space(PanelObjective(c.space, self.panel(), c.objective, c.threads), c.space)

    def refine(self) -> OptResult:
        c = self.cfg
        start = self.optimize()
        return self._cached(
            "refine",
            lambda: LocalRefiner(name="fnn", settings=c.refine).optimize(self.true_problem(), start.x_star),
            self._save_result("refine"),
            self._load_result,
        )

    def fnn_seconds(self) -> float:
        self.refine()
        return float(sum(self.elapsed[name] for name in FNN_STAGES))

    # ------------------------------------------------------------------
    # baselines
    # ------------------------------------------------------------------
    def isres(self) -> OptResult:
        c = self.cfg
        budget = c.isres_budget_factor * self.fnn_seconds() * config.ureg.second
        return self._cached(
            "isres",
            lambda: ISRES(settings=c.isres).optimize(self.true_problem(), budget, threads=c.threads),
            self._save_result("isres"),
            self._load_result,
        )

    def cobyla(self) -> OptResult:
        c = self.cfg
        # as many random starts as the surrogate ascent gets
        starts = c.space.sample_uniform(c.al.multi_start, c.seeds["cobyla_start"])
        return self._cached(
            "cobyla",
            lambda: LocalRefiner(name="cobyla", settings=c.refine).optimize(
                self.true_problem(), starts=starts, threads=c.threads
            ),
            self._save_result("cobyla"),
            self._load_result,
        )

    def brute_force(self) -> OptResult:
        return self._cached(
            "brute_force",
            lambda: BruteForce().optimize(dataset=self.dataset(), space=self.cfg.space),
            self._save_result("brute_force"),
            self._load_result,
        )

    # ------------------------------------------------------------------
    # reporting
    # ------------------------------------------------------------------
    def method_row(self, method: str, result: OptResult, elapsed_seconds: float) -> Dict[str, Any]:
        """Report row with both objective values recomputed from the decoded graph."""
        c = self.cfg
        graph = c.space.decode(result.x_star)
        train_panel, eval_panel = self.panel(), self.eval_panel()
        train_value = empirical_objective(decide_all(graph, train_panel, c.threads, c.space.alpha_total), c.objective)
        eval_value = empirical_objective(decide_all(graph, eval_panel, c.threads, c.space.alpha_total), c.objective)
        elapsed = elapsed_seconds * config.ureg.second
        return {
            "method": method,
            "train_value": train_value,
            "train_se": standard_error(train_value, train_panel.n),
            "eval_value": eval_value,
            "eval_se": standard_error(eval_value, eval_panel.n),
            "optimizer_value": result.value,
            "elapsed_seconds": elapsed.to("second").magnitude,
            "elapsed_minutes": elapsed.to("minute").magnitude,
            "converged": result.converged,
            "evaluations": result.evaluations,
            "graph_digest": graph.digest(),
            "graph": graph.to_json(),
        }

    def baseline_results(self) -> Dict[str, OptResult]:
        toggles = self.cfg.baselines
        results = {}
        if toggles.get("isres", True):
            results["isres"] = self.isres()
        if toggles.get("cobyla", True):
            results["cobyla"] = self.cobyla()
        if toggles.get("brute_force", True):
            results["brute_force"] = self.brute_force()
        return results

    def report(self, baselines: bool = True) -> Report:
        c = self.cfg
        refined = self.refine()
        rows = [self.method_row("fnn", refined, self.fnn_seconds())]
        if baselines:
            for method, result in self.baseline_results().items():
                if method == "brute_force":
                    seconds = self.elapsed["panel"] + self.elapsed["dataset"]
                else:
                    seconds = self.elapsed[method]
                rows.append(self.method_row(method, result, seconds))

        net, fit, _ = self.model()
        _, cv_table = self.cv()
        report = Report(
            name=c.name,
            rows=rows,
            network=net.spec.to_dict(),
            cv_table=cv_table,
            dataset_max=float(self.dataset().Y.max()),
            fit={k: float(v) for k, v in fit.items()},
        )
        report.artifacts = report_io.write_report(report, self.out)
        return report


def run_pipeline(cfg: RunConfig) -> Report:
    """
    Runs every stage (resuming from cached artifacts) and writes the report.

    Baselines follow ``cfg.baselines``.
    """
    with locked_output_dir(cfg.out_dir):
        return Pipeline(cfg).report(baselines=any(cfg.baselines.values()))


def compare_methods(cfg: RunConfig):
    """
    Runs the surrogate pipeline and the enabled baselines and writes comparison files.

    Returns:
        Tuple[Report, pd.DataFrame]: The report and the long-format plot data.
    """
    with locked_output_dir(cfg.out_dir):
        pipe = Pipeline(cfg)
        report = pipe.report(baselines=True)
        _, _, residuals = pipe.model()
        plot_data = report_io.comparison_plot_data(report, residuals)
        report.artifacts.update(report_io.write_comparison(report, plot_data, pipe.out, plot=cfg.plot))
    return report, plot_data


def evaluate_graph(
    graph: Union[Graph, str, Path],
    scenario: Scenario,
    spec: ObjectiveSpec,
    n: int,
    seed: int,
    threads: int = 1,
) -> Dict[str, Any]:
    """
    Monte Carlo objective of one graph with its standard error.

    Args:
        graph (Graph | str | Path): The graph or a graph JSON file.
        scenario (Scenario): Test-statistic model; its m must match the graph.
        spec (ObjectiveSpec): Objective weights and gating.
        n (int): Number of p-value vectors.
        seed (int): Panel seed.
        threads (int): Worker threads.

    Returns:
        Dict[str, Any]: ``objective_report_row`` fields.
    """
    if not isinstance(graph, Graph):
        graph = Graph.from_dict(load_json(graph))
    if graph.m != scenario.m or spec.m != scenario.m:
        raise GraphError(f"Graph ({graph.m}), scenario ({scenario.m}) and weights ({spec.m}) disagree on m.")
    report = validate_graph(graph, scenario.alpha_one_sided)
    if not report.feasible:
        raise GraphError(f"Graph is infeasible: {list(report.violations)}")
    panel = sample_pvalues(scenario, n, seed, threads)
    value = empirical_objective(decide_all(graph, panel, threads, scenario.alpha_one_sided), spec)
    return objective_report_row(graph, panel, spec, value, scenario.alpha_one_sided)
