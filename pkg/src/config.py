# GraphicalMTPOptimizer/src/config.py
import copy
import json
import os
from typing import Any, Dict, List, Optional

import pint

from src.errors import ConfigError

# Shared Pint unit registry.
ureg = pint.UnitRegistry()

# ----------------------------------------------------------------------
# GLOBAL LEVELS AND TOLERANCES
# ----------------------------------------------------------------------
ALPHA_TOTAL = 0.025

TOLERANCES = {
    "graph_feasibility": 1e-12,    # absolute, all graph constraint checks
    "decode": 1e-9,                # group-sum slack accepted when decoding a free vector
    "encode": 1e-9,                # fixed / remainder mismatch accepted when encoding a graph
    "degenerate_denominator": 1e-12,
    "weights_sum": 1e-12,
    "optimizer_feasibility": 1e-9,
    "cholesky": 1e-10,
}

# ----------------------------------------------------------------------
# SURROGATE NETWORK TRAINING (RMSProp)
# ----------------------------------------------------------------------
TRAINING = {
    "CV": {
        "epochs": 1000,
        "batch_size": 128,
        "learning_rate": 1e-3,
        "decay_rho": 0.9,
        "epsilon_delta": 1e-8,
        "seed": 5,
        "log_every": 100,
    },
    "FINAL": {
        "epochs": 10000,
        "batch_size": 128,
        "learning_rate": 1e-3,
        "decay_rho": 0.9,
        "epsilon_delta": 1e-8,
        "seed": 5,
        "log_every": 1000,
    },
}

# Interval the training targets are mapped onto.
TARGET_RANGE = (0.3, 0.7)


def default_fnn_candidates(m: int) -> List[Dict[str, Any]]:
    """
    Candidate structures for cross-validation: 2, 3 and 4 hidden layers at dropout 0 and 0.3.

    Width grows with the number of endpoints (40 nodes up to three endpoints,
    60 up to six, 140 beyond).
    """
    width = 40 if m <= 3 else 60 if m <= 6 else 140
    return [
        {"hidden_widths": [width] * depth, "dropout_rate": rate}
        for rate in (0.0, 0.3)
        for depth in (2, 3, 4)
    ]


# ----------------------------------------------------------------------
# OPTIMIZERS
# ----------------------------------------------------------------------
OPTIMIZER_SETTINGS = {
    "AUGMENTED_LAGRANGIAN": {
        "xtol_rel": 1e-5,
        "max_iterations": 100000,
        "initial_penalty": 0.1,      # mu; the penalty weight is 1/mu
        "penalty_growth": 10.0,      # mu is divided by this when feasibility stalls
        "min_penalty": 1e-8,
        "multi_start": 16,
        "seed": 6,
        "max_outer": 60,
        "max_inner": 5000,
        "inner_gtol": 1e-9,
    },
    "LOCAL_REFINE": {
        "xtol_rel": 1e-4,
        "max_evaluations": 10000,
        "initial_radius": 0.05,
    },
    "ISRES": {
        "population": None,          # None -> min(20 * d, 400)
        "parent_ratio": 7,           # mu = population // parent_ratio
        "p_f": 0.45,
        "gamma": 0.85,
        "smoothing": 0.2,
        "xtol_rel": 1e-4,
        "max_generations": None,
        "seed": 7,
    },
}

# ----------------------------------------------------------------------
# SCENARIOS (marginal powers at one-sided alpha = 0.025)
# ----------------------------------------------------------------------
SCENARIOS = {
    "scenario1": {"marginal_powers": [0.80, 0.80, 0.80], "correlation": "exchangeable:0.0"},
    "scenario2": {"marginal_powers": [0.90, 0.90, 0.95], "correlation": "exchangeable:0.0"},
    "scenario3": {"marginal_powers": [0.90] * 6, "correlation": "exchangeable:0.5"},
    "scenario4": {
        "marginal_powers": [0.80, 0.80, 0.90, 0.90, 0.95, 0.95],
        "correlation": "exchangeable:0.5",
    },
    "motivating": {"marginal_powers": [0.95, 0.88, 0.92, 0.85], "correlation": "exchangeable:0.0"},
    "case_study": {
        "marginal_powers": [0.98, 0.96, 0.96, 0.92, 0.92, 0.88, 0.88, 0.84, 0.84, 0.80, 0.80],
        "correlation": {"primary_secondary": 0.3, "secondary": 0.5},
    },
}


def primary_secondary_correlation(m: int, rho_ps: float, rho_ss: float) -> List[List[float]]:
    """
    Correlation matrix with hypothesis 0 as the primary endpoint.

    Args:
        m (int): Number of endpoints (primary plus m - 1 secondaries).
        rho_ps (float): Correlation between the primary and each secondary.
        rho_ss (float): Correlation between any two secondaries.

    Returns:
        List[List[float]]: The m x m matrix as nested lists (JSON friendly).
    """
    matrix = [[rho_ss] * m for _ in range(m)]
    for i in range(m):
        matrix[i][i] = 1.0
        if i > 0:
            matrix[0][i] = rho_ps
            matrix[i][0] = rho_ps
    return matrix


def _motivating_family() -> Dict[str, Any]:
    # Only alpha_0 and alpha_2 carry level; free vector is (a0, T01, T12, T20, T30).
    return {
        "m": 4,
        "alpha_total": ALPHA_TOTAL,
        "alpha": ["free", "fixed:0", "remainder", "fixed:0"],
        "rows": [
            {"free": [1], "remainder": 2},
            {"free": [2], "remainder": 3},
            {"free": [0], "remainder": 3},
            {"free": [0], "remainder": 1},
        ],
    }


def _case_study_family(m: int = 11) -> Dict[str, Any]:
    # Primary tested at full alpha; no transition feeds back into the primary.
    rows = [{"free": list(range(1, m - 1)), "remainder": m - 1}]
    for i in range(1, m):
        targets = [j for j in range(1, m) if j != i]
        rows.append({"free": targets[:-1], "remainder": targets[-1]})
    return {
        "m": m,
        "alpha_total": ALPHA_TOTAL,
        "alpha": [f"fixed:{ALPHA_TOTAL}"] + ["fixed:0"] * (m - 1),
        "rows": rows,
    }


# ----------------------------------------------------------------------
# RUN DEFAULTS
# ----------------------------------------------------------------------
RUN_DEFAULTS = {
    "n_graphs": 2000,
    "n_pvalues": 100000,
    "validation_fraction": 0.2,
    "cv_folds": 5,
    "isres_budget_factor": 1.5,
    "threads": 1,
    "seeds": {
        "panel": 1,
        "graphs": 2,
        "eval_panel": 3,
        "split": 4,
        "cobyla_start": 8,
    },
    "baselines": {"isres": True, "cobyla": True, "brute_force": True},
    "plot": False,
}


def preset_run_config(name: str, correlation: Optional[float] = None) -> Dict[str, Any]:
    """
    Builds a complete run configuration dictionary for a named study.

    Args:
        name (str): One of the keys of ``SCENARIOS``.
        correlation (float, optional): Exchangeable correlation overriding the preset's.

    Returns:
        Dict[str, Any]: A run configuration accepted by ``RunConfig.from_dict``.

    Raises:
        ConfigError: If the preset name is unknown.
    """
    if name not in SCENARIOS:
        raise ConfigError(f"Unknown preset '{name}'. Known presets: {sorted(SCENARIOS)}.")
    scenario = copy.deepcopy(SCENARIOS[name])
    m = len(scenario["marginal_powers"])
    scenario["m"] = m
    scenario["alpha"] = ALPHA_TOTAL
    if name == "case_study":
        rho = scenario.pop("correlation")
        scenario["correlation"] = primary_secondary_correlation(m, rho["primary_secondary"], rho["secondary"])
    if correlation is not None:
        scenario["correlation"] = f"exchangeable:{correlation}"

    if name == "motivating":
        family = _motivating_family()
        objective = {"kind": "plain", "weights": [0.4, 0.2, 0.3, 0.1]}
    elif name == "case_study":
        family = _case_study_family(m)
        objective = {"kind": "gated", "gate_index": 0, "weights": [0.0] + [1.0 / (m - 1)] * (m - 1)}
    else:
        family = {"m": m, "alpha_total": ALPHA_TOTAL}
        objective = {"kind": "plain", "weights": [1.0 / m] * m}

    rho_label = scenario["correlation"] if isinstance(scenario["correlation"], str) else "matrix"
    run = copy.deepcopy(RUN_DEFAULTS)
    run.update({
        "name": f"{name}-{rho_label.replace('exchangeable:', 'rho')}",
        "scenario": scenario,
        "family": family,
        "objective": objective,
        "fnn_candidates": default_fnn_candidates(m),
        "training": copy.deepcopy(TRAINING),
        "optimizers": copy.deepcopy(OPTIMIZER_SETTINGS),
    })
    return run


def load_run_config(source: str, correlation: Optional[float] = None) -> Dict[str, Any]:
    """
    Loads a run configuration from a JSON file or a preset name.

    Keys missing from a JSON file are filled in from ``RUN_DEFAULTS``,
    ``TRAINING`` and ``OPTIMIZER_SETTINGS``.

    Args:
        source (str): Path to a JSON file, or a preset name such as ``"scenario1"``.
        correlation (float, optional): Exchangeable correlation override.

    Returns:
        Dict[str, Any]: The merged configuration dictionary.

    Raises:
        ConfigError: If the file cannot be read or parsed.
    """
    if not os.path.exists(source):
        return preset_run_config(source, correlation)
    try:
        with open(source, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except Exception as e:
        raise ConfigError(f"Error loading run configuration from {source}: {e}")

    run = copy.deepcopy(RUN_DEFAULTS)
    run["training"] = copy.deepcopy(TRAINING)
    run["optimizers"] = copy.deepcopy(OPTIMIZER_SETTINGS)
    for key, value in raw.items():
        if key in ("training", "optimizers", "seeds", "baselines") and isinstance(value, dict):
            for sub_key, sub_value in value.items():
                if isinstance(sub_value, dict) and isinstance(run[key].get(sub_key), dict):
                    run[key][sub_key].update(sub_value)
                else:
                    run[key][sub_key] = sub_value
        else:
            run[key] = value
    if correlation is not None:
        run["scenario"]["correlation"] = f"exchangeable:{correlation}"
    run.setdefault("name", os.path.splitext(os.path.basename(source))[0])
    if "fnn_candidates" not in run:
        run["fnn_candidates"] = default_fnn_candidates(int(run["scenario"]["m"]))
    return run
