# GraphicalMTPOptimizer/src/surrogate.py
"""
Feedforward network surrogate of the objective.

A small sigmoid network written directly in numpy: every layer, including
the scalar output layer, computes ``sigmoid(h W + b)``. Inputs are
standardized with training statistics and the targets are rescaled so that
their range maps onto ``config.TARGET_RANGE``; ``forward`` undoes that
rescaling, so predictions come back in objective units.
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit

from src import config
from src.errors import ConfigError, GraphError, NumericalError
from src.rng import make_rng

# Columns with a smaller spread are treated as constant (unit sd).
MIN_SD = 1e-12


@dataclass(frozen=True)
class NetworkSpec:
    """Structure of a network: hidden layer widths and the dropout rate on hidden activations."""
    hidden_widths: Tuple[int, ...]
    dropout_rate: float = 0.0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.hidden_widths)
        if not widths or min(widths) < 1:
            raise ConfigError(f"A network needs at least one hidden layer of width >= 1, got {widths}.")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"Dropout rate must lie in [0, 1), got {self.dropout_rate}.")
        object.__setattr__(self, "hidden_widths", widths)

    def layer_sizes(self, d: int) -> List[int]:
        return [d, *self.hidden_widths, 1]

    def n_parameters(self, d: int) -> int:
        sizes = self.layer_sizes(d)
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in zip(sizes[:-1], sizes[1:]))

    def label(self) -> str:
        return f"{'x'.join(str(w) for w in self.hidden_widths)}/dropout{self.dropout_rate:g}"

    def to_dict(self) -> Dict[str, Any]:
        return {"hidden_widths": list(self.hidden_widths), "dropout_rate": self.dropout_rate}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkSpec":
        return cls(tuple(data["hidden_widths"]), float(data.get("dropout_rate", 0.0)))


@dataclass(frozen=True)
class TrainConfig:
    """RMSProp settings; defaults are ``config.TRAINING["FINAL"]``."""
    epochs: int = config.TRAINING["FINAL"]["epochs"]
    batch_size: int = config.TRAINING["FINAL"]["batch_size"]
    learning_rate: float = config.TRAINING["FINAL"]["learning_rate"]
    decay_rho: float = config.TRAINING["FINAL"]["decay_rho"]
    epsilon_delta: float = config.TRAINING["FINAL"]["epsilon_delta"]
    seed: int = config.TRAINING["FINAL"]["seed"]
    log_every: int = config.TRAINING["FINAL"]["log_every"]

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"Training needs at least one epoch, got {self.epochs}.")
        if self.batch_size < 1:
            raise ConfigError(f"Batch size must be positive, got {self.batch_size}.")
        if not 0.0 < self.decay_rho < 1.0:
            raise ConfigError(f"RMSProp decay must lie in (0, 1), got {self.decay_rho}.")
        if self.learning_rate <= 0.0 or self.epsilon_delta <= 0.0:
            raise ConfigError("Learning rate and epsilon must be positive.")

    def digest(self) -> str:
        text = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Training data: B free vectors and their empirical objective values.

    Attributes:
        X (np.ndarray): B x d matrix of free vectors.
        Y (np.ndarray): B objective values in [0, 1].
    """
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.array(self.X, dtype=float))
        Y = np.array(self.Y, dtype=float).reshape(-1)
        if X.shape[0] != Y.shape[0]:
            raise GraphError(f"Dataset has {X.shape[0]} inputs but {Y.shape[0]} targets.")
        if Y.size and (np.isnan(Y).any() or Y.min() < 0.0 or Y.max() > 1.0):
            raise GraphError("Dataset targets must lie in [0, 1].")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def B(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.X[rows], self.Y[rows])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.X, columns=[f"x{k}" for k in range(self.d)])
        frame["y"] = self.Y
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "Dataset":
        x_cols = sorted((c for c in frame.columns if c.startswith("x")), key=lambda c: int(c[1:]))
        return cls(frame[x_cols].to_numpy(dtype=float), frame["y"].to_numpy(dtype=float))


@dataclass(eq=False)
class Network:
    """
    A trained (or hand-built) network.

    ``weights[l]`` has shape (fan_in, fan_out). The network output ``s`` is
    mapped back to objective units as ``(s - out_offset) / out_scale``.
    """
    spec: NetworkSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    x_mean: np.ndarray
    x_sd: np.ndarray
    out_scale: float = 1.0
    out_offset: float = 0.0
    train_digest: Optional[str] = None

    def __post_init__(self):
        self.weights = [np.array(w, dtype=float) for w in self.weights]
        self.biases = [np.array(b, dtype=float).reshape(-1) for b in self.biases]
        self.x_mean = np.array(self.x_mean, dtype=float)
        self.x_sd = np.array(self.x_sd, dtype=float)
        sizes = self.spec.layer_sizes(self.d)
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(self.weights):
            raise GraphError(f"Network has {len(self.weights)} layers, the structure needs {len(sizes) - 1}.")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
                raise GraphError(f"Layer {l} has shape {w.shape}, expected {(sizes[l], sizes[l + 1])}.")
        if self.x_mean.shape != (self.d,) or self.x_sd.shape != (self.d,) or (self.x_sd <= 0).any():
            raise GraphError("Input standardizer must hold d means and d positive sds.")
        if not self.out_scale > 0.0:
            raise GraphError(f"Output scale must be positive, got {self.out_scale}.")

    @property
    def d(self) -> int:
        return self.weights[0].shape[0]

    def standardize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_sd

    def destandardize(self, U) -> np.ndarray:
        return np.asarray(U, dtype=float) * self.x_sd + self.x_mean

    def _check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.d:
            raise GraphError(f"Network expects {self.d} inputs, got {X.shape[-1]}.")
        return X

    def activations(self, X, rng: Optional[np.random.Generator] = None, rate: float = 0.0):
        """
        Layer activations for a batch, input layer first.

        With ``rng`` and a positive ``rate`` an inverted-dropout mask is
        applied to every hidden activation; the masks are returned alongside.
        """
        h = self.standardize(np.atleast_2d(X))
        layers, masks = [h], []
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = expit(h @ w + b)
            if l < last and rng is not None and rate > 0.0:
                mask = (rng.random(h.shape) >= rate) / (1.0 - rate)
                h = h * mask
                masks.append(mask)
            else:
                masks.append(None)
            layers.append(h)
        return layers, masks

    def predict(self, X) -> np.ndarray:
        """Objective estimates for a batch of free vectors (evaluation mode)."""
        X = self._check_input(np.atleast_2d(X))
        layers, _ = self.activations(X)
        return (layers[-1][:, 0] - self.out_offset) / self.out_scale

    def forward(self, x) -> float:
        x = self._check_input(x)
        if x.ndim != 1:
            raise GraphError(f"forward expects a single free vector, got shape {x.shape}.")
        return float(self.predict(x[None, :])[0])

    def input_gradient(self, x) -> np.ndarray:
        """Exact gradient of ``forward`` with respect to the free vector."""
        x = self._check_input(x)
        layers, _ = self.activations(x[None, :])
        grad = np.ones((1, 1))
        for l in range(len(self.weights) - 1, -1, -1):
            s = layers[l + 1]
            grad = (grad * s * (1.0 - s)) @ self.weights[l].T
        return grad[0] / (self.x_sd * self.out_scale)

    def rescaled(self, scale: float, offset: float) -> "Network":
        """Same network with objective ``scale * f + offset`` (``scale > 0``)."""
        if scale <= 0.0:
            raise ConfigError(f"Rescaling must be increasing, got scale {scale}.")
        return Network(
            self.spec, self.weights, self.biases, self.x_mean, self.x_sd,
            out_scale=self.out_scale / scale,
            out_offset=self.out_offset - offset * self.out_scale / scale,
            train_digest=self.train_digest,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "x_mean": self.x_mean.tolist(),
            "x_sd": self.x_sd.tolist(),
            "out_scale": self.out_scale,
            "out_offset": self.out_offset,
            "train_digest": self.train_digest,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Network":
        return cls(
            NetworkSpec.from_dict(data["spec"]),
            data["weights"],
            data["biases"],
            data["x_mean"],
            data["x_sd"],
            float(data["out_scale"]),
            float(data["out_offset"]),
            data.get("train_digest"),
        )

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Network":
        return cls.from_dict(json.loads(Path(path).read_text()))


def mse(net: Network, ds: Dataset) -> float:
    """Mean squared error in objective units."""
    residual = net.predict(ds.X) - ds.Y
    return float(np.mean(residual ** 2))


def _init_weights(sizes: Sequence[int], rng: np.random.Generator):
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def train(ds: Dataset, spec: NetworkSpec, cfg: TrainConfig = TrainConfig()) -> Network:
    """
    Fits a network to a dataset by mini-batch RMSProp on the squared error.

    Inputs are standardized with the dataset's column means and sds; targets
    are mapped affinely so that ``[min Y, max Y]`` becomes
    ``config.TARGET_RANGE``. Each epoch visits the rows in a fresh seeded
    permutation. The result is a deterministic function of (ds, spec, cfg).

    Args:
        ds (Dataset): Training data.
        spec (NetworkSpec): Layer structure and dropout rate.
        cfg (TrainConfig): Optimizer settings and seed.

    Returns:
        Network: The trained network.

    Raises:
        NumericalError: If the targets are constant.
    """
    if ds.B < 1:
        raise ConfigError("Cannot train on an empty dataset.")
    y_min, y_max = float(ds.Y.min()), float(ds.Y.max())
    if y_max <= y_min:
        raise NumericalError(f"Targets are constant ({y_min!r}); the target rescaling is undefined.")
    low, high = config.TARGET_RANGE
    out_scale = (high - low) / (y_max - y_min)
    out_offset = low - out_scale * y_min

    x_mean = ds.X.mean(axis=0)
    x_sd = ds.X.std(axis=0)
    x_sd = np.where(x_sd > MIN_SD, x_sd, 1.0)

    rng = make_rng(cfg.seed)
    weights, biases = _init_weights(spec.layer_sizes(ds.d), rng)
    net = Network(spec, weights, biases, x_mean, x_sd, out_scale, out_offset, cfg.digest())
    targets = out_scale * ds.Y + out_offset
    batch = min(cfg.batch_size, ds.B)

    acc_w = [np.zeros_like(w) for w in net.weights]
    acc_b = [np.zeros_like(b) for b in net.biases]
    rho, eta, delta = cfg.decay_rho, cfg.learning_rate, cfg.epsilon_delta

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(ds.B)
        for start in range(0, ds.B, batch):
            rows = order[start:start + batch]
            layers, masks = net.activations(ds.X[rows], rng, spec.dropout_rate)
            out = layers[-1]
            grad = 2.0 * (out - targets[rows, None]) / rows.shape[0]
            for l in range(len(net.weights) - 1, -1, -1):
                if masks[l] is not None:
                    grad = grad * masks[l]
                    s = layers[l + 1] / np.where(masks[l] > 0, masks[l], 1.0)
                else:
                    s = layers[l + 1]
                pre = grad * s * (1.0 - s)
                g_w = layers[l].T @ pre
                g_b = pre.sum(axis=0)
                grad = pre @ net.weights[l].T

                acc_w[l] = rho * acc_w[l] + (1.0 - rho) * g_w * g_w
                acc_b[l] = rho * acc_b[l] + (1.0 - rho) * g_b * g_b
                net.weights[l] -= eta * g_w / np.sqrt(acc_w[l] + delta)
                net.biases[l] -= eta * g_b / np.sqrt(acc_b[l] + delta)

        if cfg.log_every and epoch % cfg.log_every == 0:
            logging.debug(f"Epoch {epoch}/{cfg.epochs} of {spec.label()}: training MSE {mse(net, ds):.3e}")
    return net


def cross_validate(ds: Dataset, candidates: Sequence[NetworkSpec], k: int = 5, cfg: TrainConfig = None):
    """
    Selects a network structure by k-fold cross-validation.

    Rows are shuffled once (seeded from ``cfg.seed``) and cut into k
    contiguous folds. Every candidate is trained k times and scored by the
    mean held-out MSE; ties go to the candidate with fewer parameters.

    Args:
        ds (Dataset): Training data.
        candidates (Sequence[NetworkSpec]): Structures to compare.
        k (int): Number of folds.
        cfg (TrainConfig): Settings for every fold fit; defaults to ``config.TRAINING["CV"]``.

    Returns:
        Tuple[NetworkSpec, pd.DataFrame]: The chosen structure and one table row per candidate.
    """
    if cfg is None:
        cfg = TrainConfig(**config.TRAINING["CV"])
    candidates = list(candidates)
    if not candidates:
        raise ConfigError("Cross-validation needs at least one candidate structure.")
    if k < 2 or ds.B < k:
        raise ConfigError(f"Cross-validation needs 2 <= k <= B, got k={k}, B={ds.B}.")

    order = make_rng(cfg.seed, 1).permutation(ds.B)
    folds = np.array_split(order, k)
    records = []
    for index, spec in enumerate(candidates):
        scores = []
        for f, held_out in enumerate(folds):
            train_rows = np.concatenate([fold for g, fold in enumerate(folds) if g != f])
            net = train(ds.subset(train_rows), spec, cfg)
            scores.append(mse(net, ds.subset(held_out)))
        record = {
            "candidate": index,
            "structure": spec.label(),
            "hidden_widths": " ".join(str(w) for w in spec.hidden_widths),
            "dropout_rate": spec.dropout_rate,
            "n_parameters": spec.n_parameters(ds.d),
        }
        record.update({f"fold_{f}": s for f, s in enumerate(scores)})
        record["mean_mse"] = float(np.mean(scores))
        records.append(record)
        logging.info(f"CV {spec.label()}: mean held-out MSE {record['mean_mse']:.3e}")

    table = pd.DataFrame.from_records(records)
    best = min(range(len(candidates)), key=lambda i: (records[i]["mean_mse"], records[i]["n_parameters"], i))
    logging.info(f"Chosen network structure: {candidates[best].label()}")
    return candidates[best], table
