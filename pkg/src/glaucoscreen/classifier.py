"""RBF-kernel soft-margin SVM trained with sequential minimal optimization.

Glaucoma is the positive class (+1) and normal the negative class (-1).
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

GLAUCOMA, NORMAL = "glaucoma", "normal"
MODEL_VERSION = 1
DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_GRID = (0.01, 0.1, 0.5, 1.0, 2.0)


class ConvergenceWarning(UserWarning):
    pass


class ModelFileError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, rows) -> np.ndarray:
        return (np.asarray(rows, dtype=np.float64) - self.mean) / self.std


def fit_scaler(rows) -> Scaler:
    """Z-score scaler with population std; constant columns are left untouched."""
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("cannot fit a scaler on no rows")
    mean, std = x.mean(axis=0), x.std(axis=0)
    constant = std == 0
    return Scaler(mean=np.where(constant, 0.0, mean), std=np.where(constant, 1.0, std))


def apply_scaler(scaler: Scaler, row) -> np.ndarray:
    return scaler.apply(row)


def rbf_kernel(m, n, gamma: float) -> float:
    diff = np.asarray(m, dtype=np.float64) - np.asarray(n, dtype=np.float64)
    return float(np.exp(-gamma * np.dot(diff, diff)))


def rbf_matrix(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclasses.dataclass
class SvmModel:
    support_vectors: np.ndarray  # scaled rows, (n_sv, d)
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    gamma: float
    c: float
    scaler: Scaler | None = None
    support_indices: np.ndarray | None = None
    converged: bool = True
    n_iter: int = 0


def labels_to_signs(labels: Sequence[str]) -> np.ndarray:
    out = []
    for lab in labels:
        if lab == GLAUCOMA:
            out.append(1.0)
        elif lab == NORMAL:
            out.append(-1.0)
        else:
            raise ValueError(f"label {lab!r} is neither {GLAUCOMA!r} nor {NORMAL!r}")
    return np.array(out)


def smo_train(x, y, c: float, gamma: float, tolerance: float = 1e-3, max_passes: int = 200,
              seed: int = 0) -> SvmModel:
    """Solve the SVM dual by SMO on already-scaled rows.

    Each iteration updates the pair of multipliers that most violates the
    optimality conditions (second-order choice of the partner), and stops
    once the violation gap drops below ``tolerance``. This certifies the
    KKT conditions to ``tolerance`` for the returned bias. ``seed`` fixes
    the order in which equally-scored candidates are considered.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < 2 or not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("SVM training needs at least one sample of each class")
    if not np.all(np.abs(y) == 1):
        raise ValueError("labels must be +1 or -1")
    if gamma <= 0 or c <= 0:
        raise ValueError("gamma and c must be positive")

    perm = np.random.default_rng(seed).permutation(n)
    x, y = x[perm], y[perm]
    K = rbf_matrix(x, x, gamma)
    Q = (y[:, None] * y[None, :]) * K
    diag = np.diag(K)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 0.5 a'Qa - e'a
    max_iter = max_passes * n
    converged = False

    for it in range(max_iter):
        score = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        i = int(np.argmax(np.where(up, score, -np.inf)))
        m_up = score[i]
        m_low = np.min(np.where(low, score, np.inf))
        if m_up - m_low < tolerance:
            converged = True
            break
        b = m_up - score
        a = np.maximum(diag[i] + diag - 2.0 * K[i], 1e-12)
        cand = low & (b > 0)
        j = int(np.argmin(np.where(cand, -(b * b) / a, np.inf)))

        delta = b[j] / a[j]
        delta = min(delta, c - alpha[i] if y[i] > 0 else alpha[i])
        delta = min(delta, alpha[j] if y[j] > 0 else c - alpha[j])
        alpha[i] += y[i] * delta
        alpha[j] -= y[j] * delta
        alpha[i] = min(max(alpha[i], 0.0), c)
        alpha[j] = min(max(alpha[j], 0.0), c)
        grad += Q[:, i] * (y[i] * delta) - Q[:, j] * (y[j] * delta)
    else:
        it = max_iter
        warnings.warn(f"SMO did not converge within {max_iter} iterations",
                      ConvergenceWarning, stacklevel=2)

    score = -y * grad
    free = (alpha > 0) & (alpha < c)
    if free.any():
        bias = float(score[free].mean())
    else:
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        bias = float((score[up].max(initial=-np.inf) + score[low].min(initial=np.inf)) / 2)

    sv = np.nonzero(alpha > 0)[0]
    order = np.argsort(perm[sv], kind="stable")
    sv = sv[order]
    return SvmModel(
        support_vectors=x[sv].copy(),
        dual_coef=(alpha[sv] * y[sv]).copy(),
        bias=bias,
        gamma=gamma,
        c=c,
        support_indices=perm[sv].copy(),
        converged=converged,
        n_iter=it,
    )


def dual_objective(alpha, x, y, gamma: float) -> float:
    """Dual SVM objective sum(alpha) - 0.5 * alpha' Q alpha (to be maximized)."""
    x = np.asarray(x, dtype=np.float64)
    ay = np.asarray(alpha) * np.asarray(y)
    return float(np.sum(alpha) - 0.5 * ay @ rbf_matrix(x, x, gamma) @ ay)


def full_alpha(model: SvmModel, n: int) -> np.ndarray:
    alpha = np.zeros(n)
    alpha[model.support_indices] = np.abs(model.dual_coef)
    return alpha


def fit_svm(rows, labels, c: float, gamma: float, tolerance: float = 1e-3,
            max_passes: int = 200, seed: int = 0) -> SvmModel:
    """Standardize raw feature rows and train; labels are strings or +-1."""
    rows = np.asarray(rows, dtype=np.float64)
    y = labels_to_signs(labels) if isinstance(labels[0], str) else np.asarray(labels, float)
    scaler = fit_scaler(rows)
    model = smo_train(scaler.apply(rows), y, c, gamma, tolerance, max_passes, seed)
    model.scaler = scaler
    return model


def decision_values(model: SvmModel, rows) -> np.ndarray:
    x = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if model.scaler is not None:
        x = model.scaler.apply(x)
    return rbf_matrix(x, model.support_vectors, model.gamma) @ model.dual_coef + model.bias


def decision_value(model: SvmModel, row) -> float:
    return float(decision_values(model, row)[0])


def predict(model: SvmModel, row) -> str:
    """Glaucoma when the decision value is >= 0; a boundary tie screens positive."""
    return GLAUCOMA if decision_value(model, row) >= 0 else NORMAL


def predict_many(model: SvmModel, rows) -> list[str]:
    return [GLAUCOMA if v >= 0 else NORMAL for v in decision_values(model, rows)]


# ----------------------------------------------------------------- model selection


@dataclasses.dataclass
class TrainConfig:
    c_grid: Sequence[float] = DEFAULT_C_GRID
    gamma_grid: Sequence[float] = DEFAULT_GAMMA_GRID
    tolerance: float = 1e-3
    max_passes: int = 200
    cv_folds: int = 5
    seed: int = 0


def stratified_folds(y: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Fold index per sample, dealing each class round-robin after a seeded shuffle."""
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=int)
    for cls in (1.0, -1.0):
        idx = np.nonzero(y == cls)[0]
        if len(idx) < k:
            raise ValueError(f"class {cls:+.0f} has {len(idx)} samples, fewer than {k} folds")
        folds[idx[rng.permutation(len(idx))]] = np.arange(len(idx)) % k
    return folds


def grid_search(rows, labels, config: TrainConfig):
    """Stratified k-fold accuracy for every (c, gamma) pair.

    Returns ``(best_c, best_gamma, table)`` where ``table`` lists
    ``(c, gamma, accuracy)`` in grid order. Ties prefer smaller c, then
    smaller gamma.
    """
    if not config.c_grid or not config.gamma_grid:
        raise ValueError("empty hyper-parameter grid")
    rows = np.asarray(rows, dtype=np.float64)
    y = labels_to_signs(labels) if isinstance(labels[0], str) else np.asarray(labels, float)
    folds = stratified_folds(y, config.cv_folds, config.seed)
    table = []
    for c, gamma in itertools.product(config.c_grid, config.gamma_grid):
        correct = 0
        for f in range(config.cv_folds):
            tr, te = folds != f, folds == f
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                model = fit_svm(rows[tr], y[tr], c, gamma, config.tolerance,
                                config.max_passes, config.seed)
            pred = np.where(decision_values(model, rows[te]) >= 0, 1.0, -1.0)
            correct += int(np.count_nonzero(pred == y[te]))
        table.append((float(c), float(gamma), correct / len(y)))
    best = min(table, key=lambda r: (-r[2], r[0], r[1]))
    logger.info("grid search best c=%g gamma=%g acc=%.4f", *best)
    return best[0], best[1], table


# ------------------------------------------------------------------ persistence


def _dump(obj) -> str:
    """JSON text with floats written at 17 significant digits."""
    if isinstance(obj, dict):
        items = ", ".join(f"{json.dumps(k)}: {_dump(v)}" for k, v in obj.items())
        return "{" + items + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dump(v) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    value = float(obj)
    if not np.isfinite(value):
        raise ValueError("cannot serialize non-finite number")
    return format(value, ".17g")


def dumps_model(model: SvmModel) -> str:
    if model.scaler is None:
        d = model.support_vectors.shape[1]
        scaler = Scaler(np.zeros(d), np.ones(d))
    else:
        scaler = model.scaler
    doc = {
        "version": MODEL_VERSION,
        "kind": "rbf-svm",
        "gamma": model.gamma,
        "c": model.c,
        "scaler": {"mean": scaler.mean.tolist(), "std": scaler.std.tolist()},
        "support_vectors": model.support_vectors.tolist(),
        "alphas": model.dual_coef.tolist(),
        "bias": model.bias,
    }
    return _dump(doc) + "\n"


def save_model(model: SvmModel, path) -> None:
    Path(path).write_text(dumps_model(model))


def loads_model(text: str) -> SvmModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"corrupt model file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("kind") != "rbf-svm":
        raise ModelFileError("not an SVM model file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFileError(f"unsupported model version {doc.get('version')!r}")
    try:
        sv = np.array(doc["support_vectors"], dtype=np.float64)
        alphas = np.array(doc["alphas"], dtype=np.float64)
        scaler = Scaler(np.array(doc["scaler"]["mean"], dtype=np.float64),
                        np.array(doc["scaler"]["std"], dtype=np.float64))
        model = SvmModel(support_vectors=sv, dual_coef=alphas, bias=float(doc["bias"]),
                         gamma=float(doc["gamma"]), c=float(doc["c"]), scaler=scaler)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed model file: {exc}") from exc
    if sv.ndim != 2 or len(sv) != len(alphas) or len(sv) == 0:
        raise ModelFileError("support vectors and alphas disagree")
    return model


def load_model(path) -> SvmModel:
    return loads_model(Path(path).read_text())
