"""Regression estimators over plain numpy arrays: least squares, random
forests of exact CART trees, and a small multilayer perceptron.

Nothing here knows about geography; callers hand in fused feature
blocks. All three estimators share the EstimatorSpec configuration and
the repeated-evaluation harness that reports mean and spread of RMSE
and R^2 over reseeded refits.

The forest is grown by a numba kernel that keeps one sorted position
array per feature and repartitions it stably at every split, so finding
the best split of a node costs one linear sweep per feature and no
per-node sorting. Splits consider every feature (regression forests
decorrelate through the bootstrap alone), gains tie-break toward the
lowest feature index then the lowest threshold, and nodes grow to
purity unless the minimum leaf size stops them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .errors import ConfigError, DataError, NumericError
from .geo import derive_seed, seeded_rng

ESTIMATOR_KINDS = ("linear", "random_forest", "mlp")

SSE_EPS = 1e-12


def rmse(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape:
        raise DataError(f"length mismatch: {y_true.shape[0]} vs {y_pred.shape[0]}")
    if y_true.size == 0:
        raise DataError("empty arrays")
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def r2(y_true, y_pred) -> float:
    """1 - SSE/SST with sample means; constant targets are refused."""
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape:
        raise DataError(f"length mismatch: {y_true.shape[0]} vs {y_pred.shape[0]}")
    if y_true.size < 2:
        raise DataError("need at least 2 observations for R^2")
    sst = float(np.sum((y_true - y_true.mean()) ** 2))
    if sst == 0.0:
        raise NumericError("constant target has no variance to explain")
    sse = float(np.sum((y_true - y_pred) ** 2))
    return 1.0 - sse / sst


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator to fit and every knob it honors."""

    kind: str
    seed: int = 0
    rf_trees: int = 40
    rf_min_leaf: int = 1
    rf_bootstrap: bool = True
    mlp_hidden: tuple[int, int] = (500, 100)
    mlp_lr: float = 1e-3
    mlp_batch: int = 32
    mlp_max_epochs: int = 500
    mlp_patience: int = 20
    mlp_val_frac: float = 0.1

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ConfigError(f"estimator kind must be one of {ESTIMATOR_KINDS}, got {self.kind!r}")
        if self.rf_trees < 1:
            raise ConfigError(f"rf_trees must be >= 1, got {self.rf_trees}")
        if self.rf_min_leaf < 1:
            raise ConfigError(f"rf_min_leaf must be >= 1, got {self.rf_min_leaf}")
        if len(self.mlp_hidden) != 2 or any(h < 1 for h in self.mlp_hidden):
            raise ConfigError(f"mlp_hidden must be two positive widths, got {self.mlp_hidden!r}")
        if not (0.0 < self.mlp_val_frac < 0.5):
            raise ConfigError(f"mlp_val_frac must be in (0, 0.5), got {self.mlp_val_frac!r}")
        if self.mlp_batch < 1 or self.mlp_max_epochs < 1 or self.mlp_patience < 1:
            raise ConfigError("mlp batch, epochs and patience must be positive")
        if self.mlp_lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.mlp_lr!r}")


def _as_xy(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2:
        raise DataError("X must be 2-d")
    if y.shape[0] != X.shape[0]:
        raise DataError(f"y has {y.shape[0]} rows, X has {X.shape[0]}")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise DataError("non-finite training values")
    return X, y


# ---------------------------------------------------------------- linear


@dataclass(frozen=True)
class LinearModel:
    beta: np.ndarray
    names: tuple[str, ...]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.beta.shape[0]:
            raise DataError(
                f"X has {X.shape[1]} columns, model has {self.beta.shape[0]} coefficients"
            )
        return X @ self.beta


def fit_ols(X, y, names=None) -> LinearModel:
    """Least squares through an orthogonal decomposition.

    Rank deficiency is an error, with the offending columns named via
    the pivoted factorization, since silently dropping columns would
    change what the coefficients mean.
    """
    import scipy.linalg

    X, y = _as_xy(X, y)
    n, k = X.shape
    if n < k:
        raise DataError(f"need at least {k} rows for {k} columns, got {n}")
    if names is None:
        names = tuple(f"x{i}" for i in range(k))
    names = tuple(names)
    if len(names) != k:
        raise DataError(f"{len(names)} names for {k} columns")
    q, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(n, k) * np.finfo(np.float64).eps * (diag.max() if diag.size else 0.0)
    rank = int((diag > tol).sum())
    if rank < k:
        culprits = [names[j] for j in piv[rank:]]
        raise NumericError(f"design is rank-deficient; dependent columns: {culprits}")
    beta = np.zeros(k)
    beta[piv] = scipy.linalg.solve_triangular(r, q.T @ y)
    return LinearModel(beta=beta, names=names)


def save_linear_model(model: LinearModel, path) -> None:
    lines = ["kind=linear"]
    for name, val in zip(model.names, model.beta):
        lines.append(f"beta.{name}={float(val)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_linear_model(path) -> LinearModel:
    kv: dict[str, str] = {}
    order: list[str] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}: bad line {line!r}")
            key, val = line.split("=", 1)
            kv[key] = val
            order.append(key)
    if kv.get("kind") != "linear":
        raise DataError(f"{path}: not a linear model export")
    names = tuple(key[5:] for key in order if key.startswith("beta."))
    beta = np.array([float(kv[f"beta.{nm}"]) for nm in names])
    return LinearModel(beta=beta, names=names)


# ---------------------------------------------------------------- forest


@njit(cache=True)
def _grow(X, y, sidx, min_leaf):  # pragma: no cover - measured via ForestModel
    # sidx holds, per feature, the sample positions sorted by that
    # feature; every node's samples occupy [lo:hi) in all rows and the
    # stable repartition below keeps each row sorted within its side.
    n, k = X.shape
    max_nodes = 2 * n + 1
    feat = np.full(max_nodes, -1, np.int64)
    thr = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes, np.float64)
    stack_node = np.empty(max_nodes, np.int64)
    stack_lo = np.empty(max_nodes, np.int64)
    stack_hi = np.empty(max_nodes, np.int64)
    in_left = np.zeros(n, np.bool_)
    buf = np.empty(n, np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    n_nodes = 1
    while top >= 0:
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        top -= 1
        m = hi - lo
        tot = 0.0
        tsq = 0.0
        for t in range(lo, hi):
            yv = y[sidx[0, t]]
            tot += yv
            tsq += yv * yv
        value[node] = tot / m
        if m < 2 * min_leaf:
            continue
        sse_parent = tsq - tot * tot / m
        if sse_parent <= SSE_EPS:
            continue
        best_gain = SSE_EPS
        best_f = -1
        best_thr = 0.0
        best_nl = 0
        for f in range(k):
            csum = 0.0
            csq = 0.0
            for i in range(m - 1):
                p = sidx[f, lo + i]
                yv = y[p]
                csum += yv
                csq += yv * yv
                a = X[p, f]
                b = X[sidx[f, lo + i + 1], f]
                if a == b:
                    continue
                nl = i + 1
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                # singleton children have exactly zero SSE; the
                # cancellation-prone identity would leave +/-1e-16
                # noise there that out-argues the tie-break
                if nl == 1:
                    sl = 0.0
                else:
                    sl = csq - csum * csum / nl
                if nr == 1:
                    sr = 0.0
                else:
                    rsum = tot - csum
                    sr = (tsq - csq) - rsum * rsum / nr
                gain = sse_parent - sl - sr
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    # midpoint, guarded so the threshold never rounds
                    # up onto the right block's value
                    t2 = 0.5 * (a + b)
                    if t2 >= b:
                        t2 = a
                    best_thr = t2
                    best_nl = nl
        if best_f < 0:
            continue
        for t in range(lo, hi):
            p = sidx[best_f, t]
            in_left[p] = X[p, best_f] <= best_thr
        mid = lo + best_nl
        for f in range(k):
            a2 = lo
            c = 0
            for t in range(lo, hi):
                p = sidx[f, t]
                if in_left[p]:
                    sidx[f, a2] = p
                    a2 += 1
                else:
                    buf[c] = p
                    c += 1
            for t in range(c):
                sidx[f, mid + t] = buf[t]
        feat[node] = best_f
        thr[node] = best_thr
        ln = n_nodes
        rn = n_nodes + 1
        n_nodes += 2
        left[node] = ln
        right[node] = rn
        top += 1
        stack_node[top] = ln
        stack_lo[top] = lo
        stack_hi[top] = mid
        top += 1
        stack_node[top] = rn
        stack_lo[top] = mid
        stack_hi[top] = hi
    return (
        feat[:n_nodes].copy(),
        thr[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@njit(cache=True)
def _tree_predict(feat, thr, left, right, value, X, out):  # pragma: no cover
    for i in range(X.shape[0]):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]


@dataclass(frozen=True)
class CartTree:
    feat: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        _tree_predict(self.feat, self.thr, self.left, self.right, self.value, X, out)
        return out

    @property
    def n_nodes(self) -> int:
        return int(self.feat.shape[0])


def fit_cart(X, y, min_leaf: int = 1) -> CartTree:
    """One exact CART regression tree, grown to purity modulo min_leaf."""
    X, y = _as_xy(X, y)
    if X.shape[0] < 1:
        raise DataError("empty training set")
    sidx = np.argsort(X, axis=0, kind="stable").T.copy()
    feat, thr, left, right, value = _grow(X, y, sidx, min_leaf)
    return CartTree(feat, thr, left, right, value)


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[CartTree, ...]

    def predict_per_tree(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty((len(self.trees), X.shape[0]))
        for t, tree in enumerate(self.trees):
            _tree_predict(tree.feat, tree.thr, tree.left, tree.right, tree.value, X, out[t])
        return out

    def predict(self, X) -> np.ndarray:
        return self.predict_per_tree(X).mean(axis=0)


def fit_random_forest(X, y, spec: EstimatorSpec) -> ForestModel:
    """Bagged CART trees; each tree's bootstrap comes from its own
    stream keyed by (seed, tree index), so trees are order-independent."""
    X, y = _as_xy(X, y)
    n = X.shape[0]
    if n < 2:
        raise DataError(f"need at least 2 rows to fit a forest, got {n}")
    trees = []
    for t in range(spec.rf_trees):
        if spec.rf_bootstrap:
            rng = seeded_rng(spec.seed, "tree", t)
            bidx = rng.integers(0, n, size=n)
            xb = np.ascontiguousarray(X[bidx])
            yb = y[bidx]
        else:
            xb, yb = X, y
        trees.append(fit_cart(xb, yb, spec.rf_min_leaf))
    return ForestModel(tuple(trees))


# ------------------------------------------------------------------- mlp


@dataclass(frozen=True)
class MlpModel:
    params: tuple[np.ndarray, ...]
    x_mu: np.ndarray
    x_sd: np.ndarray
    y_mu: float
    y_sd: float
    epochs_run: int

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.x_mu.shape[0]:
            raise DataError(
                f"X has {X.shape[1]} columns, model trained on {self.x_mu.shape[0]}"
            )
        z = (X - self.x_mu) / self.x_sd
        out = mlp_forward(self.params, z)
        return out * self.y_sd + self.y_mu


def mlp_init(n_in: int, hidden: tuple[int, int], rng) -> tuple[np.ndarray, ...]:
    h1, h2 = hidden
    dims = [(n_in, h1), (h1, h2), (h2, 1)]
    params = []
    for d_in, d_out in dims:
        params.append(rng.normal(0.0, math.sqrt(2.0 / d_in), size=(d_in, d_out)))
        params.append(np.zeros(d_out))
    return tuple(params)


def mlp_forward(params, X) -> np.ndarray:
    w1, b1, w2, b2, w3, b3 = params
    h1 = np.maximum(X @ w1 + b1, 0.0)
    h2 = np.maximum(h1 @ w2 + b2, 0.0)
    return (h2 @ w3 + b3).ravel()


def mlp_loss_and_grads(params, X, y):
    """Mean squared error and its exact gradients by backpropagation."""
    w1, b1, w2, b2, w3, b3 = params
    n = X.shape[0]
    a1 = X @ w1 + b1
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ w2 + b2
    h2 = np.maximum(a2, 0.0)
    out = (h2 @ w3 + b3).ravel()
    diff = out - y
    loss = float(diff @ diff) / n
    g_out = (2.0 / n) * diff[:, None]
    g_w3 = h2.T @ g_out
    g_b3 = g_out.sum(axis=0)
    g_h2 = g_out @ w3.T
    g_a2 = g_h2 * (a2 > 0.0)
    g_w2 = h1.T @ g_a2
    g_b2 = g_a2.sum(axis=0)
    g_h1 = g_a2 @ w2.T
    g_a1 = g_h1 * (a1 > 0.0)
    g_w1 = X.T @ g_a1
    g_b1 = g_a1.sum(axis=0)
    return loss, (g_w1, g_b1, g_w2, g_b2, g_w3, g_b3)


def fit_mlp(X, y, spec: EstimatorSpec) -> MlpModel:
    """Two hidden ReLU layers trained with Adam on standardized data.

    A held-out slice of the training set (mlp_val_frac) drives early
    stopping: training halts after mlp_patience epochs without a new
    best validation RMSE and the best weights are restored.
    """
    X, y = _as_xy(X, y)
    n = X.shape[0]
    if n < 10:
        raise DataError(f"need at least 10 rows to fit the mlp, got {n}")
    x_mu = X.mean(axis=0)
    x_sd = X.std(axis=0)
    x_sd = np.where(x_sd < 1e-12, 1.0, x_sd)
    y_mu = float(y.mean())
    y_sd = float(y.std())
    if y_sd < 1e-12:
        y_sd = 1.0
    Xz = (X - x_mu) / x_sd
    yz = (y - y_mu) / y_sd

    rng = seeded_rng(spec.seed, "mlp")
    n_val = max(1, int(round(spec.mlp_val_frac * n)))
    perm = rng.permutation(n)
    val_idx = perm[:n_val]
    tr_idx = perm[n_val:]
    Xtr, ytr = Xz[tr_idx], yz[tr_idx]
    Xva, yva = Xz[val_idx], yz[val_idx]

    params = list(mlp_init(X.shape[1], spec.mlp_hidden, rng))
    mom = [np.zeros_like(p) for p in params]
    vel = [np.zeros_like(p) for p in params]
    b1m, b2m, eps = 0.9, 0.999, 1e-8
    step = 0
    best_val = math.inf
    best_params = [p.copy() for p in params]
    best_epoch = 0
    epochs_run = 0
    for epoch in range(spec.mlp_max_epochs):
        epochs_run = epoch + 1
        order = rng.permutation(Xtr.shape[0])
        for start in range(0, Xtr.shape[0], spec.mlp_batch):
            batch = order[start:start + spec.mlp_batch]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = mlp_loss_and_grads(params, Xtr[batch], ytr[batch])
            if not math.isfinite(loss):
                raise NumericError(
                    f"mlp training diverged (loss={loss!r} at epoch {epoch}); lower the learning rate"
                )
            step += 1
            with np.errstate(over="ignore", invalid="ignore"):
                for j, g in enumerate(grads):
                    mom[j] = b1m * mom[j] + (1 - b1m) * g
                    vel[j] = b2m * vel[j] + (1 - b2m) * (g * g)
                    mhat = mom[j] / (1 - b1m**step)
                    vhat = vel[j] / (1 - b2m**step)
                    params[j] = params[j] - spec.mlp_lr * mhat / (np.sqrt(vhat) + eps)
        with np.errstate(over="ignore", invalid="ignore"):
            val_err = float(np.sqrt(np.mean((mlp_forward(params, Xva) - yva) ** 2)))
        if not math.isfinite(val_err):
            raise NumericError(f"mlp validation error non-finite at epoch {epoch}")
        if val_err < best_val - 1e-12:
            best_val = val_err
            best_params = [p.copy() for p in params]
            best_epoch = epoch
        elif epoch - best_epoch >= spec.mlp_patience:
            break
    return MlpModel(
        params=tuple(best_params),
        x_mu=x_mu,
        x_sd=x_sd,
        y_mu=y_mu,
        y_sd=y_sd,
        epochs_run=epochs_run,
    )


# ------------------------------------------------------------ evaluation


def fit_estimator(X, y, spec: EstimatorSpec, names=None):
    if spec.kind == "linear":
        return fit_ols(X, y, names)
    if spec.kind == "random_forest":
        return fit_random_forest(X, y, spec)
    if spec.kind == "mlp":
        return fit_mlp(X, y, spec)
    raise ConfigError(f"unknown estimator kind {spec.kind!r}")


@dataclass(frozen=True)
class EvalReport:
    """Mean and spread of test metrics over reseeded refits."""

    kind: str
    n_runs: int
    rmse_mean: float
    rmse_std: float
    r2_mean: float
    r2_std: float
    rmse_runs: tuple[float, ...] = field(repr=False, default=())
    r2_runs: tuple[float, ...] = field(repr=False, default=())

    def render_text(self) -> str:
        return (
            f"{self.kind}: rmse {self.rmse_mean:.6g} +/- {self.rmse_std:.3g}, "
            f"r2 {self.r2_mean:.4f} +/- {self.r2_std:.3g} ({self.n_runs} runs)"
        )


def repeated_eval(
    X_train, y_train, X_test, y_test, spec: EstimatorSpec, n_runs: int = 10
) -> EvalReport:
    """Fit n_runs times with derived seeds, score on the held-out set.

    Deterministic estimators still run n_runs times and honestly report
    a zero spread.
    """
    if n_runs < 1:
        raise ConfigError(f"n_runs must be >= 1, got {n_runs}")
    rmses = []
    r2s = []
    for run in range(n_runs):
        run_spec = replace(spec, seed=derive_seed(spec.seed, "run", run))
        model = fit_estimator(X_train, y_train, run_spec)
        pred = model.predict(X_test)
        rmses.append(rmse(y_test, pred))
        r2s.append(r2(y_test, pred))
    rmses = np.array(rmses)
    r2s = np.array(r2s)
    return EvalReport(
        kind=spec.kind,
        n_runs=n_runs,
        rmse_mean=float(rmses.mean()),
        rmse_std=float(rmses.std(ddof=1)) if n_runs > 1 else 0.0,
        r2_mean=float(r2s.mean()),
        r2_std=float(r2s.std(ddof=1)) if n_runs > 1 else 0.0,
        rmse_runs=tuple(float(v) for v in rmses),
        r2_runs=tuple(float(v) for v in r2s),
    )


def save_eval_report(report: EvalReport, path) -> None:
    """metric,mean,std,n_runs rows; floats via repr for exact re-reads."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "mean", "std", "n_runs"])
        w.writerow(["rmse", repr(report.rmse_mean), repr(report.rmse_std), report.n_runs])
        w.writerow(["r2", repr(report.r2_mean), repr(report.r2_std), report.n_runs])
