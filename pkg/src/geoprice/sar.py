"""Spatial autoregression y = rho W y + X beta + eps by maximum likelihood.

Estimation concentrates the Gaussian likelihood: for fixed rho the
residual is e(rho) = e0 - rho * ed, where e0 and ed are the least
squares residuals of y and of the spatial lag Wy on X. The profile
log-likelihood

    l(rho) = -(n/2) * ln(e(rho)'e(rho) / n) + ln |det(I - rho W)|

is maximized over the admissible interval by a coarse grid pass
followed by golden-section refinement. The log-determinant comes from
the eigenvalues of W (computed once, reused for every rho) while W is
small enough for dense eigensolves; past that a sparse LU
factorization per candidate rho takes over.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .contiguity import EIG_DENSE_LIMIT, SparseContiguity
from .errors import DataError, NumericError

RHO_EDGE = 1e-6        # pull-in from the admissible interval's ends
GRID_POINTS = 50
GOLDEN_TOL = 1e-8
BOUNDARY_TOL = 1e-6    # estimates this close to an endpoint are refused


@dataclass(frozen=True)
class DesignMatrix:
    """A dense regression design with an intercept in the first column."""

    X: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        object.__setattr__(self, "X", X)
        if X.ndim != 2 or X.shape[0] < 1:
            raise DataError("design matrix must be 2-d and nonempty")
        if len(self.names) != X.shape[1]:
            raise DataError(
                f"{len(self.names)} names for {X.shape[1]} columns"
            )
        if not np.all(np.isfinite(X)):
            raise DataError("design matrix contains non-finite values")
        if not np.all(X[:, 0] == 1.0):
            raise DataError("first design column must be the intercept (all ones)")

    @classmethod
    def from_features(cls, block: np.ndarray, names) -> "DesignMatrix":
        block = np.asarray(block, dtype=np.float64)
        if block.ndim != 2:
            raise DataError("feature block must be 2-d")
        X = np.hstack([np.ones((block.shape[0], 1)), block])
        return cls(X, ("const",) + tuple(names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SarModel:
    rho: float
    beta: np.ndarray
    names: tuple[str, ...]
    sigma2: float
    loglik: float
    n: int
    w_checksum: str
    rho_interval: tuple[float, float]


def _unpack(design) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(design, DesignMatrix):
        return design.X, design.names
    X = np.asarray(design, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("design must be 2-d")
    return X, ("const",) + tuple(f"x{i}" for i in range(1, X.shape[1]))


def _check_rank(X: np.ndarray) -> np.ndarray:
    """R factor of a thin QR, refusing rank-deficient designs."""
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.min() <= 1e-10 * max(diag.max(), 1e-300):
        raise NumericError("design matrix is rank-deficient")
    return q, r


def admissible_interval(w: SparseContiguity) -> tuple[float, float]:
    """Open rho interval on which I - rho W stays nonsingular.

    With eigenvalues available: (1/lambda_min, 1) when the smallest
    real eigenvalue is negative, else (-1, 1). Without them (large n)
    the row-normalized bound (-1, 1) applies.
    """
    if w.n <= EIG_DENSE_LIMIT:
        ev = w.eigenvalues()
        real = ev.real[np.abs(ev.imag) < 1e-9]
        lam_min = real.min() if real.size else 0.0
        lo = 1.0 / lam_min if lam_min < 0 else -1.0
    else:
        lo = -1.0
    return (lo, 1.0)


def log_det_term(w: SparseContiguity, rho: float, method: str | None = None) -> float:
    """ln |det(I - rho W)| by eigenvalues ('eig') or sparse LU ('lu').

    method=None picks 'eig' while dense eigensolves are affordable.
    """
    if method is None:
        method = "eig" if w.n <= EIG_DENSE_LIMIT else "lu"
    if method == "eig":
        ev = w.eigenvalues()
        factors = np.abs(1.0 - rho * ev)
        if np.any(factors == 0.0):
            raise NumericError(f"I - rho W singular at rho={rho!r}")
        return float(np.log(factors).sum())
    if method == "lu":
        a = sp.identity(w.n, format="csc") - rho * w.to_scipy().tocsc()
        try:
            lu = spla.splu(a)
        except RuntimeError as exc:
            raise NumericError(f"I - rho W singular at rho={rho!r}") from exc
        diag = np.abs(lu.U.diagonal())
        if np.any(diag == 0.0):
            raise NumericError(f"I - rho W singular at rho={rho!r}")
        return float(np.log(diag).sum())
    raise DataError(f"unknown log-det method {method!r}")


def _golden_max(f, a: float, b: float, tol: float) -> tuple[float, float]:
    gr = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - gr * (b - a)
    d = a + gr * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - gr * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + gr * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def fit_sar_ml(design, y, w: SparseContiguity, rho_fixed: float | None = None) -> SarModel:
    """Maximum likelihood fit of the spatial lag model.

    W must be row-normalized. rho_fixed skips the search and profiles
    the remaining parameters at that value (rho_fixed=0 reduces the
    model to ordinary least squares).
    """
    X, names = _unpack(design)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, k = X.shape
    if y.shape != (n,):
        raise DataError(f"y has {y.shape[0]} rows, X has {n}")
    if not np.all(np.isfinite(y)):
        raise DataError("y contains non-finite values")
    if w.n != n:
        raise DataError(f"W is {w.n}x{w.n}, X has {n} rows")
    if n <= k:
        raise DataError(f"need more observations ({n}) than parameters ({k})")
    if not w.is_row_normalized:
        raise NumericError("W must be row-normalized before fitting")
    # with no edges the lag W y is identically zero and the likelihood
    # is flat in rho; any reported estimate would be an artifact
    if rho_fixed is None and w.indices.size == 0:
        raise DataError("W has no edges, rho is unidentified; densify the contiguity spec or pass rho_fixed")

    q, r = _check_rank(X)
    ws = w.to_scipy()
    wy = ws @ y
    b0 = np.linalg.solve(r, q.T @ y)
    bd = np.linalg.solve(r, q.T @ wy)
    e0 = y - X @ b0
    ed = wy - X @ bd
    s00 = float(e0 @ e0)
    s0d = float(e0 @ ed)
    sdd = float(ed @ ed)

    method = "eig" if n <= EIG_DENSE_LIMIT else "lu"
    lo_open, hi_open = admissible_interval(w)
    lo = lo_open + RHO_EDGE
    hi = hi_open - RHO_EDGE

    def sse(rho: float) -> float:
        return s00 - 2.0 * rho * s0d + rho * rho * sdd

    def profile_ll(rho: float) -> float:
        s = sse(rho)
        if s <= 0.0:
            raise NumericError("zero residual variance in profile likelihood")
        return -0.5 * n * math.log(s / n) + log_det_term(w, rho, method)

    if rho_fixed is not None:
        rho_hat = float(rho_fixed)
        if not (lo_open < rho_hat < hi_open):
            raise NumericError(
                f"rho_fixed={rho_hat!r} outside admissible interval ({lo_open}, {hi_open})"
            )
        ll_conc = profile_ll(rho_hat)
    else:
        grid = np.linspace(lo, hi, GRID_POINTS)
        vals = np.array([profile_ll(rho) for rho in grid])
        i = int(np.argmax(vals))
        a = grid[max(i - 1, 0)]
        b = grid[min(i + 1, GRID_POINTS - 1)]
        rho_hat, ll_conc = _golden_max(profile_ll, float(a), float(b), GOLDEN_TOL)
        if vals[i] > ll_conc:
            rho_hat, ll_conc = float(grid[i]), float(vals[i])
        if lo < 0.0 < hi:
            ll0 = profile_ll(0.0)
            if ll0 > ll_conc:
                rho_hat, ll_conc = 0.0, ll0
        if min(rho_hat - lo, hi - rho_hat) < BOUNDARY_TOL:
            raise NumericError(
                f"rho estimate {rho_hat!r} sits on the admissible boundary "
                f"({lo!r}, {hi!r}); the model is not identified here"
            )

    beta = b0 - rho_hat * bd
    s = sse(rho_hat)
    if s <= 0.0:
        raise NumericError("zero residual variance at the estimate")
    sigma2 = s / n
    loglik = ll_conc - 0.5 * n * (math.log(2.0 * math.pi) + 1.0)
    return SarModel(
        rho=float(rho_hat),
        beta=beta,
        names=names,
        sigma2=float(sigma2),
        loglik=float(loglik),
        n=n,
        w_checksum=w.checksum(),
        rho_interval=(float(lo), float(hi)),
    )


def predict(model: SarModel, design, w: SparseContiguity) -> np.ndarray:
    """Expected y under the model: solve (I - rho W) y = X beta.

    W here covers the prediction set (it need not be the training W,
    but must be row-normalized and match the design's row count).
    """
    X, _ = _unpack(design)
    if X.shape[1] != model.beta.shape[0]:
        raise DataError(
            f"design has {X.shape[1]} columns, model has {model.beta.shape[0]} coefficients"
        )
    if w.n != X.shape[0]:
        raise DataError(f"W is {w.n}x{w.n}, design has {X.shape[0]} rows")
    if not w.is_row_normalized:
        raise NumericError("W must be row-normalized for prediction")
    a = sp.identity(w.n, format="csc") - model.rho * w.to_scipy().tocsc()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", spla.MatrixRankWarning)
        out = spla.spsolve(a, X @ model.beta)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"I - rho W singular at rho={model.rho!r}; cannot predict")
    return np.asarray(out, dtype=np.float64)


def solve_power_series(
    rho: float, w: SparseContiguity, b: np.ndarray, tol: float = 1e-9, max_terms: int = 1000
) -> tuple[np.ndarray, int]:
    """(I - rho W)^-1 b as the truncated series sum_i rho^i W^i b.

    Valid only while the infinity norm of rho W is under 1; outside
    that the series diverges and the call is refused. Truncation stops
    before the first term whose infinity norm falls below tol. Returns
    the sum and the number of terms actually added.
    """
    b = np.asarray(b, dtype=np.float64).ravel()
    if b.shape != (w.n,):
        raise DataError(f"b has {b.shape[0]} entries, W is {w.n}x{w.n}")
    norm = abs(rho) * float(w.row_sums().max()) if w.nnz else 0.0
    if norm >= 1.0:
        raise NumericError(
            f"power series divergent: ||rho W||_inf = {norm!r} >= 1"
        )
    ws = w.to_scipy()
    acc = b.copy()
    term = b.copy()
    terms = 1
    for _ in range(max_terms):
        term = rho * (ws @ term)
        if float(np.abs(term).max()) < tol:
            return acc, terms
        acc += term
        terms += 1
    raise NumericError(f"power series did not converge in {max_terms} terms")


def save_model(model: SarModel, path) -> None:
    """Flat key=value export; floats use repr so they round-trip exactly."""
    lines = [
        "kind=sar",
        f"n={model.n}",
        f"rho={model.rho!r}",
        f"sigma2={model.sigma2!r}",
        f"loglik={model.loglik!r}",
        f"w_checksum={model.w_checksum}",
        f"rho_lo={model.rho_interval[0]!r}",
        f"rho_hi={model.rho_interval[1]!r}",
    ]
    for name, val in zip(model.names, model.beta):
        lines.append(f"beta.{name}={float(val)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> SarModel:
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
    if kv.get("kind") != "sar":
        raise DataError(f"{path}: not a sar model export")
    names = tuple(k[5:] for k in order if k.startswith("beta."))
    try:
        beta = np.array([float(kv[f"beta.{nm}"]) for nm in names])
        return SarModel(
            rho=float(kv["rho"]),
            beta=beta,
            names=names,
            sigma2=float(kv["sigma2"]),
            loglik=float(kv["loglik"]),
            n=int(kv["n"]),
            w_checksum=kv["w_checksum"],
            rho_interval=(float(kv["rho_lo"]), float(kv["rho_hi"])),
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: missing or bad field ({exc})") from exc
