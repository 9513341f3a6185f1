"""Ridgeless and ridge regression over vectorized quantum feature states.

The data matrix holds one co-matrix row per training state: the complex
conjugate of the row-major vectorization, so `row @ vec(M)` evaluates
Tr{rho M} exactly. Solving goes through an explicit SVD whose factors are
retained for the spectral error decomposition.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import qstate
from .kernels import EQK_KIND, KINDS, RDM_KIND

DEFAULT_RANK_CUTOFF = 1e-10
IMAG_TOL = 1e-10

REGIME_UNDER = "under"
REGIME_OVER = "over"
REGIME_INTERPOLATION = "interpolation"


def effective_dim(n_qubits: int, kind: str) -> int:
    """Feature-space dimension used for regime labels and threshold ratios.

    4^n for the embedding kernel; the nominal 3n+2 for the projected
    kernel (its measured rank cap is probed by `measured_rank_cap`).
    """
    if kind == EQK_KIND:
        return 4**n_qubits
    if kind == RDM_KIND:
        return 3 * n_qubits + 2
    raise ValueError(f"unknown kind {kind!r}")


def state_to_row(state: np.ndarray, kind: str) -> np.ndarray:
    """Co-matrix row for one feature state (conjugated vectorization).

    For the projected kernel the per-qubit 2x2 blocks are stacked and
    scaled by 1/sqrt(n) so that row inner products reproduce the kernel.
    """
    state = np.asarray(state, dtype=complex)
    if kind == EQK_KIND:
        return np.conj(state.reshape(-1))
    if kind == RDM_KIND:
        n = state.shape[0]
        return np.conj(state.reshape(-1)) / math.sqrt(n)
    raise ValueError(f"unknown kind {kind!r}")


def _as_row(state, kind: str, row_dim: int) -> np.ndarray:
    arr = np.asarray(state)
    if arr.ndim == 1:
        if arr.shape[0] != row_dim:
            raise ValueError(f"row length {arr.shape[0]} != {row_dim}")
        return arr.astype(complex)
    return state_to_row(arr, kind)


def hermitize_rows(rows: np.ndarray, kind: str, n_qubits: int) -> np.ndarray:
    """Project co-matrix rows back onto the Hermitian-vectorized subspace.

    Rebuilt rows (SVD truncation, mode projection) sit in this subspace up
    to float error; without the projection that error is amplified by the
    near-singular solve and leaks into prediction imaginary parts.
    """
    rows = np.asarray(rows, dtype=complex)
    n = rows.shape[0]
    if kind == EQK_KIND:
        dim = 2**n_qubits
        mats = np.conj(rows).reshape(-1, dim, dim)
    else:
        mats = np.conj(rows).reshape(-1, 2, 2)
    mats = 0.5 * (mats + np.conj(np.transpose(mats, (0, 2, 1))))
    return np.conj(mats.reshape(n, -1))


@dataclass(frozen=True)
class DataMatrix:
    """N co-matrix rows of vectorized feature states plus their labels."""

    rows: np.ndarray
    labels: np.ndarray
    kind: str
    n_qubits: int

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def row_dim(self) -> int:
        return self.rows.shape[1]

    @property
    def p_effective(self) -> int:
        return effective_dim(self.n_qubits, self.kind)


def build_data_matrix(states, labels, kind: str) -> DataMatrix:
    """Stack feature states into a data matrix with aligned labels."""
    labels = np.asarray(labels, dtype=float)
    if len(states) != labels.shape[0] or len(states) < 1:
        raise ValueError("need equally many states and labels, at least one")
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    shapes = {np.asarray(s).shape for s in states}
    if len(shapes) > 1:
        raise ValueError(f"heterogeneous state shapes: {sorted(shapes)}")
    rows = np.stack([state_to_row(s, kind) for s in states])
    first = np.asarray(states[0])
    if kind == EQK_KIND:
        n_qubits = int(round(math.log2(first.shape[0])))
    else:
        n_qubits = first.shape[0]
    return DataMatrix(rows, labels, kind, n_qubits)


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD of the data matrix with small singular values dropped."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    cutoff: float

    @property
    def rank(self) -> int:
        return self.sigma.shape[0]


def compute_svd(rows: np.ndarray, rank_cutoff: float = DEFAULT_RANK_CUTOFF) -> SvdFactors:
    """SVD with relative rank cutoff; rejects an all-zero data matrix."""
    u, s, vh = np.linalg.svd(rows, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        raise ValueError("all-zero data matrix has no meaningful solution")
    keep = s > rank_cutoff * s[0]
    return SvdFactors(u[:, keep], s[keep], vh[keep].conj().T, rank_cutoff)


@dataclass(frozen=True)
class RegressionSolution:
    """Fitted observable in vectorized form, with its SVD retained."""

    m_vec: np.ndarray
    regime: str
    lambda_reg: float
    svd: SvdFactors
    kind: str
    n_qubits: int

    @property
    def row_dim(self) -> int:
        return self.m_vec.shape[0]

    def observable(self) -> np.ndarray:
        """De-vectorized observable (square matrix for the embedding kernel,
        stacked 2x2 blocks for the projected kernel)."""
        if self.kind == EQK_KIND:
            dim = 2**self.n_qubits
            return self.m_vec.reshape(dim, dim)
        return self.m_vec.reshape(self.n_qubits, 2, 2)

    def json_dict(self) -> dict:
        return {
            "regime": self.regime,
            "lambda": self.lambda_reg,
            "sigma": [float(s) for s in self.svd.sigma],
        }


def classify_regime(n: int, p: int) -> str:
    if n > p:
        return REGIME_UNDER
    if n < p:
        return REGIME_OVER
    return REGIME_INTERPOLATION


def solve(
    dm: DataMatrix,
    lambda_reg: float = 0.0,
    rank_cutoff: float = DEFAULT_RANK_CUTOFF,
) -> RegressionSolution:
    """Least-squares / minimum-norm fit through the pseudoinverse.

    With lambda_reg = 0 this is M = V S^+ U^dag Y, which covers the unique
    least-squares solution when N exceeds the feature dimension and the
    minimum-norm interpolant when it does not. Positive lambda_reg applies
    the ridge filter s/(s^2 + lambda) instead of 1/s.
    """
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be nonnegative")
    factors = compute_svd(dm.rows, rank_cutoff)
    if lambda_reg == 0.0:
        filt = 1.0 / factors.sigma
    else:
        filt = factors.sigma / (factors.sigma**2 + lambda_reg)
    m_vec = factors.v @ (filt * (factors.u.conj().T @ dm.labels))
    regime = classify_regime(dm.n, dm.p_effective)
    return RegressionSolution(m_vec, regime, lambda_reg, factors, dm.kind, dm.n_qubits)


def _checked_real(value: complex, what: str) -> float:
    if abs(np.imag(value)) > IMAG_TOL:
        raise ValueError(f"{what} has imaginary part {np.imag(value):.3e}")
    return float(np.real(value))


def predict(sol: RegressionSolution, state) -> float:
    """Model output Tr{rho_t M} on a test state (or a prepared row)."""
    row = _as_row(state, sol.kind, sol.row_dim)
    return _checked_real(row @ sol.m_vec, "prediction")


def predict_rows(sol: RegressionSolution, rows: np.ndarray) -> np.ndarray:
    """Vectorized predictions for a stack of co-matrix rows."""
    values = np.asarray(rows) @ sol.m_vec
    worst = float(np.max(np.abs(values.imag))) if values.size else 0.0
    if worst > IMAG_TOL:
        raise ValueError(f"predictions have imaginary part up to {worst:.3e}")
    return values.real


def residual_vector(dm: DataMatrix, m_star) -> np.ndarray:
    """Training residuals E = Y - D M* of a reference observable."""
    m_vec = m_star.m_vec if isinstance(m_star, RegressionSolution) else np.asarray(m_star)
    fitted = dm.rows @ m_vec
    worst = float(np.max(np.abs(fitted.imag))) if fitted.size else 0.0
    if worst > 1e-9:
        raise ValueError(f"reference predictions have imaginary part up to {worst:.3e}")
    return dm.labels - fitted.real


def estimate_expected_minimizer(
    sampler,
    m_large: int,
    seed: int,
    kind: str = EQK_KIND,
    rank_cutoff: float = DEFAULT_RANK_CUTOFF,
) -> RegressionSolution:
    """Fit on a large fresh sample as a stand-in for the population optimum.

    `sampler(n, seed)` must return `(states, labels)`; m_large should be
    a generous multiple of the feature dimension (10x by convention).
    """
    states, labels = sampler(m_large, seed)
    dm = build_data_matrix(states, labels, kind)
    return solve(dm, 0.0, rank_cutoff)


@dataclass(frozen=True)
class ErrorDecomposition:
    """Per-singular-mode factorization of the test-prediction difference.

    Mode r contributes (1/sigma_r) * overlap_r * residual_proj_r; the sum
    is the variance-like term shared by both regimes, and the projector
    deficit (V V^dag - I) applied to the reference observable gives the
    bias-like term that exists only when interpolating.
    """

    inv_sigma: np.ndarray
    overlaps: np.ndarray
    residual_proj: np.ndarray
    variance_like: float
    bias_like: float
    total_diff: float
    y_t: float
    y_star_t: float

    @property
    def modes(self) -> list[tuple[float, complex, complex]]:
        return list(zip(self.inv_sigma, self.overlaps, self.residual_proj))

    def json_dict(self) -> dict:
        return {
            "variance_like": self.variance_like,
            "bias_like": self.bias_like,
            "total_diff": self.total_diff,
        }


def decompose_error(
    sol: RegressionSolution,
    m_star,
    dm: DataMatrix,
    rho_t,
    y_t: float,
) -> ErrorDecomposition:
    """Split predict(sol) - predict(m_star) into spectral factors."""
    if sol.lambda_reg != 0.0:
        raise ValueError("decomposition requires a ridgeless solution")
    if sol.svd is None:
        raise ValueError("solution is missing its SVD factors")
    m_star_vec = m_star.m_vec if isinstance(m_star, RegressionSolution) else np.asarray(m_star)
    row_t = _as_row(rho_t, sol.kind, sol.row_dim)
    e_vec = residual_vector(dm, m_star_vec)

    overlaps = row_t @ sol.svd.v
    residual_proj = sol.svd.u.conj().T @ e_vec
    inv_sigma = 1.0 / sol.svd.sigma
    variance_like = _checked_real(
        np.sum(inv_sigma * overlaps * residual_proj), "variance-like term"
    )

    if sol.regime == REGIME_UNDER:
        bias_like = 0.0
    else:
        projected = sol.svd.v @ (sol.svd.v.conj().T @ m_star_vec)
        bias_like = _checked_real(row_t @ (projected - m_star_vec), "bias-like term")

    y_star_t = _checked_real(row_t @ m_star_vec, "reference prediction")
    total_diff = variance_like + bias_like
    return ErrorDecomposition(
        inv_sigma=inv_sigma,
        overlaps=overlaps,
        residual_proj=residual_proj,
        variance_like=variance_like,
        bias_like=bias_like,
        total_diff=total_diff,
        y_t=float(y_t),
        y_star_t=y_star_t,
    )


def mse(sol: RegressionSolution, test_set, reference) -> float:
    """Mean squared error against labels or a reference solution.

    `test_set` is a list of states or a 2-D array of prepared rows;
    `reference` is either a label vector or a RegressionSolution whose
    predictions act as ground truth.
    """
    arr = np.asarray(test_set)
    if arr.ndim == 2 and arr.shape[1] == sol.row_dim:
        rows = arr.astype(complex)
    else:
        rows = np.stack([_as_row(s, sol.kind, sol.row_dim) for s in test_set])
    if rows.shape[0] == 0:
        raise ValueError("empty test set")
    preds = predict_rows(sol, rows)
    if isinstance(reference, RegressionSolution):
        target = predict_rows(reference, rows)
    else:
        target = np.asarray(reference, dtype=float)
    return float(np.mean((preds - target) ** 2))


def measured_rank_cap(spec, kind: str, n_samples: int | None = None, seed: int = 0) -> int:
    """Numerical rank of a generously sized data matrix for a feature map.

    Quantifies how many feature-space directions the encoding actually
    explores; the projected kernel lands below its 4n raw row length.
    """
    p = effective_dim(spec.n_qubits, kind)
    n_samples = n_samples or max(4 * p, 64)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(spec.input_low, spec.input_high, size=(n_samples, spec.n_features))
    states = []
    for x in xs:
        rho = qstate.encode(spec, x)
        states.append(rho if kind == EQK_KIND else qstate.reduce(rho))
    dm = build_data_matrix(states, np.zeros(n_samples), kind)
    s = np.linalg.svd(dm.rows, compute_uv=False)
    return int(np.sum(s > DEFAULT_RANK_CUTOFF * s[0]))
