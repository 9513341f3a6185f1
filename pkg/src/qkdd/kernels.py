"""Quantum kernel values, Gram matrices, and the finite-shot noise model."""

import math
from dataclasses import dataclass

import numpy as np

EQK_KIND = "eqk"
RDM_KIND = "rdm"
KINDS = (EQK_KIND, RDM_KIND)


@dataclass(frozen=True)
class GramMatrix:
    """Real symmetric kernel matrix over a set of feature states."""

    entries: np.ndarray
    kind: str
    n_qubits: int

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class ShotNoiseConfig:
    """Finite measurement budget; n_shots may be math.inf for exact kernels."""

    n_shots: float
    seed: int = 0

    def __post_init__(self):
        if self.n_shots != math.inf:
            if int(self.n_shots) != self.n_shots or self.n_shots < 1:
                raise ValueError("n_shots must be a positive integer or inf")


def eqk(rho_a: np.ndarray, rho_b: np.ndarray) -> float:
    """Embedding kernel Tr{rho_a rho_b} between two feature states."""
    rho_a = np.asarray(rho_a)
    rho_b = np.asarray(rho_b)
    if rho_a.shape != rho_b.shape:
        raise ValueError(f"state dimensions differ: {rho_a.shape} vs {rho_b.shape}")
    return float(np.real(np.vdot(rho_a.reshape(-1), rho_b.reshape(-1))))


def rdm_kernel(a: np.ndarray, b: np.ndarray) -> float:
    """Projected kernel: mean single-qubit overlap (1/n) sum_k Tr{a_k b_k}."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"rdm vector lengths differ: {a.shape} vs {b.shape}")
    n = a.shape[0]
    return float(np.real(np.vdot(a.reshape(-1), b.reshape(-1)))) / n


def _kernel_fn(kind: str):
    if kind == EQK_KIND:
        return eqk
    if kind == RDM_KIND:
        return rdm_kernel
    raise ValueError(f"unknown kernel kind {kind!r}")


def gram(states, kind: str) -> GramMatrix:
    """Pairwise kernel matrix; evaluates the upper triangle once and mirrors."""
    if len(states) == 0:
        raise ValueError("empty state list")
    shapes = {np.asarray(s).shape for s in states}
    if len(shapes) > 1:
        raise ValueError(f"mixed state shapes in gram: {sorted(shapes)}")
    kernel = _kernel_fn(kind)
    first = np.asarray(states[0])
    if kind == EQK_KIND:
        n_qubits = int(round(math.log2(first.shape[0])))
    else:
        n_qubits = first.shape[0]
    n = len(states)
    entries = np.empty((n, n), dtype=float)
    for i in range(n):
        for j in range(i, n):
            entries[i, j] = kernel(states[i], states[j])
            entries[j, i] = entries[i, j]
    return GramMatrix(entries, kind, n_qubits)


def apply_shot_noise(
    gram_matrix: GramMatrix,
    test_rows: np.ndarray | None,
    cfg: ShotNoiseConfig,
) -> tuple[GramMatrix, np.ndarray | None]:
    """Perturb kernel estimates with the binomial-overlap noise model.

    Each off-diagonal Gram entry K and each test-row entry is shifted by an
    independent Gaussian of variance K(1-K)/n_shots (diagonals need no
    estimation and stay exact). Symmetry is restored by mirroring the
    perturbed upper triangle. The matrix is then eigendecomposed, the
    eigenvalues rounded to floor(log10(n_shots/2)) decimals to mimic the
    estimator's resolution, negative eigenvalues clipped to zero, and the
    matrix reconstructed. Noise draws are indexed by entry position, never
    by evaluation order, so results are reproducible for a fixed seed.
    """
    if cfg.n_shots == math.inf:
        return gram_matrix, test_rows
    shots = float(cfg.n_shots)
    k = gram_matrix.entries
    n = k.shape[0]
    rng_gram, rng_test = [
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2)
    ]

    sigma = np.sqrt(np.clip(k * (1.0 - k), 0.0, None) / shots)
    noise = rng_gram.standard_normal((n, n)) * sigma
    upper = np.triu(noise, k=1)
    noisy = k + upper + upper.T

    eigvals, eigvecs = np.linalg.eigh(noisy)
    decimals = math.floor(math.log10(shots / 2.0))
    eigvals = np.round(eigvals, decimals)
    eigvals = np.clip(eigvals, 0.0, None)
    repaired = (eigvecs * eigvals) @ eigvecs.conj().T
    repaired = np.real(0.5 * (repaired + repaired.T))
    out_gram = GramMatrix(repaired, gram_matrix.kind, gram_matrix.n_qubits)

    out_rows = None
    if test_rows is not None:
        rows = np.atleast_2d(np.asarray(test_rows, dtype=float))
        sig_t = np.sqrt(np.clip(rows * (1.0 - rows), 0.0, None) / shots)
        noisy_rows = rows + rng_test.standard_normal(rows.shape) * sig_t
        out_rows = noisy_rows if np.asarray(test_rows).ndim > 1 else noisy_rows[0]
    return out_gram, out_rows


def write_gram_csv(gram_matrix: GramMatrix, path) -> None:
    """Dump a Gram matrix as CSV with a `# kind,n,N` header line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {gram_matrix.kind.upper()},{gram_matrix.n_qubits},{gram_matrix.n}\n")
        for row in gram_matrix.entries:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
