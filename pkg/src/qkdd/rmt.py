"""Marchenko-Pastur density and empirical spectra of data matrices."""

import math
from dataclasses import dataclass

import numpy as np

from . import qstate
from .kernels import EQK_KIND
from .regress import DEFAULT_RANK_CUTOFF, DataMatrix, build_data_matrix

HIST_BINS = 40
HIST_UPPER_MARGIN = 1.1


@dataclass(frozen=True)
class MpLaw:
    """Limiting spectral law of a sample covariance at ratio c = p/N."""

    c: float

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("ratio c must be positive")

    @property
    def lambda_minus(self) -> float:
        return (1.0 - math.sqrt(self.c)) ** 2

    @property
    def lambda_plus(self) -> float:
        return (1.0 + math.sqrt(self.c)) ** 2


def mp_density(law: MpLaw, x) -> np.ndarray | float:
    """Continuous density f_c(x); zero outside the support, x must be > 0."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("density is defined for x > 0 only")
    lo, hi = law.lambda_minus, law.lambda_plus
    inside = (arr >= lo) & (arr <= hi)
    out = np.zeros_like(arr)
    xs = arr[inside]
    out[inside] = np.sqrt((xs - lo) * (hi - xs)) / (2.0 * math.pi * xs * law.c)
    return out if arr.ndim else float(out)


def mp_mass(law: MpLaw, lo: float, hi: float, n_points: int = 1000) -> float:
    """Integral of f_c over [lo, hi] by quadrature in u = sqrt(x).

    The substitution removes the 1/sqrt(x) divergence at a zero lower
    edge, which matters exactly at the interpolation ratio c = 1.
    """
    lo = max(lo, law.lambda_minus, 0.0)
    hi = min(hi, law.lambda_plus)
    if hi <= lo:
        return 0.0
    u = np.linspace(math.sqrt(lo), math.sqrt(hi), n_points)
    x = u**2
    lm, lp = law.lambda_minus, law.lambda_plus
    g = np.sqrt(np.clip((x - lm) * (lp - x), 0.0, None)) / (math.pi * law.c * np.where(u > 0, u, 1.0))
    if u[0] == 0.0:  # only at c = 1, where the integrand limit is sqrt(lp)/(pi*c)
        g[0] = math.sqrt(lp) / (math.pi * law.c)
    return float(np.trapezoid(g, u))


@dataclass(frozen=True)
class EmpiricalSpectrum:
    """Descending eigenvalues of D^dag D, padded with zeros up to p."""

    eigenvalues: np.ndarray
    n_dim: int
    n_samples: int


def empirical_spectrum(dm, normalize: bool = False) -> EmpiricalSpectrum:
    """Spectrum of the (optionally 1/N-scaled) sample second-moment matrix.

    Accepts a DataMatrix or any raw (N, p) array. Eigenvalues are the
    squared singular values of the matrix, padded with zeros to length p.
    """
    rows = dm.rows if isinstance(dm, DataMatrix) else np.asarray(dm)
    n, p = rows.shape
    svals = np.linalg.svd(rows, compute_uv=False)
    eigs = np.zeros(p)
    eigs[: svals.shape[0]] = svals**2
    if normalize:
        eigs = eigs / n
    eigs = np.sort(eigs)[::-1]
    return EmpiricalSpectrum(eigs, p, n)


def histogram_l1_distance(
    eigenvalues: np.ndarray, law: MpLaw, n_bins: int = HIST_BINS
) -> float:
    """L1 distance between a binned spectrum and the limiting density.

    Fixed test geometry: n_bins uniform bins over [0, lambda_plus * 1.1];
    the reference is the bin-averaged (not midpoint) density.
    """
    eigs = np.asarray(eigenvalues, dtype=float)
    upper = law.lambda_plus * HIST_UPPER_MARGIN
    edges = np.linspace(0.0, upper, n_bins + 1)
    width = edges[1] - edges[0]
    counts, _ = np.histogram(eigs, bins=edges)
    empirical = counts / (eigs.size * width)
    theory = np.array([mp_mass(law, lo, hi) / width for lo, hi in zip(edges[:-1], edges[1:])])
    return float(np.sum(np.abs(empirical - theory)) * width)


def gaussian_baseline_l1(
    p: int, n: int, seed: int, trials: int = 20, n_bins: int = HIST_BINS
) -> dict:
    """MP check on i.i.d. Gaussian matrices: pooled-histogram L1 and edge mass."""
    law = MpLaw(p / n)
    rng = np.random.default_rng(seed)
    pooled = []
    for _ in range(trials):
        x = rng.standard_normal((n, p))
        pooled.append(empirical_spectrum(x, normalize=True).eigenvalues)
    eigs = np.concatenate(pooled)
    l1 = histogram_l1_distance(eigs, law, n_bins)
    edge_fraction = float(np.mean(eigs > law.lambda_plus * 1.05))
    return {
        "p": p,
        "n": n,
        "trials": trials,
        "l1_distance": l1,
        "edge_fraction": edge_fraction,
        "lambda_plus": law.lambda_plus,
    }


def min_singular_curve(
    sampler,
    spec,
    n_grid,
    repetitions: int,
    seed: int,
    kind: str = EQK_KIND,
    rank_cutoff: float = DEFAULT_RANK_CUTOFF,
) -> list[tuple[int, float]]:
    """Mean smallest retained singular value of D over a grid of sample sizes.

    `sampler(n, seed)` supplies raw inputs (and labels, ignored here);
    seeds are derived per (N, repetition) cell so the sweep is
    reproducible and parallelizable.
    """
    from .exp import child_seed  # local import to avoid a module cycle

    if len(n_grid) == 0:
        raise ValueError("n_grid must be nonempty")
    table = []
    for n in n_grid:
        values = []
        for rep in range(repetitions):
            xs, _ = sampler(n, child_seed(seed, "minsv", n, rep))
            states = []
            for x in np.asarray(xs):
                rho = qstate.encode(spec, x)
                states.append(rho if kind == EQK_KIND else qstate.reduce(rho))
            dm = build_data_matrix(states, np.zeros(len(states)), kind)
            svals = np.linalg.svd(dm.rows, compute_uv=False)
            kept = svals[svals > rank_cutoff * svals[0]]
            values.append(float(kept[-1]))
        table.append((int(n), float(np.mean(values))))
    return table


def write_density_csv(law: MpLaw, path, n_points: int = 400) -> None:
    """Two-column (x, f) dump of the limiting density over its support."""
    lo = max(law.lambda_minus, law.lambda_plus * 1e-6)
    xs = np.linspace(lo, law.lambda_plus, n_points)
    fs = mp_density(law, xs)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,f\n")
        for x, f in zip(xs, fs):
            fh.write(f"{repr(float(x))},{repr(float(f))}\n")


def write_spectrum_csv(spectrum: EmpiricalSpectrum, path, n_bins: int = HIST_BINS) -> None:
    """Two-column (x, f) histogram-density dump of an empirical spectrum."""
    eigs = spectrum.eigenvalues
    upper = float(eigs[0]) * HIST_UPPER_MARGIN if eigs[0] > 0 else 1.0
    edges = np.linspace(0.0, upper, n_bins + 1)
    counts, _ = np.histogram(eigs, bins=edges)
    width = edges[1] - edges[0]
    centers = 0.5 * (edges[:-1] + edges[1:])
    density = counts / (eigs.size * width)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,f\n")
        for x, f in zip(centers, density):
            fh.write(f"{repr(float(x))},{repr(float(f))}\n")
