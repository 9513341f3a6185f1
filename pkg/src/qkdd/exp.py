"""Seeded sweeps over training-set size, the three ablations, aggregation.

Every (N, repetition) cell derives its own seeds from the master seed, so
results are reproducible bit-for-bit regardless of how many workers run
the cells. The QKD_THREADS environment variable caps the worker count.
"""

import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import data, qstate
from .kernels import (
    EQK_KIND,
    KINDS,
    GramMatrix,
    ShotNoiseConfig,
    apply_shot_noise,
)
from .regress import (
    DEFAULT_RANK_CUTOFF,
    DataMatrix,
    build_data_matrix,
    compute_svd,
    effective_dim,
    predict_rows,
    solve,
    state_to_row,
)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class RankGuardError(RuntimeError):
    """Gram matrix is rank-deficient at the interpolation threshold."""


ABLATION_SV_CUTOFF = "sv_cutoff"
ABLATION_TEST_PROJECTION = "test_projection"
ABLATION_RESIDUAL = "residual_elimination"
ABLATION_MODES = (ABLATION_SV_CUTOFF, ABLATION_TEST_PROJECTION, ABLATION_RESIDUAL)


def child_seed(master: int, *parts) -> int:
    """Stable 64-bit seed derived from the master seed and a purpose path."""
    key = ":".join([str(int(master))] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def worker_count() -> int:
    env = os.environ.get("QKD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as err:
            raise ConfigError(f"QKD_THREADS must be an integer, got {env!r}") from err
    return os.cpu_count() or 1


@dataclass(frozen=True)
class AblationConfig:
    """Exactly one of the three factor ablations.

    mode "sv_cutoff" zeroes training singular values below `cutoff`;
    mode "test_projection" keeps `n_modes_kept` leading reference modes of
    the test features; mode "residual_elimination" regenerates all labels
    from an in-class observable (estimated from `m_star_sample` fresh
    points when positive, planted at random otherwise).
    """

    mode: str
    cutoff: float = 0.0
    n_modes_kept: int = 0
    m_star_sample: int = 0

    def __post_init__(self):
        if self.mode not in ABLATION_MODES:
            raise ConfigError(f"unknown ablation mode {self.mode!r}")
        if self.mode == ABLATION_SV_CUTOFF and self.cutoff < 0:
            raise ConfigError("cutoff must be nonnegative")
        if self.mode == ABLATION_TEST_PROJECTION and self.n_modes_kept < 1:
            raise ConfigError("n_modes_kept must be >= 1")


@dataclass(frozen=True)
class SweepConfig:
    dataset: object  # data.SyntheticSpec | data.TableSpec
    feature_map: qstate.FeatureMapSpec
    n_grid: tuple[int, ...]
    kind: str = EQK_KIND
    n_test: int = 100
    repetitions: int = 5
    lambda_reg: float = 0.0
    shot_noise: ShotNoiseConfig | None = None
    ablation: AblationConfig | None = None
    seed: int = 0
    share_test_across_reps: bool = False
    rank_cutoff: float = DEFAULT_RANK_CUTOFF

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kernel kind {self.kind!r}")
        grid = tuple(int(n) for n in self.n_grid)
        if len(grid) == 0:
            raise ConfigError("N grid must be nonempty")
        if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
            raise ConfigError("N grid must be strictly increasing and positive")
        object.__setattr__(self, "n_grid", grid)
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.n_test < 1:
            raise ConfigError("n_test must be >= 1")
        if self.lambda_reg < 0:
            raise ConfigError("lambda_reg must be nonnegative")


@dataclass(frozen=True)
class CurvePoint:
    n: int
    ratio: float
    mse_test_mean: float
    mse_test_std: float
    mse_train_mean: float
    min_sigma_mean: float
    accuracy_mean: float | None = None


def default_n_grid(p: int) -> tuple[int, ...]:
    """Geometric-ish grid over [p/8, 4p] with extra density near p."""
    values = {max(1, round(p * f)) for f in (0.125, 0.25, 0.5, 2.0, 4.0)}
    values |= {max(1, round(p * f)) for f in (0.75, 0.875, 1.0, 1.125, 1.25)}
    return tuple(sorted(values))


# ---------------------------------------------------------------------------
# data sources

class _SyntheticSource:
    task = data.TASK_REGRESSION

    def __init__(self, spec: data.SyntheticSpec):
        self.spec = spec
        self.dim = spec.n
        self.pca_dim = None

    def draw(self, n: int, seed: int, exclude=None):
        ds = data.synthetic(self.spec, n, seed)
        return ds.inputs, ds.labels, None


class _TableSource:
    def __init__(self, spec: data.TableSpec):
        self.spec = spec
        self.table = data.load_csv(spec.path, spec.label_column, spec.task, spec.class_pair)
        self.task = self.table.task
        self.pca_dim = spec.pca_dim
        self.dim = spec.pca_dim if spec.pca_dim else self.table.dim

    def draw(self, n: int, seed: int, exclude=None):
        pool = np.arange(self.table.n)
        if exclude is not None:
            pool = np.setdiff1d(pool, exclude, assume_unique=False)
        if n > pool.shape[0]:
            raise data.DataError(
                f"sampler exhausted: requested {n} rows, {pool.shape[0]} available"
            )
        idx = np.random.default_rng(seed).choice(pool, size=n, replace=False)
        return self.table.inputs[idx], self.table.labels[idx], idx


def make_source(dataset_spec):
    if isinstance(dataset_spec, data.SyntheticSpec):
        return _SyntheticSource(dataset_spec)
    if isinstance(dataset_spec, data.TableSpec):
        return _TableSource(dataset_spec)
    raise ConfigError(f"unsupported dataset spec {type(dataset_spec).__name__}")


# ---------------------------------------------------------------------------
# ablation operations

def ablate_sv_cutoff(dm: DataMatrix, cutoff: float) -> DataMatrix:
    """Rebuild the data matrix with singular values below `cutoff` removed."""
    if cutoff < 0:
        raise ValueError("cutoff must be nonnegative")
    if cutoff == 0.0:
        return dm
    u, s, vh = np.linalg.svd(dm.rows, full_matrices=False)
    keep = s >= cutoff
    if not np.any(keep):
        raise ValueError(f"cutoff {cutoff} removes the entire spectrum (max sigma {s[0]:.3e})")
    rows = (u[:, keep] * s[keep]) @ vh[keep]
    return DataMatrix(rows, dm.labels, dm.kind, dm.n_qubits)


def ablate_test_projection(test_states, reference: DataMatrix, n_modes_kept: int) -> np.ndarray:
    """Project vectorized test states onto leading reference singular modes.

    Returns prepared co-matrix rows (no longer physical states). The
    projection acts on the vectorization side, which keeps predictions
    real for Hermitian-vectorized training data.
    """
    factors = compute_svd(reference.rows)
    if n_modes_kept > factors.rank:
        raise ValueError(f"n_modes_kept {n_modes_kept} exceeds reference rank {factors.rank}")
    if n_modes_kept < 1:
        raise ValueError("n_modes_kept must be >= 1")
    arr = np.asarray(test_states)
    if arr.ndim == 2 and arr.shape[1] == reference.row_dim:
        rows = arr.astype(complex)
    else:
        rows = np.stack([state_to_row(s, reference.kind) for s in test_states])
    vecs = np.conj(rows).T  # (p, m) vectorized states
    basis = factors.v[:, :n_modes_kept]
    projected = basis @ (basis.conj().T @ vecs)
    return np.conj(projected).T


def plant_observable(kind: str, n_qubits: int, seed: int) -> np.ndarray:
    """Random Hermitian observable in vectorized form, unit Frobenius norm."""
    rng = np.random.default_rng(seed)
    if kind == EQK_KIND:
        dim = 2**n_qubits
        g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        h = 0.5 * (g + g.conj().T)
        return (h / np.linalg.norm(h)).reshape(-1)
    blocks = []
    for _ in range(n_qubits):
        g = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        blocks.append(0.5 * (g + g.conj().T))
    stacked = np.stack(blocks)
    return (stacked / np.linalg.norm(stacked)).reshape(-1)


def ablate_residual(cfg: SweepConfig) -> list[CurvePoint]:
    """Run a sweep with labels regenerated from an in-class observable."""
    if cfg.ablation is None or cfg.ablation.mode != ABLATION_RESIDUAL:
        raise ConfigError("ablate_residual requires ablation mode 'residual_elimination'")
    return run_sweep(cfg)


# ---------------------------------------------------------------------------
# sweep machinery

def _encode_states(fm: qstate.FeatureMapSpec, kind: str, inputs: np.ndarray) -> list:
    states = []
    for x in np.asarray(inputs):
        rho = qstate.encode(fm, x)
        states.append(rho if kind == EQK_KIND else qstate.reduce(rho))
    return states


def _rows_for(fm, kind, inputs) -> np.ndarray:
    return np.stack([state_to_row(s, kind) for s in _encode_states(fm, kind, inputs)])


@dataclass
class _RepContext:
    rep: int
    x_test_raw: np.ndarray
    y_test: np.ndarray
    test_indices: np.ndarray | None
    test_rows: np.ndarray | None  # precomputed when no per-cell PCA
    x_ref_raw: np.ndarray | None  # test-projection reference inputs
    ref_rows: np.ndarray | None
    m_star_vec: np.ndarray | None  # residual-elimination observable
    x_mstar_raw: np.ndarray | None
    y_mstar_raw: np.ndarray | None


def _prepare_rep(cfg: SweepConfig, source, rep: int) -> _RepContext:
    fm, kind = cfg.feature_map, cfg.kind
    p_eff = effective_dim(fm.n_qubits, kind)
    test_tag = 0 if cfg.share_test_across_reps else rep
    x_te, y_te, te_idx = source.draw(cfg.n_test, child_seed(cfg.seed, "test", test_tag))

    per_cell_pca = source.pca_dim is not None
    test_rows = None if per_cell_pca else _rows_for(fm, kind, x_te)

    x_ref = ref_rows = None
    if cfg.ablation is not None and cfg.ablation.mode == ABLATION_TEST_PROJECTION:
        x_ref, _, _ = source.draw(10 * p_eff, child_seed(cfg.seed, "ref", rep), exclude=te_idx)
        if not per_cell_pca:
            ref_rows = _rows_for(fm, kind, x_ref)

    m_star = x_ms = y_ms = None
    if cfg.ablation is not None and cfg.ablation.mode == ABLATION_RESIDUAL:
        if cfg.ablation.m_star_sample > 0:
            x_ms, y_ms, _ = source.draw(
                cfg.ablation.m_star_sample, child_seed(cfg.seed, "mstar", rep), exclude=te_idx
            )
            if not per_cell_pca:
                rows_ms = _rows_for(fm, kind, x_ms)
                dm_ms = DataMatrix(rows_ms, y_ms, kind, fm.n_qubits)
                m_star = solve(dm_ms, 0.0, cfg.rank_cutoff).m_vec
        else:
            m_star = plant_observable(kind, fm.n_qubits, child_seed(cfg.seed, "plant", rep))
    return _RepContext(rep, x_te, y_te, te_idx, test_rows, x_ref, ref_rows, m_star, x_ms, y_ms)


def _eval_cell(cfg: SweepConfig, source, ctx: _RepContext, n_train: int, collect_sigma: bool):
    fm, kind = cfg.feature_map, cfg.kind
    p_eff = effective_dim(fm.n_qubits, kind)
    x_tr, y_tr, _ = source.draw(
        n_train, child_seed(cfg.seed, "train", n_train, ctx.rep), exclude=ctx.test_indices
    )
    x_te, y_te = ctx.x_test_raw, ctx.y_test

    if source.pca_dim is not None:
        train_ds = data.Dataset(x_tr, y_tr, source.task, {})
        transform = data.fit_pca(train_ds, source.pca_dim)
        x_tr = data.apply_pca(transform, train_ds).inputs
        x_te = data.apply_pca(transform, data.Dataset(x_te, y_te, source.task, {})).inputs

    rows_tr = _rows_for(fm, kind, x_tr)
    test_rows = ctx.test_rows if ctx.test_rows is not None else _rows_for(fm, kind, x_te)

    ablation = cfg.ablation
    m_star = ctx.m_star_vec
    if ablation is not None and ablation.mode == ABLATION_RESIDUAL:
        if m_star is None:  # per-cell PCA with an estimated observable
            rows_ms = _rows_for(fm, kind, data.apply_pca(transform, data.Dataset(
                ctx.x_mstar_raw, ctx.y_mstar_raw, source.task, {})).inputs)
            dm_ms = DataMatrix(rows_ms, ctx.y_mstar_raw, kind, fm.n_qubits)
            m_star = solve(dm_ms, 0.0, cfg.rank_cutoff).m_vec
        y_tr = np.real(rows_tr @ m_star)
        y_te = np.real(test_rows @ m_star)

    dm = DataMatrix(rows_tr, y_tr, kind, fm.n_qubits)
    if ablation is not None and ablation.mode == ABLATION_SV_CUTOFF:
        dm = ablate_sv_cutoff(dm, ablation.cutoff)
    if ablation is not None and ablation.mode == ABLATION_TEST_PROJECTION:
        ref_rows = ctx.ref_rows
        if ref_rows is None:
            ref_rows = _rows_for(fm, kind, data.apply_pca(transform, data.Dataset(
                ctx.x_ref_raw, np.zeros(len(ctx.x_ref_raw)), source.task, {})).inputs)
        reference = DataMatrix(ref_rows, np.zeros(ref_rows.shape[0]), kind, fm.n_qubits)
        test_rows = ablate_test_projection(test_rows, reference, ablation.n_modes_kept)

    noise = cfg.shot_noise
    if noise is not None and noise.n_shots != math.inf:
        entries = np.real(dm.rows @ dm.rows.conj().T)
        k_test = np.real(test_rows @ dm.rows.conj().T)
        cell_cfg = ShotNoiseConfig(
            noise.n_shots, child_seed(noise.seed, "shots", n_train, ctx.rep)
        )
        noisy, k_test = apply_shot_noise(GramMatrix(entries, kind, fm.n_qubits), k_test, cell_cfg)
        eigvals, eigvecs = np.linalg.eigh(noisy.entries)
        if cfg.lambda_reg > 0.0:
            coef = 1.0 / (eigvals + cfg.lambda_reg)
            kept = eigvals[eigvals > 0]
        else:
            keep = eigvals > cfg.rank_cutoff * eigvals[-1]
            eigvals, eigvecs = eigvals[keep], eigvecs[:, keep]
            coef = 1.0 / eigvals
            kept = eigvals
        alpha = eigvecs @ (coef * (eigvecs.T @ dm.labels))
        preds_te = k_test @ alpha
        preds_tr = noisy.entries @ alpha
        min_sigma = float(np.sqrt(kept[kept > 0][0])) if np.any(kept > 0) else 0.0
        sigmas = np.sqrt(np.clip(kept, 0.0, None))[::-1] if collect_sigma else None
    else:
        sol = solve(dm, cfg.lambda_reg, cfg.rank_cutoff)
        if (
            ablation is None
            and kind == EQK_KIND
            and n_train == p_eff
            and sol.svd.rank < min(n_train, p_eff)
        ):
            raise RankGuardError(
                f"numerical rank {sol.svd.rank} < {min(n_train, p_eff)} at the "
                f"interpolation threshold N={n_train}; increase the feature map's n_layers"
            )
        preds_te = predict_rows(sol, test_rows)
        preds_tr = predict_rows(sol, dm.rows)
        min_sigma = float(sol.svd.sigma[-1])
        sigmas = sol.svd.sigma.copy() if collect_sigma else None

    mse_te = float(np.mean((preds_te - y_te) ** 2))
    mse_tr = float(np.mean((preds_tr - dm.labels) ** 2))
    accuracy = None
    if source.task == data.TASK_BINARY and not (
        ablation is not None and ablation.mode == ABLATION_RESIDUAL
    ):
        signs = np.where(preds_te >= 0, 1.0, -1.0)
        accuracy = float(np.mean(signs == y_te))
    return {
        "mse_test": mse_te,
        "mse_train": mse_tr,
        "min_sigma": min_sigma,
        "accuracy": accuracy,
        "sigmas": sigmas,
    }


def run_sweep(cfg: SweepConfig, spectra: dict | None = None) -> list[CurvePoint]:
    """Evaluate every (N, repetition) cell and aggregate per grid point.

    When `spectra` is a dict it is filled with {N: singular values} from
    the first repetition of each grid point.
    """
    source = make_source(cfg.dataset)
    if cfg.feature_map.n_features != source.dim:
        raise ConfigError(
            f"feature map expects {cfg.feature_map.n_features} features "
            f"but the dataset provides {source.dim}"
        )
    contexts = [_prepare_rep(cfg, source, rep) for rep in range(cfg.repetitions)]
    cells = [(rep, n) for rep in range(cfg.repetitions) for n in cfg.n_grid]

    def evaluate(cell):
        rep, n = cell
        collect = spectra is not None and rep == 0
        return cell, _eval_cell(cfg, source, contexts[rep], n, collect)

    workers = min(worker_count(), len(cells))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(evaluate, cells))
    else:
        results = dict(map(evaluate, cells))

    points = []
    p_eff = effective_dim(cfg.feature_map.n_qubits, cfg.kind)
    for n in cfg.n_grid:
        cells_n = [results[(rep, n)] for rep in range(cfg.repetitions)]
        mse_te = np.array([c["mse_test"] for c in cells_n])
        accs = [c["accuracy"] for c in cells_n]
        if spectra is not None and cells_n[0]["sigmas"] is not None:
            spectra[n] = cells_n[0]["sigmas"]
        points.append(
            CurvePoint(
                n=int(n),
                ratio=n / p_eff,
                mse_test_mean=float(np.mean(mse_te)),
                mse_test_std=float(np.std(mse_te)),
                mse_train_mean=float(np.mean([c["mse_train"] for c in cells_n])),
                min_sigma_mean=float(np.mean([c["min_sigma"] for c in cells_n])),
                accuracy_mean=None if accs[0] is None else float(np.mean(accs)),
            )
        )
    return points


def peak_height(points: list[CurvePoint]) -> float:
    """Peak prominence: max minus median of the mean test error."""
    values = np.array([p.mse_test_mean for p in points])
    return float(np.max(values) - np.median(values))


def peak_summary(points: list[CurvePoint]) -> dict:
    best = max(points, key=lambda p: p.mse_test_mean)
    return {
        "peak_N": best.n,
        "peak_ratio": best.ratio,
        "peak_value": best.mse_test_mean,
        "peak_height": peak_height(points),
    }


def write_curve_csv(points: list[CurvePoint], path) -> None:
    """Deterministic CSV dump: repr'd floats, '\\n' endings, fixed header."""
    binary = points and points[0].accuracy_mean is not None
    header = "N,ratio,mse_test_mean,mse_test_std,mse_train_mean,min_sigma_mean"
    if binary:
        header += ",accuracy_mean"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for p in points:
            cells = [
                str(p.n),
                repr(float(p.ratio)),
                repr(float(p.mse_test_mean)),
                repr(float(p.mse_test_std)),
                repr(float(p.mse_train_mean)),
                repr(float(p.min_sigma_mean)),
            ]
            if binary:
                cells.append(repr(float(p.accuracy_mean)))
            fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# JSON configuration

def config_from_dict(doc: dict) -> SweepConfig:
    """Build a SweepConfig from a parsed JSON document."""
    try:
        ds_doc = dict(doc["dataset"])
        ds_type = ds_doc.pop("type")
        if ds_type == "synthetic":
            n = int(ds_doc["n"])
            weights = ds_doc.get("weights")
            weights = data.default_weights(n) if weights is None else tuple(float(w) for w in weights)
            dataset = data.SyntheticSpec(n, weights, int(ds_doc.get("seed", 0)))
        elif ds_type == "csv":
            pair = ds_doc.get("class_pair")
            dataset = data.TableSpec(
                path=str(ds_doc["path"]),
                label_column=ds_doc["label_column"],
                task=ds_doc.get("task", data.TASK_REGRESSION),
                pca_dim=int(ds_doc["pca_dim"]) if ds_doc.get("pca_dim") else None,
                class_pair=tuple(pair) if pair else None,
            )
        else:
            raise ConfigError(f"unknown dataset type {ds_type!r}")

        fm_doc = dict(doc["feature_map"])
        feature_map = qstate.spec_from_json(fm_doc)

        kind = doc.get("kind", EQK_KIND)
        grid = doc.get("N_grid")
        if grid is None:
            grid = default_n_grid(effective_dim(feature_map.n_qubits, kind))

        noise_doc = doc.get("shot_noise")
        shot_noise = None
        if noise_doc:
            shots = noise_doc["n_shots"]
            shots = math.inf if shots in ("inf", None) else float(shots)
            shot_noise = ShotNoiseConfig(shots, int(noise_doc.get("seed", 0)))

        abl_doc = doc.get("ablation")
        ablation = None
        if abl_doc:
            ablation = AblationConfig(
                mode=abl_doc["mode"],
                cutoff=float(abl_doc.get("cutoff", 0.0)),
                n_modes_kept=int(abl_doc.get("n_modes_kept", 0)),
                m_star_sample=int(abl_doc.get("m_star_sample", 0)),
            )

        return SweepConfig(
            dataset=dataset,
            feature_map=feature_map,
            n_grid=tuple(int(n) for n in grid),
            kind=kind,
            n_test=int(doc.get("n_test", 100)),
            repetitions=int(doc.get("repetitions", 5)),
            lambda_reg=float(doc.get("lambda_reg", 0.0)),
            shot_noise=shot_noise,
            ablation=ablation,
            seed=int(doc.get("seed", 0)),
            share_test_across_reps=bool(doc.get("share_test_across_reps", False)),
            rank_cutoff=float(doc.get("rank_cutoff", DEFAULT_RANK_CUTOFF)),
        )
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"bad configuration: {err}") from err


def config_to_dict(cfg: SweepConfig) -> dict:
    """JSON-ready echo of a SweepConfig (inverse of config_from_dict)."""
    if isinstance(cfg.dataset, data.SyntheticSpec):
        dataset = {
            "type": "synthetic",
            "n": cfg.dataset.n,
            "weights": list(cfg.dataset.weights),
            "seed": cfg.dataset.seed,
        }
    else:
        dataset = {
            "type": "csv",
            "path": cfg.dataset.path,
            "label_column": cfg.dataset.label_column,
            "task": cfg.dataset.task,
            "pca_dim": cfg.dataset.pca_dim,
            "class_pair": list(cfg.dataset.class_pair) if cfg.dataset.class_pair else None,
        }
    doc = {
        "dataset": dataset,
        "feature_map": qstate.spec_to_json(cfg.feature_map),
        "kind": cfg.kind,
        "N_grid": list(cfg.n_grid),
        "n_test": cfg.n_test,
        "repetitions": cfg.repetitions,
        "lambda_reg": cfg.lambda_reg,
        "shot_noise": None
        if cfg.shot_noise is None
        else {
            "n_shots": "inf" if cfg.shot_noise.n_shots == math.inf else cfg.shot_noise.n_shots,
            "seed": cfg.shot_noise.seed,
        },
        "ablation": None
        if cfg.ablation is None
        else {
            "mode": cfg.ablation.mode,
            "cutoff": cfg.ablation.cutoff,
            "n_modes_kept": cfg.ablation.n_modes_kept,
            "m_star_sample": cfg.ablation.m_star_sample,
        },
        "seed": cfg.seed,
        "share_test_across_reps": cfg.share_test_across_reps,
        "rank_cutoff": cfg.rank_cutoff,
    }
    return doc
