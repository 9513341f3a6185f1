"""Exact simulation of data-encoding circuits on a few qubits.

A feature map sends a classical input vector x to the density matrix
rho(x) = S(x) rho0 S(x)^dagger, where S(x) is a product of single-qubit
rotations exp(-i x_k H / 2) interleaved with fixed entangling gates.
Everything here is dense linear algebra; intended for n <= 5 qubits.

Qubit 0 is the most significant bit: basis state |q0 q1 ... q_{n-1}>
has index q0*2^(n-1) + ... + q_{n-1}. Density matrices are vectorized
row-major (C order), which makes the vectorized inner product
<<sigma|rho>> equal to Tr{sigma rho} for Hermitian arguments.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

HERMITICITY_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
    "zero": np.zeros((2, 2), dtype=complex),
}

GENERATOR_FAMILY = "pauli-y-z"
ENTANGLER_FAMILY = "cnot-ring"


@dataclass(frozen=True)
class Gate:
    """One circuit element: a data rotation or a fixed entangler.

    Rotations carry the feature index whose value becomes the angle;
    entanglers carry no data dependence (qubits = (control, target)).
    """

    layer: int
    feature: int | None
    qubits: tuple[int, ...]
    generator: str
    is_entangler: bool = False


@dataclass(frozen=True)
class FeatureMapSpec:
    """Static description of a data-encoding circuit."""

    n_qubits: int
    n_features: int
    n_layers: int
    gates: tuple[Gate, ...]
    generator_norm: float
    input_low: float = -math.pi / 2
    input_high: float = math.pi / 2

    def __post_init__(self):
        validate_spec(self)


def validate_spec(spec: FeatureMapSpec) -> None:
    """Check the product-form invariants of a feature map."""
    if spec.n_qubits < 1 or spec.n_features < 1 or spec.n_layers < 1:
        raise ValueError("n_qubits, n_features and n_layers must be positive")
    seen: dict[int, list[int]] = {l: [] for l in range(spec.n_layers)}
    max_norm = 0.0
    for g in spec.gates:
        if g.is_entangler:
            if g.feature is not None:
                raise ValueError("entanglers must not depend on a feature")
            continue
        if g.feature is None or not 0 <= g.feature < spec.n_features:
            raise ValueError(f"rotation with invalid feature index {g.feature}")
        if g.generator not in PAULI:
            raise ValueError(f"unknown generator {g.generator!r}")
        seen[g.layer].append(g.feature)
        max_norm = max(max_norm, _operator_norm(PAULI[g.generator]))
    for layer, feats in seen.items():
        if sorted(feats) != list(range(spec.n_features)):
            raise ValueError(
                f"layer {layer} must use every feature exactly once, got {sorted(feats)}"
            )
    if abs(max_norm - spec.generator_norm) > 1e-12:
        raise ValueError(
            f"generator_norm {spec.generator_norm} != max generator norm {max_norm}"
        )


def default_feature_map(
    n_qubits: int, n_features: int | None = None, n_layers: int = 4
) -> FeatureMapSpec:
    """Build the shipped rotation family: Y/Z encodings plus a CNOT ring.

    Per layer, feature slots are dealt round-robin onto qubits with the
    rotation axis alternating between Y and Z; the feature occupying each
    slot rotates by one position per layer so every feature meets every
    qubit and both axes. Each layer ends with a CNOT ring (skipped on a
    single qubit). Every feature appears exactly once per layer, so the
    map has the product form required by the sqrt(d*L) continuity bound.
    """
    d = n_qubits if n_features is None else n_features
    n = n_qubits
    gates: list[Gate] = []
    for layer in range(n_layers):
        for slot in range(d):
            feature = (slot + layer) % d
            qubit = slot % n
            axis = "y" if (slot // n + layer) % 2 == 0 else "z"
            gates.append(Gate(layer, feature, (qubit,), axis))
        if n > 1:
            for q in range(n):
                gates.append(Gate(layer, None, (q, (q + 1) % n), "cnot", True))
    return FeatureMapSpec(n, d, n_layers, tuple(gates), generator_norm=1.0)


def zero_feature_map(n_qubits: int, n_features: int = 1, n_layers: int = 1) -> FeatureMapSpec:
    """A constant map (all generators zero); useful as a degenerate case."""
    gates = tuple(
        Gate(layer, k, (k % n_qubits,), "zero")
        for layer in range(n_layers)
        for k in range(n_features)
    )
    return FeatureMapSpec(n_qubits, n_features, n_layers, gates, generator_norm=0.0)


def spec_to_json(spec: FeatureMapSpec) -> dict:
    """Serialize a default-family spec to its four-knob JSON document."""
    canonical = default_feature_map(spec.n_qubits, spec.n_features, spec.n_layers)
    if canonical.gates != spec.gates:
        raise ValueError("only default-family feature maps are JSON-serializable")
    return {
        "n_qubits": spec.n_qubits,
        "n_features": spec.n_features,
        "n_layers": spec.n_layers,
        "generator": GENERATOR_FAMILY,
        "entangler": ENTANGLER_FAMILY,
    }


def spec_from_json(doc: dict) -> FeatureMapSpec:
    """Rebuild a feature map from its JSON document."""
    if doc.get("generator", GENERATOR_FAMILY) != GENERATOR_FAMILY:
        raise ValueError(f"unsupported generator family {doc.get('generator')!r}")
    if doc.get("entangler", ENTANGLER_FAMILY) != ENTANGLER_FAMILY:
        raise ValueError(f"unsupported entangler family {doc.get('entangler')!r}")
    return default_feature_map(
        int(doc["n_qubits"]),
        int(doc.get("n_features") or doc["n_qubits"]),
        int(doc.get("n_layers", 4)),
    )


def load_spec(path) -> FeatureMapSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_json(json.load(fh))


# ---------------------------------------------------------------------------
# state validation

def check_state_vector(psi: np.ndarray) -> int:
    """Validate a pure state; returns its qubit count."""
    psi = np.asarray(psi)
    if psi.ndim != 1:
        raise ValueError("state vector must be one-dimensional")
    n = int(round(math.log2(psi.size)))
    if 2**n != psi.size:
        raise ValueError(f"state vector length {psi.size} is not a power of two")
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > 1e-12:
        raise ValueError(f"state vector norm {norm} != 1")
    return n


def check_density_matrix(rho: np.ndarray) -> int:
    """Validate Hermiticity, unit trace and positivity; returns qubit count."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    n = int(round(math.log2(rho.shape[0])))
    if 2**n != rho.shape[0]:
        raise ValueError(f"dimension {rho.shape[0]} is not a power of two")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > HERMITICITY_TOL:
        raise ValueError(f"not Hermitian: max deviation {herm:.3e}")
    tr = rho.trace()
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValueError(f"trace {tr} != 1")
    smallest = float(np.linalg.eigvalsh(rho)[0])
    if smallest < -PSD_TOL:
        raise ValueError(f"not PSD: smallest eigenvalue {smallest:.3e}")
    return n


def check_rdm_vector(rdms: np.ndarray) -> int:
    """Validate a stack of single-qubit reduced states; returns its length."""
    rdms = np.asarray(rdms)
    if rdms.ndim != 3 or rdms.shape[1:] != (2, 2):
        raise ValueError("rdm vector must have shape (n, 2, 2)")
    for k in range(rdms.shape[0]):
        check_density_matrix(rdms[k])
    return rdms.shape[0]


# ---------------------------------------------------------------------------
# circuit simulation

def _operator_norm(mat: np.ndarray) -> float:
    if mat.size == 0 or not np.any(mat):
        return 0.0
    return float(np.linalg.svd(mat, compute_uv=False)[0])


def operator_norm(mat: np.ndarray) -> float:
    """Largest singular value of a dense matrix."""
    return _operator_norm(np.asarray(mat, dtype=complex))


def _rotation_matrix(axis: str, angle: float) -> np.ndarray:
    # exp(-i*angle*P/2); P^2 = I for Pauli generators, identity for "zero".
    if axis == "zero":
        return np.eye(2, dtype=complex)
    half = 0.5 * angle
    return math.cos(half) * np.eye(2, dtype=complex) - 1j * math.sin(half) * PAULI[axis]


def _apply_single(tensor: np.ndarray, gate: np.ndarray, qubit: int) -> np.ndarray:
    out = np.tensordot(gate, tensor, axes=([1], [qubit]))
    return np.moveaxis(out, 0, qubit)


def _apply_cnot(tensor: np.ndarray, control: int, target: int) -> np.ndarray:
    out = tensor.copy()
    sel = [slice(None)] * tensor.ndim
    sel[control] = 1
    sub = tensor[tuple(sel)]
    flip_axis = target if target < control else target - 1
    out[tuple(sel)] = np.flip(sub, axis=flip_axis)
    return out


def _run_gates(tensor: np.ndarray, spec: FeatureMapSpec, x: np.ndarray) -> np.ndarray:
    for g in spec.gates:
        if g.is_entangler:
            tensor = _apply_cnot(tensor, g.qubits[0], g.qubits[1])
        else:
            tensor = _apply_single(tensor, _rotation_matrix(g.generator, x[g.feature]), g.qubits[0])
    return tensor


def circuit_unitary(spec: FeatureMapSpec, x) -> np.ndarray:
    """Dense 2^n x 2^n unitary S(x) of the encoding circuit."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n_features,):
        raise ValueError(f"expected {spec.n_features} features, got shape {x.shape}")
    dim = 2**spec.n_qubits
    # Run all basis columns through the circuit at once; the trailing axis
    # indexes columns and is untouched by the gate contractions.
    tensor = np.eye(dim, dtype=complex).reshape((2,) * spec.n_qubits + (dim,))
    tensor = _run_gates(tensor, spec, x)
    return tensor.reshape(dim, dim)


def encode(spec: FeatureMapSpec, x, rho0: np.ndarray | None = None) -> np.ndarray:
    """Feature state S(x) rho0 S(x)^dagger as a dense density matrix.

    rho0 may be a state vector or a density matrix; defaults to |0...0>.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n_features,):
        raise ValueError(f"expected {spec.n_features} features, got shape {x.shape}")
    dim = 2**spec.n_qubits
    if rho0 is None or (np.asarray(rho0).ndim == 1):
        if rho0 is None:
            psi0 = np.zeros(dim, dtype=complex)
            psi0[0] = 1.0
        else:
            psi0 = np.asarray(rho0, dtype=complex)
            if check_state_vector(psi0) != spec.n_qubits:
                raise ValueError("initial state has the wrong number of qubits")
        tensor = _run_gates(psi0.reshape((2,) * spec.n_qubits), spec, x)
        psi = tensor.reshape(dim)
        return np.outer(psi, psi.conj())
    rho0 = np.asarray(rho0, dtype=complex)
    if check_density_matrix(rho0) != spec.n_qubits:
        raise ValueError("initial state has the wrong number of qubits")
    unitary = circuit_unitary(spec, x)
    return unitary @ rho0 @ unitary.conj().T


def vectorize(rho: np.ndarray) -> np.ndarray:
    """Row-major vectorization |rho>> of a density matrix."""
    rho = np.asarray(rho, dtype=complex)
    return rho.reshape(-1).copy()


def hs_inner(sigma_vec: np.ndarray, rho_vec: np.ndarray) -> complex:
    """Vectorized inner product <<sigma|rho>>; equals Tr{sigma rho} for Hermitian inputs."""
    return complex(np.vdot(sigma_vec, rho_vec))


def reduce(rho: np.ndarray) -> np.ndarray:
    """Vector of single-qubit reduced density matrices, shape (n, 2, 2)."""
    rho = np.asarray(rho, dtype=complex)
    n = int(round(math.log2(rho.shape[0])))
    if 2**n != rho.shape[0] or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix dimension must be a power of two")
    t = rho.reshape((2,) * (2 * n))
    letters = "abcdefghijklm"
    out = np.empty((n, 2, 2), dtype=complex)
    for k in range(n):
        rows = "".join(letters[m] for m in range(n))
        cols = "".join(letters[m] if m != k else letters[n] for m in range(n))
        out[k] = np.einsum(f"{rows}{cols}->{letters[k]}{letters[n]}", t)
    return out


def partial_trace(rho: np.ndarray, keep: tuple[int, ...]) -> np.ndarray:
    """Trace out every qubit not listed in `keep` (order preserved)."""
    rho = np.asarray(rho, dtype=complex)
    n = int(round(math.log2(rho.shape[0])))
    keep = tuple(keep)
    t = rho.reshape((2,) * (2 * n))
    letters = "abcdefghijklmnopqrstuvwx"
    rows = "".join(letters[m] for m in range(n))
    cols = "".join(
        letters[n + keep.index(m)] if m in keep else letters[m] for m in range(n)
    )
    out = "".join(letters[m] for m in keep) + "".join(letters[n + i] for i in range(len(keep)))
    dim = 2 ** len(keep)
    return np.einsum(f"{rows}{cols}->{out}", t).reshape(dim, dim)


# ---------------------------------------------------------------------------
# continuity diagnostics

def lipschitz_bound(spec: FeatureMapSpec) -> float:
    """Continuity constant sqrt(d*L)*lambda of the product-form encoding."""
    return math.sqrt(spec.n_features * spec.n_layers) * spec.generator_norm


@dataclass(frozen=True)
class LipschitzReport:
    max_ratio: float
    bound: float
    violations: int
    n_pairs: int

    def json_dict(self) -> dict:
        return {
            "max_ratio": self.max_ratio,
            "bound": self.bound,
            "violations": self.violations,
            "n_pairs": self.n_pairs,
        }


def verify_lipschitz(spec: FeatureMapSpec, n_pairs: int, seed: int) -> LipschitzReport:
    """Sample input pairs from the spec's box and test the continuity bound.

    The reported ratio is ||rho(x)-rho(x')||_op / ||x-x'||_2; a violation
    is a ratio exceeding the bound by more than 1e-9. Coincident pairs are
    skipped rather than divided by zero.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    bound = lipschitz_bound(spec)
    max_ratio = 0.0
    violations = 0
    for _ in range(n_pairs):
        x = rng.uniform(spec.input_low, spec.input_high, size=spec.n_features)
        x2 = rng.uniform(spec.input_low, spec.input_high, size=spec.n_features)
        dist = float(np.linalg.norm(x - x2))
        if dist == 0.0:
            continue
        ratio = operator_norm(encode(spec, x) - encode(spec, x2)) / dist
        max_ratio = max(max_ratio, ratio)
        if ratio > bound + 1e-9:
            violations += 1
    return LipschitzReport(max_ratio, bound, violations, n_pairs)
