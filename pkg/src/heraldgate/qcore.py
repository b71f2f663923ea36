"""Labeled tensor-product states, operators and the few channel primitives the
rest of the package is written in.

Every object carries a :class:`HilbertLabel`, an ordered tuple of
``(name, dim)`` subsystems.  Matrices are dense ``complex128``; the largest
space we ever build is a few hundred dimensions.

Conditional branches are kept sub-normalized: the squared norm (or trace) is
the probability of having landed in that branch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ATOM_A = "atom-a"
ATOM_B = "atom-b"
POL = "polarization"

ATOL = 1e-10


class LabelError(ValueError):
    """Raised for name collisions, unknown subsystems and dimension mismatches."""


@dataclass(frozen=True)
class HilbertLabel:
    subsystems: tuple[tuple[str, int], ...]

    def __post_init__(self):
        names = [n for n, _ in self.subsystems]
        if len(set(names)) != len(names):
            raise LabelError(f"duplicate subsystem names in {names}")
        for name, dim in self.subsystems:
            if int(dim) < 1:
                raise LabelError(f"subsystem {name!r} has non-positive dimension {dim}")

    @classmethod
    def of(cls, *subsystems: tuple[str, int]) -> "HilbertLabel":
        return cls(tuple((str(n), int(d)) for n, d in subsystems))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.subsystems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.subsystems)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims, dtype=int)) if self.subsystems else 1

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise LabelError(f"unknown subsystem {name!r}; have {self.names}") from None

    def concat(self, other: "HilbertLabel") -> "HilbertLabel":
        clash = set(self.names) & set(other.names)
        if clash:
            raise LabelError(f"subsystem name collision: {sorted(clash)}")
        return HilbertLabel(self.subsystems + other.subsystems)

    def restrict(self, names: Iterable[str]) -> "HilbertLabel":
        keep = set(names)
        for n in keep:
            self.index(n)
        return HilbertLabel(tuple(s for s in self.subsystems if s[0] in keep))


QUBIT_A = HilbertLabel.of((ATOM_A, 2))
QUBIT_B = HilbertLabel.of((ATOM_B, 2))
POLARIZATION = HilbertLabel.of((POL, 2))
ATOMS = QUBIT_A.concat(QUBIT_B)


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=complex)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class QuantumState:
    label: HilbertLabel
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amplitudes).reshape(-1)
        if amps.shape != (self.label.dim,):
            raise LabelError(f"amplitude length {amps.shape[0]} != label dim {self.label.dim}")
        object.__setattr__(self, "amplitudes", amps)
        if self.norm_sq() > 1 + 1e-12:
            raise ValueError(f"state norm^2 {self.norm_sq():.3e} exceeds 1")

    def norm_sq(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def normalized(self) -> "QuantumState":
        n = np.sqrt(self.norm_sq())
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return QuantumState(self.label, self.amplitudes / n)

    def density(self) -> "DensityOp":
        return DensityOp(self.label, np.outer(self.amplitudes, self.amplitudes.conj()))

    def overlap(self, other: "QuantumState") -> complex:
        _same_label(self.label, other.label)
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True, eq=False)
class DensityOp:
    label: HilbertLabel
    matrix: np.ndarray
    check: bool = True

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape != (self.label.dim, self.label.dim):
            raise LabelError(f"matrix shape {m.shape} != ({self.label.dim},)*2")
        object.__setattr__(self, "matrix", m)
        if self.check:
            validate_density(m)

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def normalized(self) -> "DensityOp":
        t = self.trace()
        if t <= 0:
            raise ValueError("cannot normalize a zero-trace operator")
        return DensityOp(self.label, self.matrix / t)


def validate_density(m: np.ndarray, atol: float = ATOL) -> None:
    if np.max(np.abs(m - m.conj().T), initial=0.0) > atol:
        raise ValueError("density matrix is not Hermitian")
    w = np.linalg.eigvalsh((m + m.conj().T) / 2)
    if w.min(initial=0.0) < -atol:
        raise ValueError(f"density matrix has negative eigenvalue {w.min():.3e}")
    t = float(np.trace(m).real)
    if not 0 < t <= 1 + atol:
        raise ValueError(f"density trace {t} outside (0, 1]")


@dataclass(frozen=True, eq=False)
class LinearOp:
    label: HilbertLabel
    matrix: np.ndarray
    unitary: bool = False

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape != (self.label.dim, self.label.dim):
            raise LabelError(f"operator shape {m.shape} != ({self.label.dim},)*2")
        object.__setattr__(self, "matrix", m)
        if self.unitary and not is_unitary(m):
            raise ValueError("operator flagged unitary but U^dag U != I")

    def __matmul__(self, other: "LinearOp") -> "LinearOp":
        _same_label(self.label, other.label)
        return LinearOp(self.label, self.matrix @ other.matrix, self.unitary and other.unitary)

    def dag(self) -> "LinearOp":
        return LinearOp(self.label, self.matrix.conj().T, self.unitary)


def is_unitary(m: np.ndarray, atol: float = ATOL) -> bool:
    m = np.asarray(m)
    return bool(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) < atol)


def _same_label(a: HilbertLabel, b: HilbertLabel) -> None:
    if a != b:
        raise LabelError(f"label mismatch: {a.subsystems} vs {b.subsystems}")


def ket(label: HilbertLabel, *amps) -> QuantumState:
    return QuantumState(label, np.asarray(amps, dtype=complex))


def tensor(a, b):
    """Kronecker product of two states or two operators on disjoint subsystems."""
    label = a.label.concat(b.label)
    if isinstance(a, QuantumState) and isinstance(b, QuantumState):
        return QuantumState(label, np.kron(a.amplitudes, b.amplitudes))
    if isinstance(a, LinearOp) and isinstance(b, LinearOp):
        return LinearOp(label, np.kron(a.matrix, b.matrix), a.unitary and b.unitary)
    if isinstance(a, DensityOp) and isinstance(b, DensityOp):
        return DensityOp(label, np.kron(a.matrix, b.matrix))
    raise TypeError(f"cannot tensor {type(a).__name__} with {type(b).__name__}")


def embed(op: np.ndarray, label: HilbertLabel, targets: Sequence[str]) -> np.ndarray:
    """Full-space matrix of ``op`` acting on ``targets`` (in the given order)."""
    targets = list(targets)
    idx = [label.index(t) for t in targets]
    if len(set(idx)) != len(idx):
        raise LabelError(f"repeated target in {targets}")
    tdims = [label.dims[i] for i in idx]
    tdim = int(np.prod(tdims, dtype=int))
    op = np.asarray(op, dtype=complex)
    if op.shape != (tdim, tdim):
        raise LabelError(f"operator of shape {op.shape} cannot act on {targets} (dim {tdim})")
    n = len(label.dims)
    rest = [i for i in range(n) if i not in idx]
    perm = idx + rest
    dims = list(label.dims)
    rest_dim = int(np.prod([dims[i] for i in rest], dtype=int))
    full = np.kron(op, np.eye(rest_dim))
    # full acts on the permuted ordering; conjugate back to the label ordering
    pdims = [dims[i] for i in perm]
    full = full.reshape(pdims + pdims)
    inv = np.argsort(perm)
    full = full.transpose(list(inv) + [n + i for i in inv])
    return full.reshape(label.dim, label.dim)


def apply(op: LinearOp | np.ndarray, s, targets: Sequence[str] | None = None):
    """Apply ``op`` to the named subsystems of a state or density operator."""
    mat = op.matrix if isinstance(op, LinearOp) else np.asarray(op, dtype=complex)
    if targets is None:
        if isinstance(op, LinearOp):
            targets = op.label.names
        else:
            targets = s.label.names
    full = embed(mat, s.label, targets)
    if isinstance(s, QuantumState):
        return QuantumState(s.label, full @ s.amplitudes)
    if isinstance(s, DensityOp):
        return DensityOp(s.label, full @ s.matrix @ full.conj().T, check=False)
    raise TypeError(f"cannot apply an operator to {type(s).__name__}")


def partial_trace(rho: DensityOp, keep: Iterable[str]) -> DensityOp:
    keep = list(keep)
    out_label = rho.label.restrict(keep)
    # keep the label's own ordering
    keep_idx = [i for i, n in enumerate(rho.label.names) if n in set(keep)]
    dims = list(rho.label.dims)
    n = len(dims)
    t = rho.matrix.reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep_idx]
    # move kept axes first, contract the rest
    order = keep_idx + traced
    t = t.transpose(order + [n + i for i in order])
    kd = int(np.prod([dims[i] for i in keep_idx], dtype=int))
    td = int(np.prod([dims[i] for i in traced], dtype=int))
    t = t.reshape(kd, td, kd, td)
    out = np.einsum("ajbj->ab", t)
    return DensityOp(out_label, out, check=False)


def is_projector(m: np.ndarray, atol: float = ATOL) -> bool:
    return bool(np.max(np.abs(m @ m - m)) < atol and np.max(np.abs(m - m.conj().T)) < atol)


def project(s: QuantumState, proj: LinearOp | np.ndarray, targets: Sequence[str] | None = None):
    """Project onto ``proj`` without renormalizing.

    Returns ``(branch, probability)`` where probability is relative to the
    input norm, so ``branch.norm_sq() == probability * s.norm_sq()``.
    """
    mat = proj.matrix if isinstance(proj, LinearOp) else np.asarray(proj, dtype=complex)
    if not is_projector(mat):
        raise ValueError("projector is not idempotent and Hermitian")
    out = apply(mat, s, targets if targets is not None else
                (proj.label.names if isinstance(proj, LinearOp) else None))
    total = s.norm_sq()
    p = out.norm_sq() / total if total > 0 else 0.0
    return out, p


def fidelity_pure(rho: DensityOp, target: QuantumState) -> float:
    """Overlap <psi|rho|psi> with a normalized pure target, clipped to [0, 1]."""
    _same_label(rho.label, target.label)
    if abs(target.norm_sq() - 1) > 1e-9:
        raise ValueError("target state must be normalized")
    v = target.amplitudes
    f = np.vdot(v, rho.matrix @ v)
    if abs(f.imag) > 1e-10:
        raise ValueError(f"fidelity has imaginary residue {f.imag:.2e}")
    return float(np.clip(f.real, 0.0, 1.0))


def same_up_to_phase(a: QuantumState, b: QuantumState, atol: float = 1e-10) -> bool:
    na, nb = np.sqrt(a.norm_sq()), np.sqrt(b.norm_sq())
    return abs(abs(a.overlap(b)) - na * nb) < atol


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    w = np.linalg.eigvalsh((a - b + (a - b).conj().T) / 2)
    return float(0.5 * np.abs(w).sum())


def dump(obj) -> str:
    """Text dump for golden files: one row per line, entries as ``re,im``."""
    if isinstance(obj, QuantumState):
        rows = obj.amplitudes.reshape(-1, 1)
    else:
        rows = np.atleast_2d(obj.matrix if hasattr(obj, "matrix") else obj)
    return "\n".join(
        " ".join(f"{z.real:.12g},{z.imag:.12g}" for z in row) for row in rows
    ) + "\n"


def load_dump(text: str) -> np.ndarray:
    rows = []
    for line in text.strip().splitlines():
        rows.append([complex(float(re), float(im))
                     for re, im in (tok.split(",") for tok in line.split())])
    return np.array(rows, dtype=complex)


# common atomic kets
UP_Z = np.array([1, 0], dtype=complex)
DOWN_Z = np.array([0, 1], dtype=complex)
UP_X = np.array([1, 1], dtype=complex) / np.sqrt(2)
DOWN_X = np.array([1, -1], dtype=complex) / np.sqrt(2)
# columns map x-basis coordinates to z-basis coordinates
X_FRAME = np.column_stack([UP_X, DOWN_X])


def atoms_ket(a: np.ndarray, b: np.ndarray) -> QuantumState:
    return QuantumState(ATOMS, np.kron(a, b))
