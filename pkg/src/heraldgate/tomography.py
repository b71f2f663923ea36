"""Finite-shot readout, two-qubit state reconstruction, truth tables and Bell fidelities.

Readout convention: every measurement is a z readout preceded by a basis
rotation on that atom.

* ``z``: no rotation
* ``x``: inverse of T^y_{pi/2}, which maps up_x -> up_z
* ``y``: T^x_{pi/2}, which maps (up + i down)/sqrt(2) -> up_z

so the "up" outcome is always the +1 eigenvalue of the matching Pauli.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np

from .optics import rotation_matrix
from .protocol import BELL_NAMES, Runner, bell_targets
from .qcore import ATOMS, DOWN_X, DOWN_Z, UP_X, UP_Z, DensityOp, QuantumState, fidelity_pure

BASES = ("x", "y", "z")
SETTINGS: tuple[tuple[str, str], ...] = tuple(itertools.product(BASES, BASES))
OUTCOME_NAMES = ("uu", "ud", "du", "dd")

PAULI = {
    "i": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.diag([1, -1]).astype(complex),
}

# truth-table inputs/outputs: atom a in z, atom b in x
TT_LABELS = ("uz ux", "uz dx", "dz ux", "dz dx")
TT_INPUTS = tuple(lab.replace(" ", "") for lab in TT_LABELS)
TT_KETS = [np.kron(a, b) for a in (UP_Z, DOWN_Z) for b in (UP_X, DOWN_X)]
TT_SETTING = ("z", "x")
CNOT_OUTPUT = (0, 1, 3, 2)


class HeraldStarvation(RuntimeError):
    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


class ZeroHeraldsError(RuntimeError):
    pass


def readout_rotation(basis: str) -> np.ndarray:
    if basis == "z":
        return np.eye(2, dtype=complex)
    if basis == "x":
        return rotation_matrix("y", "pi/2", inverse=True)
    if basis == "y":
        return rotation_matrix("x", "pi/2")
    raise ValueError(f"unknown basis {basis!r}")


def setting_probabilities(rho: np.ndarray, setting: tuple[str, str],
                          readout_error: float = 0.0) -> np.ndarray:
    """Outcome probabilities (uu, ud, du, dd) for one setting.

    With ``readout_error`` each x or y readout pulse is skipped with that
    probability, so the atom is read out in z instead.
    """
    rho = np.asarray(rho, complex)
    p = np.zeros(4)
    for fa, wa in _pulse_branches(setting[0], readout_error):
        for fb, wb in _pulse_branches(setting[1], readout_error):
            u = np.kron(readout_rotation(fa), readout_rotation(fb))
            p += wa * wb * np.real(np.diag(u @ rho @ u.conj().T))
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def _pulse_branches(basis: str, p: float):
    if basis == "z" or p == 0:
        return [(basis, 1.0)]
    return [(basis, 1 - p), ("z", p)]


def readout_probability(rho: np.ndarray, setting: tuple[str, str], outcome: int,
                        readout_error: float = 0.0) -> float:
    return float(setting_probabilities(rho, setting, readout_error)[outcome])


@dataclass
class CountTable:
    """Outcome counts (uu, ud, du, dd) per measurement setting.

    Counts are normally integers; floats are accepted for exact
    (infinite-shot) probability tables.
    """

    counts: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in list(self.counts.items()):
            v = np.asarray(v, dtype=float)
            if v.shape != (4,) or np.any(v < 0):
                raise ValueError(f"bad counts for setting {k}: {v}")
            self.counts[tuple(k)] = v

    @property
    def total_shots(self) -> float:
        return float(sum(v.sum() for v in self.counts.values()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["setting_a", "setting_b", "n_uu", "n_ud", "n_du", "n_dd"])
        for s in SETTINGS:
            if s in self.counts:
                v = self.counts[s]
                w.writerow([*s, *(int(x) if float(x).is_integer() else repr(float(x)) for x in v)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CountTable":
        rows = csv.DictReader(io.StringIO(text))
        out = {}
        for r in rows:
            key = (r["setting_a"], r["setting_b"])
            if key[0] not in BASES or key[1] not in BASES:
                raise ValueError(f"unknown setting {key}")
            out[key] = np.array([float(r[f"n_{o}"]) for o in OUTCOME_NAMES])
        return cls(out)


def simulate_counts(rho, settings=SETTINGS, shots_per_setting: int = 1000,
                    seed: int | np.random.Generator = 0, readout_error: float = 0.0
                    ) -> CountTable:
    """Multinomial sampling of local projective measurements."""
    m = rho.matrix if isinstance(rho, DensityOp) else np.asarray(rho, complex)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return CountTable({s: rng.multinomial(shots_per_setting,
                                          setting_probabilities(m, s, readout_error))
                       for s in settings})


def exact_counts(rho, settings=SETTINGS, shots_per_setting: float = 1.0,
                 readout_error: float = 0.0) -> CountTable:
    m = rho.matrix if isinstance(rho, DensityOp) else np.asarray(rho, complex)
    return CountTable({s: shots_per_setting * setting_probabilities(m, s, readout_error)
                       for s in settings})


def _signs(which: str) -> np.ndarray:
    # outcome order uu, ud, du, dd
    if which == "a":
        return np.array([1, 1, -1, -1])
    if which == "b":
        return np.array([1, -1, 1, -1])
    return np.array([1, -1, -1, 1])


def pauli_expectations(counts: CountTable) -> dict[tuple[str, str], float]:
    missing = [s for s in SETTINGS if s not in counts.counts]
    if missing:
        raise ValueError(f"missing settings {missing}")
    freq = {}
    for s in SETTINGS:
        n = counts.counts[s].sum()
        if n <= 0:
            raise ValueError(f"setting {s} has no shots")
        freq[s] = counts.counts[s] / n
    ex = {("i", "i"): 1.0}
    for a, b in SETTINGS:
        ex[a, b] = float(freq[a, b] @ _signs("ab"))
    for a in BASES:
        ex[a, "i"] = float(np.mean([freq[a, b] @ _signs("a") for b in BASES]))
        ex["i", a] = float(np.mean([freq[b, a] @ _signs("b") for b in BASES]))
    return ex


def nearest_density(m: np.ndarray) -> np.ndarray:
    """Closest unit-trace PSD matrix in Frobenius norm.

    Eigenvalues below zero are truncated and their weight spread evenly
    over the remaining ones, working up from the smallest.
    """
    m = (m + m.conj().T) / 2
    m = m / np.trace(m).real
    w, v = np.linalg.eigh(m)
    w = w[::-1].copy()
    v = v[:, ::-1]
    d = len(w)
    acc = 0.0
    i = d
    while i > 0 and w[i - 1] + acc / i < 0:
        acc += w[i - 1]
        w[i - 1] = 0.0
        i -= 1
    w[:i] += acc / i
    return (v * w) @ v.conj().T


def linear_inversion(counts: CountTable) -> np.ndarray:
    ex = pauli_expectations(counts)
    rho = np.zeros((4, 4), complex)
    for (a, b), e in ex.items():
        rho += e * np.kron(PAULI[a], PAULI[b])
    return rho / 4


def reconstruct(counts: CountTable) -> DensityOp:
    """Linear inversion followed by projection onto physical states."""
    return DensityOp(ATOMS, nearest_density(linear_inversion(counts)))


# --------------------------------------------------------------------------
# experiments

@dataclass
class TruthTable:
    probabilities: np.ndarray  # [input, output]
    errors: np.ndarray
    fidelity: float
    fidelity_err: float
    herald_probabilities: np.ndarray
    shots_per_input: int | None = None

    def to_dict(self) -> dict:
        return {
            "inputs": list(TT_LABELS), "outputs": list(TT_LABELS),
            "probabilities": self.probabilities.tolist(),
            "errors": self.errors.tolist(),
            "fidelity": self.fidelity, "fidelity_err": self.fidelity_err,
            "herald_probabilities": self.herald_probabilities.tolist(),
            "shots_per_input": self.shots_per_input,
        }


def _tt_fidelity(P: np.ndarray) -> float:
    return float(np.mean([P[i, CNOT_OUTPUT[i]] for i in range(4)]))


def truth_probabilities(rho: np.ndarray, readout_error: float = 0.0) -> np.ndarray:
    """Probabilities of the four z(x)x outputs; outcome order matches TT_LABELS."""
    return setting_probabilities(rho, TT_SETTING, readout_error)


def analytic_truth_table(runner: Runner) -> TruthTable:
    P = np.zeros((4, 4))
    ph = np.zeros(4)
    for i, key in enumerate(TT_INPUTS):
        ph[i], rho = runner.run(key)
        if ph[i] <= 0:
            raise ZeroHeraldsError(f"input {TT_LABELS[i]} is never heralded")
        P[i] = truth_probabilities(rho, runner.readout_error)
    return TruthTable(P, np.zeros_like(P), _tt_fidelity(P), 0.0, ph)


def truth_table_experiment(runner: Runner, shots_per_input: int = 500, seed=0,
                           analytic: bool = False) -> TruthTable:
    """Truth table from ``shots_per_input`` heralded shots per input."""
    exact = analytic_truth_table(runner)
    if analytic:
        return exact
    if shots_per_input < 100:
        raise ValueError("need at least 100 heralded shots per input")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    counts = np.array([rng.multinomial(shots_per_input, row) for row in exact.probabilities])
    P = counts / shots_per_input
    err = np.sqrt(P * (1 - P) / shots_per_input)
    f = _tt_fidelity(P)
    f_err = float(np.sqrt(sum(err[i, CNOT_OUTPUT[i]] ** 2 for i in range(4))) / 4)
    return TruthTable(P, err, f, f_err, exact.herald_probabilities, shots_per_input)


def _overlap(rho: np.ndarray, ket: np.ndarray) -> float:
    return float(np.clip(np.vdot(ket, rho @ ket).real, 0, 1))


def analytic_bell_fidelity(runner: Runner, key: str) -> float:
    """Infinite-shot tomography fidelity with the expected Bell state.

    Without readout error this is the plain overlap; with it, the state is
    reconstructed from exact (noisy) setting probabilities, as the finite-shot
    experiment would in the limit.
    """
    targets = bell_targets()
    if key not in targets:
        raise ValueError(f"unknown Bell input {key!r}; choose from {sorted(targets)}")
    p, rho = runner.run(key)
    if p <= 0:
        raise ZeroHeraldsError(f"Bell input {key} is never heralded")
    if runner.readout_error:
        rho = reconstruct(exact_counts(rho, readout_error=runner.readout_error)).matrix
    return _overlap(rho, targets[key][1])


def analytic_bell_fidelities(runner: Runner) -> dict[str, float]:
    return {key: analytic_bell_fidelity(runner, key) for key in bell_targets()}


@dataclass
class TomographyResult:
    input: str
    target_name: str
    rho: DensityOp
    fidelity: float
    fidelity_err: float
    exact_fidelity: float
    counts: CountTable
    n_heralds: int
    attempts: int
    success_probability: float

    def to_dict(self) -> dict:
        return {
            "input": self.input, "target": self.target_name,
            "fidelity": self.fidelity, "fidelity_err": self.fidelity_err,
            "exact_fidelity": self.exact_fidelity,
            "n_heralds": self.n_heralds, "attempts": self.attempts,
            "success_probability": self.success_probability,
            "rho": matrix_to_json(self.rho.matrix),
        }


def matrix_to_json(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m)]


def matrix_from_json(rows) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows])


def _counts_from_events(settings: np.ndarray, outcomes: np.ndarray) -> CountTable:
    table = np.zeros((len(SETTINGS), 4))
    np.add.at(table, (settings, outcomes), 1)
    return CountTable({s: table[i] for i, s in enumerate(SETTINGS)})


def bell_experiment(runner: Runner, input: str = "uxux", heralds_target: int = 3000,
                    seed=0, max_attempts: int = 10 ** 9, n_boot: int = 200) -> TomographyResult:
    """Tomography of the heralded state with one random setting per herald."""
    if heralds_target < 500:
        raise ValueError("heralds_target must be >= 500")
    targets = bell_targets()
    if input not in targets:
        raise ValueError(f"unknown Bell input {input!r}; choose from {sorted(targets)}")
    tgt = targets[input][1]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p, rho = runner.run(input)
    if p <= 0 or heralds_target / p > max_attempts:
        raise HeraldStarvation(
            f"success probability {p:.3g} cannot deliver {heralds_target} heralds "
            f"within {max_attempts} attempts",
            partial={"input": input, "success_probability": p})
    # attempts until the last herald: heralds + failures
    attempts = heralds_target + int(rng.negative_binomial(heralds_target, p)) if p < 1 else heralds_target
    probs = np.array([setting_probabilities(rho, s, runner.readout_error) for s in SETTINGS])
    settings = rng.integers(len(SETTINGS), size=heralds_target)
    outcomes = np.empty(heralds_target, dtype=int)
    for i in range(len(SETTINGS)):
        sel = np.flatnonzero(settings == i)
        outcomes[sel] = rng.choice(4, size=len(sel), p=probs[i])
    counts = _counts_from_events(settings, outcomes)
    est = reconstruct(counts)
    target = QuantumState(ATOMS, tgt)
    f = fidelity_pure(est, target)
    boots = []
    for _ in range(n_boot):
        idx = rng.integers(heralds_target, size=heralds_target)
        try:
            boots.append(fidelity_pure(reconstruct(_counts_from_events(settings[idx], outcomes[idx])), target))
        except ValueError:
            continue
    f_err = float(np.std(boots, ddof=1)) if len(boots) > 1 else float("nan")
    exact = analytic_bell_fidelity(runner, input)
    return TomographyResult(input, BELL_NAMES[input], est, f, f_err, exact, counts,
                            heralds_target, attempts, p)


def bootstrap_draws(runner, n_boot: int = 200, seed=0) -> tuple[float, float]:
    """Standard errors of (truth, mean Bell) fidelity from resampling shot-parameter draws."""
    rng = np.random.default_rng(seed)
    n = len(runner.draws)
    truth, bell = [], []
    full = runner.multipliers
    try:
        for _ in range(n_boot):
            runner.multipliers = runner.draws[rng.integers(n, size=n)].mean(axis=0)
            truth.append(analytic_truth_table(runner).fidelity)
            bell.append(np.mean(list(analytic_bell_fidelities(runner).values())))
    finally:
        runner.multipliers = full
    return float(np.std(truth, ddof=1)), float(np.std(bell, ddof=1))
