"""The heralded non-local gate.

Two engines live here:

* :func:`run_ideal` pushes a single photon through the lossless element
  sequence using the labeled state machinery of :mod:`heraldgate.qcore`.
* :class:`PhysicalRunner` handles weak coherent pulses, lossy and detuned
  reflections, mode mismatch, polarization errors and threshold detectors.

The physical engine never builds a Fock space.  Conditioned on the two-atom
basis state ``j``, every element is diagonal in the atoms, so the light stays
a product of coherent states: amplitude ``beta_j`` in the two detected modes
and ``eps_j`` in every mode that light leaked into.  Heralding then acts on the
atomic density matrix as an elementwise (Schur) multiplier

    K_jk = <eps_k|eps_j> * <beta_k| Pi |beta_j>

with ``Pi`` the click/no-click POVM element.  The multiplier is linear in the
shot parameters' contribution, so Monte Carlo over lock jitter just averages
the ``K`` matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.stats import poisson

from . import optics
from .optics import CavityParams
from .qcore import (
    ATOM_A,
    ATOM_B,
    ATOMS,
    DOWN_X,
    DOWN_Z,
    POL,
    POLARIZATION,
    UP_X,
    UP_Z,
    X_FRAME,
    DensityOp,
    HilbertLabel,
    LinearOp,
    QuantumState,
    apply,
    tensor,
)

OUTCOMES = ("A", "D")
TRUNCATION_TOL = 1e-9

Z = np.diag([1.0, -1.0]).astype(complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)


class TruncationError(ValueError):
    pass


class NonPhysicalStateError(RuntimeError):
    """A conditional state failed positivity; points at a sign-convention bug."""


@dataclass(frozen=True)
class ModuleConfig:
    cavity: CavityParams
    # used when the cQED response is idealized to a uniform loss
    reflectivity: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.reflectivity <= 1.0:
            raise ValueError(f"reflectivity {self.reflectivity} outside [0, 1]")


@dataclass(frozen=True)
class ProtocolConfig:
    source: str = "single-photon"
    mean_n: float = 0.07
    fock_cutoff: int | None = None
    module_a: ModuleConfig = field(default_factory=lambda: ModuleConfig(optics.MODULE_A))
    module_b: ModuleConfig = field(default_factory=lambda: ModuleConfig(optics.MODULE_B))
    eta_pre: float = 1.0
    eta_link: float = 1.0
    eta_det: float = 1.0
    detection_basis: str = "AD"
    feedback_enabled: bool = True
    gate_duration_us: float = 22.0
    feedback_wait_us: float = 0.0

    def __post_init__(self):
        if self.source not in ("single-photon", "coherent"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.mean_n < 0:
            raise ValueError("mean_n must be >= 0")
        for name in ("eta_pre", "eta_link", "eta_det"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.detection_basis != "AD":
            raise ValueError("only A/D detection is supported")
        if self.gate_duration_us < 0 or self.feedback_wait_us < 0:
            raise ValueError("timings must be non-negative")
        if self.fock_cutoff is not None and self.fock_cutoff < 1:
            raise ValueError("fock_cutoff must be >= 1")

    @property
    def efficiency(self) -> float:
        return self.eta_pre * self.eta_link * self.eta_det

    @classmethod
    def nominal(cls) -> "ProtocolConfig":
        """Weak coherent probe and the experimental efficiency chain."""
        return cls(source="coherent", mean_n=0.07,
                   module_a=ModuleConfig(optics.MODULE_A, 0.60),
                   module_b=ModuleConfig(optics.MODULE_B, 0.55),
                   eta_link=0.52, eta_det=0.50, feedback_wait_us=78.0)


def poisson_tail(mean_n: float, cutoff: int) -> float:
    """Probability weight above ``cutoff`` photons."""
    return float(poisson.sf(cutoff, mean_n)) if mean_n > 0 else 0.0


def required_cutoff(mean_n: float, tol: float = TRUNCATION_TOL) -> int:
    c = 1
    while poisson_tail(mean_n, c) >= tol:
        c += 1
    return c


def check_truncation(cfg: ProtocolConfig) -> int:
    """Return the Fock cutoff in force, raising if it neglects too much weight."""
    if cfg.fock_cutoff is None:
        return required_cutoff(cfg.mean_n)
    tail = poisson_tail(cfg.mean_n, cfg.fock_cutoff)
    if tail >= TRUNCATION_TOL:
        raise TruncationError(
            f"fock_cutoff={cfg.fock_cutoff} neglects Poisson weight {tail:.2e} "
            f"at mean_n={cfg.mean_n} (need < {TRUNCATION_TOL:g})")
    return cfg.fock_cutoff


# --------------------------------------------------------------------------
# ideal protocol on the labeled state machinery

def feedback_op(outcome: str) -> np.ndarray:
    """Feedback on atom a: i T^x_pi T^y_pi after an A click, nothing after D."""
    if outcome == "A":
        return 1j * optics.rotation_matrix("x", "pi") @ optics.rotation_matrix("y", "pi")
    if outcome == "D":
        return np.eye(2, dtype=complex)
    raise ValueError(f"unknown herald outcome {outcome!r}")


def apply_feedback(state, outcome: str):
    return apply(LinearOp(HilbertLabel.of((ATOM_A, 2)), feedback_op(outcome)), state, [ATOM_A])


def _detect(state: QuantumState, pol_vec: np.ndarray) -> QuantumState:
    """Contract the polarization factor with <pol_vec|, leaving the atoms."""
    names = state.label.names
    t = state.amplitudes.reshape(state.label.dims)
    ax = names.index(POL)
    t = np.tensordot(t, pol_vec.conj(), axes=([ax], [0]))
    rest = HilbertLabel(tuple(s for s in state.label.subsystems if s[0] != POL))
    return QuantumState(rest, t.reshape(-1))


def run_ideal(psi: QuantumState, feedback: bool = True) -> dict[str, tuple[float, QuantumState]]:
    """Single photon, lossless cavities.  Returns outcome -> (probability, post-state)."""
    if psi.label != ATOMS:
        raise ValueError(f"input must live on {ATOMS.names}")
    if abs(psi.norm_sq() - 1) > 1e-10:
        raise ValueError("input state must be normalized")
    s = tensor(psi, QuantumState(POLARIZATION, optics.R))
    s = apply(optics.waveplate(-1), s, [POL])
    s = apply(optics.ideal_reflection(ATOM_A), s, [ATOM_A, POL])
    s = apply(optics.waveplate(+1), s, [POL])
    s = apply(optics.ideal_reflection(ATOM_B), s, [ATOM_B, POL])
    out = {}
    for outcome, vec in (("A", optics.A), ("D", optics.D)):
        branch = _detect(s, vec)
        p = branch.norm_sq()
        if feedback:
            branch = apply_feedback(branch, outcome)
        out[outcome] = (p, branch.normalized() if p > 0 else branch)
    return out


def reference_cnot() -> LinearOp:
    """CNOT in the basis up_z up_x, up_z down_x, down_z up_x, down_z down_x."""
    m = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
    return LinearOp(ATOMS, m, unitary=True)


ZX_TO_ZZ = np.kron(np.eye(2), X_FRAME)


def zx_to_zz(m: np.ndarray) -> np.ndarray:
    """Re-express an operator given in z(x)x coordinates in the z(x)z basis."""
    return ZX_TO_ZZ @ m @ ZX_TO_ZZ.conj().T


def gate_phases(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """The most general unitary consistent with an ideal truth table (z(x)x basis)."""
    return np.array([[1, 0, 0, 0],
                     [0, np.exp(1j * alpha), 0, 0],
                     [0, 0, 0, np.exp(1j * beta)],
                     [0, 0, np.exp(1j * gamma), 0]], dtype=complex)


PREP_KETS = {"uz": UP_Z, "dz": DOWN_Z, "ux": UP_X, "dx": DOWN_X}


def prep_ket(label: str) -> np.ndarray:
    try:
        return PREP_KETS[label]
    except KeyError:
        raise ValueError(f"unknown preparation {label!r}; choose from {sorted(PREP_KETS)}") from None


def split_input(key: str) -> tuple[str, str]:
    """'uzdx' -> ('uz', 'dx')."""
    if len(key) != 4:
        raise ValueError(f"input key must name two single-atom states, got {key!r}")
    a, b = key[:2], key[2:]
    prep_ket(a), prep_ket(b)
    return a, b


def bell_targets() -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Input product state -> expected Bell state, both in z(x)z coordinates."""
    s = 1 / np.sqrt(2)
    zx = lambda a, b: np.kron(a, b)  # noqa: E731
    return {
        "uxux": (zx(UP_X, UP_X), s * (zx(UP_Z, UP_X) + zx(DOWN_Z, DOWN_X))),
        "uxdx": (zx(UP_X, DOWN_X), s * (zx(UP_Z, DOWN_X) + zx(DOWN_Z, UP_X))),
        "dxux": (zx(DOWN_X, UP_X), s * (zx(UP_Z, UP_X) - zx(DOWN_Z, DOWN_X))),
        "dxdx": (zx(DOWN_X, DOWN_X), s * (zx(UP_Z, DOWN_X) - zx(DOWN_Z, UP_X))),
    }


BELL_NAMES = {"uxux": "Phi+", "uxdx": "Psi+", "dxux": "Phi-", "dxdx": "Psi-"}


# --------------------------------------------------------------------------
# runners: anything mapping an input density matrix to heralded outputs

class Runner:
    """Heralded two-atom channel.

    ``outcomes(rho)`` returns unnormalized post-feedback states per herald
    outcome; their traces are the outcome probabilities.  ``prepare`` and
    ``readout_error`` let a runner model imperfect rotation pulses; the base
    class prepares perfectly and reads out perfectly.
    """

    readout_error: float = 0.0

    def prepare(self, a: str, b: str) -> np.ndarray:
        k = np.kron(prep_ket(a), prep_ket(b))
        return np.outer(k, k.conj())

    def outcomes(self, rho: np.ndarray) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def heralded(self, rho: np.ndarray) -> tuple[float, np.ndarray]:
        outs = self.outcomes(np.asarray(rho, dtype=complex))
        total = sum(outs.values())
        p = float(np.trace(total).real)
        if p <= 0:
            return 0.0, total
        return p, total / p

    def run(self, key: str) -> tuple[float, np.ndarray]:
        """Heralded probability and state for a labeled input such as 'uzdx'."""
        return self.heralded(self.prepare(*split_input(key)))


class KrausRunner(Runner):
    """Runner defined by one Kraus operator per herald outcome."""

    def __init__(self, kraus: Mapping[str, np.ndarray]):
        self.kraus = {k: np.asarray(v, dtype=complex) for k, v in kraus.items()}

    def outcomes(self, rho):
        return {o: k @ rho @ k.conj().T for o, k in self.kraus.items()}


class IdealRunner(KrausRunner):
    def __init__(self, feedback: bool = True):
        kraus = {o: np.zeros((4, 4), complex) for o in OUTCOMES}
        for col in range(4):
            e = np.zeros(4, complex)
            e[col] = 1
            res = run_ideal(QuantumState(ATOMS, e), feedback=feedback)
            for o, (p, st) in res.items():
                kraus[o][:, col] = st.amplitudes * np.sqrt(p)
        super().__init__(kraus)


class UnitaryRunner(KrausRunner):
    """Deterministic gate given in the z(x)x basis (for injecting test phases)."""

    def __init__(self, u_zx: np.ndarray):
        super().__init__({"A": zx_to_zz(np.asarray(u_zx, dtype=complex))})


# --------------------------------------------------------------------------
# physical engine

@dataclass(frozen=True)
class ElementSettings:
    """Everything the optical path needs for one shot."""

    module_a: optics.ReflectionResponse
    module_b: optics.ReflectionResponse
    theta: float = 0.0


def module_response(mod: ModuleConfig, cqed: bool, delta_c: float, mode_match: float | None
                    ) -> optics.ReflectionResponse:
    if cqed:
        resp = optics.cavity_response(mod.cavity.detuned(delta_c))
    else:
        phase = optics.detuning_phase(mod.cavity, delta_c) if delta_c else None
        resp = optics.idealized_response(mod.reflectivity, phase)
    if mode_match is not None:
        resp = optics.mode_matched(resp, mode_match)
    return resp


def _propagate(cfg: ProtocolConfig, el: ElementSettings, j: int
               ) -> tuple[np.ndarray, np.ndarray]:
    """Mode amplitudes for one atomic basis branch, per unit input amplitude in R.

    Returns (detected amplitudes [A, D], leaked amplitudes).
    """
    sa, sb = divmod(j, 2)
    v = optics.R.copy()
    env: list[np.ndarray] = []

    def lose(eta):
        nonlocal v
        env.append(np.sqrt(1 - eta) * v)
        v = np.sqrt(eta) * v

    def reflect(resp: optics.ReflectionResponse, s: int):
        nonlocal v
        env.append((resp.env[s] * v[:, None]).reshape(-1))
        v = resp.amp[s] * v

    rot = optics.misalignment_matrix(el.theta)
    lose(cfg.eta_pre)
    v = optics.waveplate(-1).matrix @ v
    reflect(el.module_a, sa)
    v = rot @ v
    v = optics.waveplate(+1).matrix @ v
    lose(cfg.eta_link)
    reflect(el.module_b, sb)
    v = rot @ v
    lose(cfg.eta_det)
    det = optics.AD_FRAME.conj().T @ v
    return det, np.concatenate(env)


def branch_amplitudes(cfg: ProtocolConfig, el: ElementSettings):
    det, env = zip(*(_propagate(cfg, el, j) for j in range(4)))
    return np.array(det), np.array(env)


def _coherent_overlap(a: np.ndarray, b_conj_from: np.ndarray) -> np.ndarray:
    """Matrix of <b_k|a_j> for multimode coherent amplitudes (rows j, cols k)."""
    na = (np.abs(a) ** 2).sum(-1)
    return np.exp(-0.5 * na[:, None] - 0.5 * na[None, :] + a @ b_conj_from.conj().T)


def herald_multipliers(cfg: ProtocolConfig, el: ElementSettings, dark: float = 0.0,
                       coherent: bool | None = None) -> dict[str, np.ndarray]:
    """Schur multipliers K^o_jk, one per herald outcome (exactly one detector clicks)."""
    det, env = branch_amplitudes(cfg, el)
    if coherent is None:
        coherent = cfg.source == "coherent"
    if coherent:
        alpha = np.sqrt(cfg.mean_n)
        det, env = alpha * det, alpha * env
        env_ov = _coherent_overlap(env, env)
        out = {}
        for o, (ci, ni) in zip(OUTCOMES, ((0, 1), (1, 0))):
            c, n = det[:, ci:ci + 1], det[:, ni:ni + 1]
            full_c = _coherent_overlap(c, c)
            vac_c = (1 - dark) * np.exp(-0.5 * np.abs(c[:, 0])[:, None] ** 2
                                        - 0.5 * np.abs(c[:, 0])[None, :] ** 2)
            vac_n = (1 - dark) * np.exp(-0.5 * np.abs(n[:, 0])[:, None] ** 2
                                        - 0.5 * np.abs(n[:, 0])[None, :] ** 2)
            out[o] = env_ov * (full_c - vac_c) * vac_n
        return out
    # single photon: it ends up in A, D or a leaked mode
    env_gram = env @ env.conj().T
    out = {}
    for o, ci in zip(OUTCOMES, (0, 1)):
        c = det[:, ci]
        out[o] = (1 - dark) * np.outer(c, c.conj()) + dark * (1 - dark) * env_gram
    return out


def _schur(rho: np.ndarray, k: np.ndarray) -> np.ndarray:
    # rho_out[j, k] = rho[j, k] * K[j, k]
    return rho * k


def _coherence_mask(ca: float, cb: float) -> np.ndarray:
    s = np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1])
    ma = np.where(s[0][:, None] != s[0][None, :], ca, 1.0)
    mb = np.where(s[1][:, None] != s[1][None, :], cb, 1.0)
    return ma * mb


def prepare_with_errors(label: str, p: float) -> np.ndarray:
    """Single-atom preparation from up_z; the rotation pulse is skipped with probability p."""
    k = prep_ket(label)
    rho = np.outer(k, k.conj())
    if label == "uz" or p == 0:
        return rho
    return (1 - p) * rho + p * np.outer(UP_Z, UP_Z.conj())


def feedback_mixture(outcome: str, p: float, enabled: bool = True
                     ) -> list[tuple[float, np.ndarray]]:
    """Weighted feedback unitaries on atom a when each pi pulse fails with probability p."""
    if not enabled or outcome == "D":
        return [(1.0, np.eye(2, dtype=complex))]
    if outcome != "A":
        raise ValueError(f"unknown herald outcome {outcome!r}")
    tx = optics.rotation_matrix("x", "pi")
    ty = optics.rotation_matrix("y", "pi")
    mix = [((1 - p) ** 2, feedback_op("A")), (p * (1 - p), tx), (p * (1 - p), ty),
           (p * p, np.eye(2, dtype=complex))]
    return [(w, u) for w, u in mix if w > 0]


@dataclass
class HeraldedOutcome:
    detected: bool
    detector: str
    probability: float
    post_state: DensityOp


@dataclass
class PhysicalResult:
    outcomes: dict[str, HeraldedOutcome]
    success_probability: float


class PhysicalRunner(Runner):
    """Physical heralded channel, averaged over sampled shot parameters.

    Built from a :class:`ProtocolConfig` plus an ``ImperfectionParams``.  The
    per-draw multipliers are kept (``self.draws``) for resampling error bars.
    """

    def __init__(self, cfg: ProtocolConfig, imp, n_draws: int = 1, seed: int = 0,
                 rng: np.random.Generator | None = None):
        from .imperfections import ImperfectionParams, sample_shot_params

        if imp is None:
            imp = ImperfectionParams.none()
        self.cfg = cfg
        self.imp = imp
        self.coherent = cfg.source == "coherent" and imp.on("weak_coherent")
        if self.coherent:
            self.cutoff = check_truncation(cfg)
        shots = sample_shot_params(imp, seed=seed, n=n_draws, rng=rng)
        self.shots = shots
        mm = imp.on("mode_matching")
        theta = imp.pol_misalign_theta if imp.on("polarization") else 0.0
        dark = imp.dark_click_prob if imp.on("dark_counts") else 0.0
        cqed = imp.on("weak_coherent")
        stack = []
        for da, db in zip(shots.delta_a, shots.delta_b):
            el = ElementSettings(
                module_response(cfg.module_a, cqed, float(da), imp.mode_match_a if mm else None),
                module_response(cfg.module_b, cqed, float(db), imp.mode_match_b if mm else None),
                theta,
            )
            ks = herald_multipliers(cfg, el, dark=dark, coherent=self.coherent)
            stack.append([ks[o] for o in OUTCOMES])
        self.draws = np.array(stack)  # (n_draws, outcome, 4, 4)
        self.multipliers = self.draws.mean(axis=0)
        self._setup_noise()

    def _setup_noise(self):
        from .imperfections import _coherence_factor

        imp, cfg = self.imp, self.cfg
        if imp.on("decoherence"):
            wa = imp.dephase_window_a_us
            wb = imp.dephase_window_b_us
            if wa is None:
                wa = cfg.gate_duration_us + cfg.feedback_wait_us
            if wb is None:
                wb = cfg.gate_duration_us
            ca = _coherence_factor(wa, imp.t2_a_us, imp.dephasing_law)
            cb = _coherence_factor(wb, imp.t2_b_us, imp.dephasing_law)
        else:
            ca = cb = 1.0
        self.coherence = _coherence_mask(ca, cb)
        self.spam = imp.spam_error if imp.on("spam") else 0.0
        self.readout_error = self.spam
        eye = np.eye(2)
        self.feedback = {o: [(w, np.kron(u, eye)) for w, u in
                             feedback_mixture(o, self.spam, cfg.feedback_enabled)]
                         for o in OUTCOMES}

    def prepare(self, a: str, b: str) -> np.ndarray:
        return np.kron(prepare_with_errors(a, self.spam), prepare_with_errors(b, self.spam))

    def _apply(self, rho: np.ndarray, mults: np.ndarray) -> dict[str, np.ndarray]:
        out = {}
        for o, k in zip(OUTCOMES, mults):
            r = _schur(rho, k)
            r = sum(w * f @ r @ f.conj().T for w, f in self.feedback[o])
            out[o] = _schur(r, self.coherence)
        return out

    def outcomes(self, rho):
        return self._apply(np.asarray(rho, dtype=complex), self.multipliers)

    def outcomes_per_draw(self, rho) -> list[dict[str, np.ndarray]]:
        rho = np.asarray(rho, dtype=complex)
        return [self._apply(rho, d) for d in self.draws]

    def success_probability(self, rho=None) -> float:
        if rho is None:
            rho = np.eye(4) / 4
        return float(sum(np.trace(r).real for r in self.outcomes(rho).values()))


def run_physical(psi, cfg: ProtocolConfig, imp=None, n_draws: int = 1, seed: int = 0
                 ) -> PhysicalResult:
    """Heralded outcome distribution for one input state (a ket, density matrix or label)."""
    runner = PhysicalRunner(cfg, imp, n_draws=n_draws, seed=seed)
    if isinstance(psi, str):
        rho = runner.prepare(*split_input(psi))
    elif isinstance(psi, QuantumState):
        rho = psi.density().matrix
    else:
        rho = np.asarray(psi, complex)
        if rho.ndim == 1:
            rho = np.outer(rho, rho.conj())
    outs = runner.outcomes(rho)
    res = {}
    for o, r in outs.items():
        p = float(np.trace(r).real)
        if p > 0:
            try:
                post = DensityOp(ATOMS, r / p)
            except ValueError as exc:
                raise NonPhysicalStateError(f"outcome {o}: {exc}") from exc
        else:
            post = DensityOp(ATOMS, np.eye(4) / 4)
        res[o] = HeraldedOutcome(p > 0, o, p, post)
    return PhysicalResult(res, sum(h.probability for h in res.values()))


# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseAudit:
    gamma_zero_fidelity: float
    alpha_equals_beta_fidelity: float
    eigenstate_preservation: float

    def to_dict(self) -> dict:
        return {"gamma_zero_fidelity": self.gamma_zero_fidelity,
                "alpha_equals_beta_fidelity": self.alpha_equals_beta_fidelity,
                "eigenstate_preservation": self.eigenstate_preservation}


def phase_audit(runner: Runner) -> PhaseAudit:
    """Three checks that pin the phases left open by the truth table.

    ux ux must give Phi+ (gamma = 0), ux dx must give Psi+ (alpha = beta) and
    uz uz must stay put.
    """
    from .tomography import analytic_bell_fidelity, readout_probability

    f1 = analytic_bell_fidelity(runner, "uxux")
    f2 = analytic_bell_fidelity(runner, "uxdx")
    p, rho = runner.run("uzuz")
    if p <= 0:
        raise ValueError("uz uz is never heralded")
    f3 = readout_probability(rho, ("z", "z"), 0, runner.readout_error)
    return PhaseAudit(f1, f2, f3)
