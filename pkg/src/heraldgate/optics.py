"""Optical elements and atom-cavity reflection.

Polarization basis is (R, L); atomic basis is (up_z, down_z).  All rates in
:class:`CavityParams` are angular frequencies in units of 2*pi*MHz, i.e. the
number stored is the linear frequency in MHz.  Since only ratios of rates
enter the steady-state reflection, the common 2*pi factor cancels and is
never multiplied in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .qcore import ATOM_A, POL, HilbertLabel, LinearOp, POLARIZATION

SQRT2 = np.sqrt(2.0)

R = np.array([1, 0], dtype=complex)
L = np.array([0, 1], dtype=complex)
A = (1j * R + L) / SQRT2
D = (1j * R - L) / (SQRT2 * 1j)
# columns: A, D expressed in (R, L)
AD_FRAME = np.column_stack([A, D])


@dataclass(frozen=True)
class CavityParams:
    g: float
    kappa: float
    kappa_r: float
    gamma: float
    delta_c: float = 0.0
    delta_a: float = 0.0

    def __post_init__(self):
        if not (self.g > 0 and self.kappa > 0 and self.gamma > 0):
            raise ValueError("g, kappa and gamma must be positive")
        if not 0 < self.kappa_r <= self.kappa:
            raise ValueError("need 0 < kappa_r <= kappa")

    @classmethod
    def from_mhz(cls, g_mhz, kappa_mhz, kappa_r_mhz, gamma_mhz,
                 delta_c_mhz=0.0, delta_a_mhz=0.0) -> "CavityParams":
        return cls(g_mhz, kappa_mhz, kappa_r_mhz, gamma_mhz, delta_c_mhz, delta_a_mhz)

    def to_mhz(self) -> dict:
        return {"g_mhz": self.g, "kappa_mhz": self.kappa, "kappa_r_mhz": self.kappa_r,
                "gamma_mhz": self.gamma, "delta_c_mhz": self.delta_c,
                "delta_a_mhz": self.delta_a}

    def detuned(self, delta_c: float) -> "CavityParams":
        return CavityParams(self.g, self.kappa, self.kappa_r, self.gamma,
                            self.delta_c + delta_c, self.delta_a)


MODULE_A = CavityParams.from_mhz(7.6, 2.5, 2.3, 3.0)
MODULE_B = CavityParams.from_mhz(7.6, 2.8, 2.4, 3.0)


@dataclass(frozen=True)
class ReflectionAmplitudes:
    r_coupled: complex
    r_bare: complex


def _denominator(p: CavityParams, coupled: bool) -> complex:
    d = p.kappa + 1j * p.delta_c
    if coupled:
        d += p.g ** 2 / (p.gamma + 1j * p.delta_a)
    return d


def reflection_amplitude(p: CavityParams, coupled: bool) -> complex:
    """Steady-state reflection of a single-sided cavity, optionally with a coupled atom.

    r = 1 - 2 kappa_r / (kappa + i delta_c + g^2 / (gamma + i delta_a))
    """
    return complex(1 - 2 * p.kappa_r / _denominator(p, coupled))


def reflection_amplitudes(p: CavityParams) -> ReflectionAmplitudes:
    return ReflectionAmplitudes(reflection_amplitude(p, True), reflection_amplitude(p, False))


def loss_amplitudes(p: CavityParams, coupled: bool) -> tuple[complex, complex]:
    """Amplitudes leaking out through the lossy mirror and via atomic scattering.

    Together with :func:`reflection_amplitude` they form an isometry:
    ``|r|^2 + |l_mirror|^2 + |l_atom|^2 == 1``.
    """
    d = _denominator(p, coupled)
    cav = np.sqrt(2 * p.kappa_r) / d
    mirror = np.sqrt(2 * (p.kappa - p.kappa_r)) * cav
    atom = 0.0
    if coupled:
        atom = np.sqrt(2 * p.gamma) * p.g / (p.gamma + 1j * p.delta_a) * cav
    return complex(mirror), complex(atom)


_CAV_LABEL = HilbertLabel.of((ATOM_A, 2), (POL, 2))


def ideal_reflection(atom: str = ATOM_A) -> LinearOp:
    """Lossless reflection: only up_z with R is reflected without a pi shift."""
    label = HilbertLabel.of((atom, 2), (POL, 2))
    return LinearOp(label, np.diag([1, -1, -1, -1]).astype(complex), unitary=True)


def _coupling_pattern() -> np.ndarray:
    # [atom state, polarization] -> does the atom shift the cavity resonance
    return np.array([[True, False], [False, False]])


@dataclass(frozen=True)
class ReflectionResponse:
    """Per (atom state, polarization) output amplitude and environment leakage.

    ``env[s, p, k]`` is the amplitude sent into loss channel ``k`` for input
    light of polarization ``p`` while the atom sits in state ``s``.  Loss
    channels are distinct optical modes, so branches that leak differently
    become distinguishable.
    """

    amp: np.ndarray
    env: np.ndarray = field(default_factory=lambda: np.zeros((2, 2, 0), complex))

    def matrix(self) -> np.ndarray:
        return np.diag(self.amp.reshape(-1))

    def check_isometry(self, atol: float = 1e-10) -> None:
        tot = np.abs(self.amp) ** 2 + (np.abs(self.env) ** 2).sum(axis=-1)
        if np.max(np.abs(tot - 1)) > atol:
            raise ValueError(f"reflection response is not an isometry: {tot}")


def mode_matched(base: ReflectionResponse, mode_match: float,
                 r_miss: complex = 1.0) -> ReflectionResponse:
    """Reflection back into the fiber mode for a power overlap ``mode_match``.

    The fiber mode is sqrt(m) c + sqrt(1-m) o, with c the cavity mode and o
    the part that never enters the resonator and reflects with ``r_miss``.
    Projecting the reflected field back onto the fiber gives
    ``m r + (1 - m) r_miss``; the orthogonal remainder
    ``sqrt(m (1 - m)) (r - r_miss)`` is lost, and it still depends on the atom.
    """
    if not 0.0 <= mode_match <= 1.0:
        raise ValueError(f"mode_match {mode_match} outside [0, 1]")
    m = mode_match
    amp = m * base.amp + (1 - m) * r_miss
    scatter = np.sqrt(m * (1 - m)) * (base.amp - r_miss)
    env = np.concatenate([np.sqrt(m) * base.env, scatter[..., None]], axis=-1)
    return ReflectionResponse(amp, env)


def cavity_response(p: CavityParams) -> ReflectionResponse:
    """Input-output response of one module, including its loss channels."""
    amp = np.empty((2, 2), complex)
    env = np.zeros((2, 2, 2), complex)
    for s in range(2):
        for pol in range(2):
            coupled = bool(_coupling_pattern()[s, pol])
            amp[s, pol] = reflection_amplitude(p, coupled)
            env[s, pol] = loss_amplitudes(p, coupled)
    return ReflectionResponse(amp, env)


def idealized_response(reflectivity: float = 1.0, phase_shift: np.ndarray | None = None
                       ) -> ReflectionResponse:
    """Ideal sign pattern (+, -, -, -) with a uniform, atom-independent loss.

    ``phase_shift[s, p]`` optionally adds detuning-induced phases.
    """
    if not 0.0 <= reflectivity <= 1.0:
        raise ValueError(f"reflectivity {reflectivity} outside [0, 1]")
    amp = np.where(_coupling_pattern(), 1.0, -1.0).astype(complex) * np.sqrt(reflectivity)
    if phase_shift is not None:
        amp = amp * np.exp(1j * np.asarray(phase_shift))
    env = np.full((2, 2, 1), np.sqrt(1 - reflectivity), complex)
    return ReflectionResponse(amp, env)


def detuning_phase(p: CavityParams, delta_c: float) -> np.ndarray:
    """Phase change of each (atom, polarization) entry when the cavity is detuned by delta_c."""
    out = np.empty((2, 2))
    pd = p.detuned(delta_c)
    for s in range(2):
        for pol in range(2):
            c = bool(_coupling_pattern()[s, pol])
            out[s, pol] = np.angle(reflection_amplitude(pd, c)) - np.angle(reflection_amplitude(p, c))
    return out


def physical_reflection(p: CavityParams, mode_match: float, atom: str = ATOM_A) -> LinearOp:
    """Diagonal (non-unitary) reflection map on atom x polarization."""
    resp = mode_matched(cavity_response(p), mode_match)
    return LinearOp(HilbertLabel.of((atom, 2), (POL, 2)), resp.matrix())


def waveplate(sign: int = +1) -> LinearOp:
    """Quarter-wave plate; ``sign=+1`` is T_{lambda/4}, ``sign=-1`` is T_{-lambda/4}."""
    if sign not in (1, -1):
        raise ValueError("waveplate sign must be +1 or -1")
    ph = -1j if sign > 0 else 1j
    m = np.array([[ph, 1], [1, ph]], dtype=complex) / SQRT2
    return LinearOp(POLARIZATION, m, unitary=True)


_ROTATIONS = {
    ("y", "pi/2"): np.array([[1, -1], [1, 1]]) / SQRT2,
    ("x", "pi/2"): np.array([[1, -1j], [-1j, 1]]) / SQRT2,
    ("y", "pi"): np.array([[0, -1], [1, 0]]),
    ("x", "pi"): np.array([[0, -1j], [-1j, 0]]),
}


def _angle_key(angle) -> str:
    if isinstance(angle, str):
        key = angle.replace(" ", "").lower()
    elif np.isclose(angle, np.pi):
        key = "pi"
    elif np.isclose(angle, np.pi / 2):
        key = "pi/2"
    else:
        key = str(angle)
    if key not in ("pi", "pi/2"):
        raise ValueError(f"unsupported rotation angle {angle!r}; only pi and pi/2")
    return key


def rotation_matrix(axis: str, angle, inverse: bool = False) -> np.ndarray:
    if axis not in ("x", "y"):
        raise ValueError(f"unsupported rotation axis {axis!r}")
    m = np.asarray(_ROTATIONS[axis, _angle_key(angle)], dtype=complex)
    return m.conj().T if inverse else m


def qubit_rotation(axis: str, angle, inverse: bool = False, atom: str = ATOM_A) -> LinearOp:
    return LinearOp(HilbertLabel.of((atom, 2)), rotation_matrix(axis, angle, inverse), unitary=True)


def misalignment_matrix(theta: float) -> np.ndarray:
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return AD_FRAME @ rot @ AD_FRAME.conj().T


def polarization_misalignment(theta: float) -> LinearOp:
    """Rotate by ``theta`` within the linear A/D plane (A -> cos A + sin D)."""
    return LinearOp(POLARIZATION, misalignment_matrix(theta), unitary=True)
