"""Error channels, shot-to-shot parameter sampling and the per-cause error budget."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .qcore import DensityOp, embed

# Budget row order: the large causes first, then the sub-percent extras.
CAUSES: tuple[tuple[str, str], ...] = (
    ("weak_coherent", "Weak coherent states and losses"),
    ("spam", "State-preparation and measurement"),
    ("polarization", "Polarization effects"),
    ("mode_matching", "Mode matching"),
    ("detuning", "Atom-cavity detunings and lock widths"),
    ("decoherence", "Atomic decoherence"),
    ("dark_counts", "Detector dark counts"),
)
CAUSE_KEYS = tuple(k for k, _ in CAUSES)


@dataclass(frozen=True)
class ImperfectionParams:
    """Error knobs.  A knob only acts when its cause is listed in ``enabled``.

    ``spam_error`` is the probability that a single qubit rotation pulse
    (preparation, feedback or readout) does not happen.  ``delta_lock_sigma_mhz``
    is the standard deviation of the per-shot cavity detuning, in linear MHz
    (2*pi*MHz as an angular rate).  Dephasing windows left as None are
    derived from the protocol timings.
    """

    spam_error: float = 0.0
    pol_misalign_theta: float = 0.0
    mode_match_a: float = 1.0
    mode_match_b: float = 1.0
    delta_lock_sigma_mhz: float = 0.0
    t2_a_us: float = math.inf
    t2_b_us: float = math.inf
    dephase_window_a_us: float | None = None
    dephase_window_b_us: float | None = None
    dephasing_law: str = "gaussian"
    dark_click_prob: float = 0.0
    enabled: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "enabled", frozenset(self.enabled))
        unknown = self.enabled - set(CAUSE_KEYS)
        if unknown:
            raise ValueError(f"unknown causes {sorted(unknown)}")
        for name in ("spam_error", "mode_match_a", "mode_match_b", "dark_click_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.delta_lock_sigma_mhz < 0:
            raise ValueError("delta_lock_sigma_mhz must be >= 0")
        if not (self.t2_a_us > 0 and self.t2_b_us > 0):
            raise ValueError("T2 times must be positive")
        if abs(self.pol_misalign_theta) >= math.pi / 2:
            raise ValueError("|pol_misalign_theta| must be < pi/2")
        for name in ("dephase_window_a_us", "dephase_window_b_us"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.dephasing_law not in ("gaussian", "exponential"):
            raise ValueError(f"unknown dephasing law {self.dephasing_law!r}")

    def on(self, cause: str) -> bool:
        return cause in self.enabled

    def only(self, *causes: str) -> "ImperfectionParams":
        return replace(self, enabled=frozenset(causes))

    def with_all(self) -> "ImperfectionParams":
        return replace(self, enabled=frozenset(CAUSE_KEYS))

    @classmethod
    def none(cls) -> "ImperfectionParams":
        return cls()

    @classmethod
    def nominal(cls) -> "ImperfectionParams":
        """All causes on.  spam_error, dark_click_prob and the drift knobs are
        calibrated against the end-to-end fidelities, not measured values."""
        return cls(spam_error=0.016, pol_misalign_theta=0.12, mode_match_a=0.96,
                   mode_match_b=0.96, delta_lock_sigma_mhz=0.7, t2_a_us=400.0,
                   t2_b_us=400.0, dark_click_prob=3e-5, enabled=frozenset(CAUSE_KEYS))

    @property
    def stochastic(self) -> bool:
        return self.on("detuning") and self.delta_lock_sigma_mhz > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enabled"] = [k for k in CAUSE_KEYS if k in self.enabled]
        return d


# --------------------------------------------------------------------------
# channels

def _coherence_factor(t: float, t2: float, law: str) -> float:
    if t == 0 or math.isinf(t2):
        return 1.0
    if math.isinf(t):
        return 0.0
    return math.exp(-(t / t2) ** 2) if law == "gaussian" else math.exp(-t / t2)


def dephasing_channel(rho: DensityOp, t: float, t2: float, target: str,
                      law: str = "gaussian") -> DensityOp:
    """Damp the z-basis coherences of one atom by exp(-(t/T2)^2)."""
    if t < 0:
        raise ValueError("dephasing time must be >= 0")
    c = _coherence_factor(t, t2, law)
    # phase damping with Kraus sqrt((1+c)/2) I, sqrt((1-c)/2) Z
    z = np.diag([1.0, -1.0]).astype(complex)
    zf = embed(z, rho.label, [target])
    m = (1 + c) / 2 * rho.matrix + (1 - c) / 2 * zf @ rho.matrix @ zf
    return DensityOp(rho.label, m)


def spam_channel(rho: DensityOp, p: float, targets=None) -> DensityOp:
    """Flip each qubit's z populations with probability ``p``.

    Plain bit-flip channel.  The runners model SPAM as failed rotation
    pulses instead (see ``protocol.prepare_with_errors``).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("flip probability must be in [0, 1]")
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    targets = rho.label.names if targets is None else targets
    m = rho.matrix
    for t in targets:
        xf = embed(x, rho.label, [t])
        m = (1 - p) * m + p * xf @ m @ xf
    return DensityOp(rho.label, m)


# --------------------------------------------------------------------------
# shot sampling

@dataclass(frozen=True)
class ShotParams:
    """Concrete per-shot cavity detunings (linear MHz) for modules a and b."""

    delta_a: np.ndarray
    delta_b: np.ndarray

    def __len__(self):
        return len(self.delta_a)


def sample_shot_params(nominal: ImperfectionParams, seed: int = 0, n: int = 1,
                       rng: np.random.Generator | None = None) -> ShotParams:
    """Draw ``n`` quasi-static lock detunings, independent per module.

    Without lock jitter a single all-zero draw is returned, whatever ``n``.
    """
    if not nominal.stochastic:
        z = np.zeros(1)
        return ShotParams(z, z.copy())
    rng = rng if rng is not None else np.random.default_rng(seed)
    sig = nominal.delta_lock_sigma_mhz
    d = rng.normal(0.0, sig, size=(2, n))
    return ShotParams(d[0], d[1])


# --------------------------------------------------------------------------
# budget

class UnderSamplingError(RuntimeError):
    pass


@dataclass
class ErrorBudgetRow:
    cause: str
    label: str
    delta_f_truth: float
    delta_f_truth_err: float
    delta_f_bell: float
    delta_f_bell_err: float


@dataclass
class ErrorBudget:
    rows: list[ErrorBudgetRow]
    baseline_truth: float
    baseline_bell: float
    total: ErrorBudgetRow

    def sum_rows(self) -> tuple[float, float]:
        return (sum(r.delta_f_truth for r in self.rows),
                sum(r.delta_f_bell for r in self.rows))


def _cell(cfg, imp, draws: int, seed: int, n_boot: int):
    from .protocol import PhysicalRunner
    from .tomography import analytic_bell_fidelities, analytic_truth_table, bootstrap_draws

    runner = PhysicalRunner(cfg, imp, n_draws=draws, seed=seed)
    truth = analytic_truth_table(runner).fidelity
    bell = float(np.mean(list(analytic_bell_fidelities(runner).values())))
    if len(runner.draws) > 1:
        t_err, b_err = bootstrap_draws(runner, n_boot=n_boot, seed=seed)
    else:
        t_err = b_err = 0.0
    return truth, bell, t_err, b_err


def error_budget(base_cfg, imp: ImperfectionParams, shots_per_cell: int = 400,
                 seed: int = 0, n_boot: int = 200, causes=CAUSE_KEYS,
                 max_stderr: float = 0.005) -> ErrorBudget:
    """Fidelity drop of each cause switched on alone, relative to all causes off.

    Cells are deterministic except for lock jitter, which is Monte Carlo
    sampled with ``shots_per_cell`` draws; its standard error comes from a
    bootstrap over the draws.  Causes absent from ``imp.enabled`` give zero rows.
    """
    from .harness import substream_seed

    base_t, base_b, _, _ = _cell(base_cfg, imp.only(), 1, seed, n_boot)
    rows = []
    for i, cause in enumerate(causes):
        if not imp.on(cause):
            rows.append(ErrorBudgetRow(cause, dict(CAUSES)[cause], 0.0, 0.0, 0.0, 0.0))
            continue
        t, b, te, be = _cell(base_cfg, imp.only(cause), shots_per_cell,
                             substream_seed(seed, "budget", i), n_boot)
        rows.append(ErrorBudgetRow(cause, dict(CAUSES)[cause], base_t - t, te, base_b - b, be))
    active = [c for c in causes if imp.on(c)]
    t, b, te, be = _cell(base_cfg, imp.only(*active), shots_per_cell,
                         substream_seed(seed, "budget", len(causes)), n_boot)
    total = ErrorBudgetRow("total", "All causes", base_t - t, te, base_b - b, be)
    worst = max([total.delta_f_truth_err, total.delta_f_bell_err]
                + [max(r.delta_f_truth_err, r.delta_f_bell_err) for r in rows])
    if worst >= max_stderr:
        raise UnderSamplingError(
            f"standard error {worst:.4f} >= {max_stderr}; raise shots_per_cell")
    return ErrorBudget(rows, base_t, base_b, total)
