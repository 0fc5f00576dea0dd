"""Quench dynamics through the critical point.

The sideband Rabi frequency is ramped linearly, ``omega_sb(t) = omega_max t / tau_q``,
and the coupling ``lambda = omega_sb / 2`` is held at its step-midpoint value
inside every integration step.  Both solvers use integrating-factor (Lawson)
RK4: the diagonal part of the generator (bare energies, and for density
matrices motional and qubit dephasing) is applied exactly and only the
coupling and heating terms go through the Runge-Kutta stages.  Eigenstates of
the bare Hamiltonian are then propagated without norm loss, and the ``n^2``
dephasing rate does not make the step size collapse at large Fock cutoffs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from . import hilbert, model
from .errors import ConfigError, ConvergenceError, CutoffError, PositivityError
from .hilbert import QuantumState, SpaceConfig
from .model import IonParams, NonlinearConfig

log = logging.getLogger(__name__)

MAX_CUTOFF_RETRIES = 3
TAIL_LEVELS = 3


@dataclass(frozen=True)
class QuenchSchedule:
    omega_sb_max: float
    tau_q: float
    sample_times: tuple[float, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.sample_times)
        object.__setattr__(self, "sample_times", times)
        if self.tau_q <= 0:
            raise ConfigError("tau_q must be positive")
        if self.omega_sb_max < 0:
            raise ConfigError("omega_sb_max must be non-negative")
        if not times:
            raise ConfigError("need at least one sample time")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("sample_times must be strictly increasing")
        if times[0] < 0 or times[-1] > self.tau_q * (1 + 1e-12):
            raise ConfigError("sample_times must lie in [0, tau_q]")

    @classmethod
    def uniform(cls, omega_sb_max: float, tau_q: float, n_samples: int = 101) -> "QuenchSchedule":
        return cls(omega_sb_max, tau_q, tuple(np.linspace(0.0, tau_q, n_samples)))

    def omega_sb(self, t: float) -> float:
        return self.omega_sb_max * t / self.tau_q

    def time_of(self, omega_sb: float) -> float:
        """Time at which the ramp reaches ``omega_sb``."""
        if self.omega_sb_max == 0:
            raise ConfigError("the ramp never moves")
        return self.tau_q * omega_sb / self.omega_sb_max

    def with_times(self, sample_times) -> "QuenchSchedule":
        return QuenchSchedule(self.omega_sb_max, self.tau_q, tuple(sample_times))


def time_to_critical(ion: IonParams, schedule: QuenchSchedule) -> float:
    return schedule.time_of(ion.omega_sb_crit)


@dataclass(frozen=True)
class NoiseModel:
    """Parameter drifts seen by the ion.

    ``ac_stark_alpha`` (s/rad) gives the common detuning shift ``alpha omega_sb^2``;
    it only acts when ``compensation_enabled`` is False.  ``trap_offset``
    widens the detuning splitting asymmetrically: ``delta_b + eps, delta_r - eps``.
    """

    ac_stark_alpha: float = 0.0
    compensation_enabled: bool = True
    trap_offset: float = 0.0


def calibrated_ac_stark_alpha(shift: float = model.khz(10.0), omega_sb: float = model.khz(14.2)) -> float:
    """``alpha`` such that the shift equals ``shift`` at sideband Rabi frequency ``omega_sb``."""
    return shift / omega_sb**2


@dataclass(frozen=True)
class DissipatorConfig:
    """Lindblad rates.  ``tau_d = inf`` disables motional dephasing.

    ``heating_rate`` is the product ``gamma n_th`` in quanta/s and is used for
    both the up- and down-going jump operators.
    """

    tau_d: float = math.inf
    heating_rate: float = 0.0
    qubit_rate: float = 0.0

    def __post_init__(self):
        if self.tau_d <= 0:
            raise ConfigError("tau_d must be positive (use inf to disable)")
        if self.heating_rate < 0 or self.qubit_rate < 0:
            raise ConfigError("rates must be non-negative")

    @property
    def dephasing_rate(self) -> float:
        return 0.0 if math.isinf(self.tau_d) else 1.0 / self.tau_d

    @property
    def is_closed(self) -> bool:
        return self.dephasing_rate == 0 and self.heating_rate == 0 and self.qubit_rate == 0


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    t: float
    omega_sb: float
    g: float
    p_up: float
    n_bar: float
    n_f: float
    parity_exp: float
    norm_or_trace: float
    phonon_dist: np.ndarray = field(repr=False)


def effective_detunings(ion: IonParams, noise: NoiseModel, omega_sb: float) -> tuple[float, float]:
    delta_b = ion.delta_b + noise.trap_offset
    delta_r = ion.delta_r - noise.trap_offset
    if not noise.compensation_enabled:
        shift = noise.ac_stark_alpha * omega_sb**2
        delta_b -= shift
        delta_r -= shift
    return delta_b, delta_r


def measurement_model(
    p_up_true,
    shots: int,
    dark_error: float = 0.0,
    bright_error: float = 0.0,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
):
    """Shot-noise-limited spin readout with detection errors.

    A bright (up) ion is missed with probability ``bright_error`` and a dark
    one reads bright with probability ``dark_error``.  The returned frequency
    has the dark-error background subtracted and is clipped to [0, 1].
    Accepts a scalar or an array of true populations.
    """
    if shots < 1:
        raise ConfigError("shots must be >= 1")
    p = np.asarray(p_up_true, dtype=float)
    for name, val in (("dark_error", dark_error), ("bright_error", bright_error)):
        if not 0.0 <= val <= 1.0:
            raise ConfigError(f"{name} must be a probability")
    if np.any((p < -1e-12) | (p > 1 + 1e-12)):
        raise ConfigError("p_up_true must lie in [0, 1]")
    p = np.clip(p, 0.0, 1.0)
    if rng is None:
        rng = np.random.default_rng(seed)
    p_obs = p * (1.0 - bright_error) + (1.0 - p) * dark_error
    freq = rng.binomial(shots, p_obs) / shots - dark_error
    out = np.clip(freq, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


class _Generator:
    """Time-dependent Hamiltonian pieces for one quench on one space."""

    def __init__(self, ion: IonParams, noise: NoiseModel, nl: NonlinearConfig | None, space: SpaceConfig):
        if abs(noise.trap_offset) >= (ion.delta_b - ion.delta_r) / 2.0:
            raise ConfigError("trap_offset must be smaller than half the detuning splitting")
        self.ion, self.noise, self.space = ion, noise, space
        self.coupling = model.coupling_operator(space, nl).real
        self.spin = hilbert.spin_labels(space)
        self.fock = hilbert.fock_labels(space).astype(float)
        self.parity = hilbert.parity_diagonal(space)

    def frequencies(self, omega_sb: float) -> tuple[float, float]:
        db, dr = effective_detunings(self.ion, self.noise, omega_sb)
        return (db + dr) / 2.0, (db - dr) / 2.0

    @property
    def static(self) -> bool:
        """True when the bare energies do not follow the ramp."""
        return self.noise.compensation_enabled or self.noise.ac_stark_alpha == 0

    def bare_diagonal(self, omega_sb: float) -> np.ndarray:
        wa, wf = self.frequencies(omega_sb)
        return wa / 2.0 * self.spin + wf * self.fock

    def hamiltonian(self, omega_sb: float) -> np.ndarray:
        return np.diag(self.bare_diagonal(omega_sb)) + (omega_sb / 2.0) * self.coupling

    def g(self, omega_sb: float) -> float:
        db, dr = effective_detunings(self.ion, self.noise, omega_sb)
        return 2.0 * omega_sb / math.sqrt(db**2 - dr**2)

    def sample(self, t: float, omega_sb: float, pops: np.ndarray, norm: float) -> TrajectorySample:
        n = self.space.n_fock
        dist = pops[:n] + pops[n:]
        n_bar = float(self.fock[:n] @ dist)
        wa, wf = self.frequencies(omega_sb)
        return TrajectorySample(
            t=t,
            omega_sb=omega_sb,
            g=self.g(omega_sb),
            p_up=float(pops[n:].sum()),
            n_bar=n_bar,
            n_f=n_bar * wf / wa,
            parity_exp=float(self.parity @ pops),
            norm_or_trace=norm,
            phonon_dist=dist,
        )


STEP_SAFETY = 0.1


def default_max_step(
    ion: IonParams,
    schedule: QuenchSchedule,
    noise: NoiseModel | None = None,
    space: SpaceConfig | None = None,
    nl: NonlinearConfig | None = None,
) -> float:
    """Step bound ``2 pi / (40 max(delta_b, omega_max))``, tightened so that
    ``h ||lambda C||_inf <= STEP_SAFETY`` for the coupling at the end of the ramp."""
    bound = 2.0 * math.pi / (40.0 * max(ion.delta_b, schedule.omega_sb_max))
    coupling = model.coupling_operator(space or SpaceConfig(60), nl).real
    norm = schedule.omega_sb_max / 2.0 * float(np.max(np.sum(np.abs(coupling), axis=1)))
    return min(bound, STEP_SAFETY / norm) if norm > 0 else bound


def _step_plan(schedule: QuenchSchedule, max_step: float):
    """Yield ``(t0, h, n_steps, t_sample)`` for each interval ending at a sample time."""
    t0 = 0.0
    for ts in schedule.sample_times:
        span = ts - t0
        if span <= 0:
            yield t0, 0.0, 0, ts
            continue
        n = max(1, int(math.ceil(span / max_step - 1e-9)))
        yield t0, span / n, n, ts
        t0 = ts


def _lawson_schrodinger(gen: _Generator, schedule: QuenchSchedule, psi: np.ndarray, max_step: float):
    coupling = scipy.sparse.csr_matrix(gen.coupling)
    samples = []
    cache = {}
    for t0, h, n, ts in _step_plan(schedule, max_step):
        for k in range(n):
            om = schedule.omega_sb(t0 + (k + 0.5) * h)
            key = h if gen.static else (h, om)
            if key not in cache:
                cache.clear()
                half = np.exp(-0.5j * h * gen.bare_diagonal(om))
                cache[key] = (half, half * half)
            half, full = cache[key]
            c = -0.5j * om * coupling
            k1 = c @ psi
            k2 = c @ (half * (psi + 0.5 * h * k1))
            k3 = c @ (half * psi + 0.5 * h * k2)
            k4 = c @ (full * psi + h * (half * k3))
            psi = full * psi + (h / 6.0) * (full * k1 + 2.0 * half * (k2 + k3) + k4)
        pops = np.abs(psi) ** 2
        samples.append(gen.sample(ts, schedule.omega_sb(ts), pops, float(pops.sum())))
    return samples, psi


def _with_cutoff_retry(run, space: SpaceConfig, init: QuantumState | None, fixed_cutoff: bool = False):
    for attempt in range(MAX_CUTOFF_RETRIES + 1):
        start = hilbert.ground_product_state(space) if init is None else init.embed(space)
        samples, final = run(space, start)
        tail = max(float(s.phonon_dist[-TAIL_LEVELS:].sum()) for s in samples)
        if tail < space.tail_tolerance:
            return samples, final
        if fixed_cutoff:
            log.warning("tail population %.2e at fixed cutoff %d; results are truncation limited", tail, space.fock_cutoff)
            return samples, final
        log.info("Fock cutoff %d inadequate (tail %.2e), retrying", space.fock_cutoff, tail)
        if attempt < MAX_CUTOFF_RETRIES:
            space = space.grown()
    raise CutoffError(f"tail population {tail:.3e} still above tolerance at cutoff {space.fock_cutoff}")


def evolve_schrodinger(
    ion: IonParams,
    schedule: QuenchSchedule,
    noise: NoiseModel | None = None,
    nl: NonlinearConfig | None = None,
    space: SpaceConfig | None = None,
    init: QuantumState | None = None,
    *,
    max_step: float | None = None,
    adaptive: bool = False,
    return_state: bool = False,
    fixed_cutoff: bool = False,
):
    """Integrate ``i d/dt psi = H(t) psi`` through the ramp.

    Returns the list of :class:`TrajectorySample` at ``schedule.sample_times``
    (and the final :class:`QuantumState` if ``return_state``).  The Fock
    cutoff grows when the top levels fill up unless ``fixed_cutoff``.  With
    ``adaptive`` the step is halved until sampled ``p_up`` and ``n_bar``
    change by less than 1e-7.
    """
    noise = noise or NoiseModel()
    space = space or SpaceConfig(60)
    if init is not None:
        if not init.is_pure:
            raise ConfigError("Schrodinger evolution needs a pure initial state")
        init.check()

    def run(sp: SpaceConfig, start: QuantumState):
        gen = _Generator(ion, noise, nl, sp)
        h = max_step or default_max_step(ion, schedule, noise, sp, nl)
        samples, psi = _lawson_schrodinger(gen, schedule, np.array(start.data), h)
        if not adaptive:
            return samples, QuantumState(psi, sp)
        for _ in range(8):
            h /= 2.0
            finer, psi = _lawson_schrodinger(gen, schedule, np.array(start.data), h)
            change = max(max(abs(a.p_up - b.p_up), abs(a.n_bar - b.n_bar)) for a, b in zip(samples, finer))
            samples = finer
            if change < 1e-7:
                return samples, QuantumState(psi, sp)
        raise ConvergenceError("adaptive step control failed to converge")

    samples, final = _with_cutoff_retry(run, space, init, fixed_cutoff)
    return (samples, final) if return_state else samples


class _LindbladParts:
    def __init__(self, gen: _Generator, diss: DissipatorConfig):
        sp = gen.space
        self.gen = gen
        self.coupling = scipy.sparse.csr_matrix(gen.coupling)
        n = gen.fock
        up = (gen.spin > 0).astype(float)
        self.decay = -diss.dephasing_rate * (n[:, None] - n[None, :]) ** 2 - diss.qubit_rate * (up[:, None] - up[None, :]) ** 2
        self.heating = diss.heating_rate
        if self.heating:
            a, adag = hilbert.build_ladder(sp)
            self.a = scipy.sparse.csr_matrix(a.real)
            self.adag = scipy.sparse.csr_matrix(adag.real)
            # a a^dag + a^dag a, both diagonal in the truncated basis
            self.anti = (np.real(np.diag(a @ adag)) + np.real(np.diag(adag @ a)))

    def exponent(self, omega_sb: float) -> np.ndarray:
        d = self.gen.bare_diagonal(omega_sb)
        return -1j * (d[:, None] - d[None, :]) + self.decay

    def nonlinear(self, rho: np.ndarray, lam: float) -> np.ndarray:
        # rho stays Hermitian through every stage, so [C, rho] = C rho - (C rho)^dag
        c_rho = self.coupling @ rho
        out = -1j * lam * (c_rho - c_rho.conj().T)
        if self.heating:
            g = self.heating
            x = self.adag @ rho
            up = (self.adag @ x.conj().T).conj().T
            y = self.a @ rho
            down = (self.a @ y.conj().T).conj().T
            out += g * (up + down) - 0.5 * g * (self.anti[:, None] + self.anti[None, :]) * rho
        return out

    def bound(self, omega_max: float) -> float:
        c = float(abs(self.coupling).sum(axis=1).max())
        extra = 2.0 * self.heating * (self.gen.space.n_fock + 1)
        return 2.0 * (omega_max / 2.0) * c + extra


def _lawson_lindblad(parts: _LindbladParts, schedule: QuenchSchedule, rho: np.ndarray, max_step: float):
    gen = parts.gen
    samples = []
    cache = {}
    for t0, h, n, ts in _step_plan(schedule, max_step):
        for k in range(n):
            om = schedule.omega_sb(t0 + (k + 0.5) * h)
            lam = om / 2.0
            key = h if gen.static else (h, om)
            if key not in cache:
                cache.clear()
                half = np.exp(parts.exponent(om) * (h / 2.0))
                cache[key] = (half, half * half)
            half, full = cache[key]
            k1 = parts.nonlinear(rho, lam)
            k2 = parts.nonlinear(half * (rho + 0.5 * h * k1), lam)
            k3 = parts.nonlinear(half * rho + 0.5 * h * k2, lam)
            k4 = parts.nonlinear(full * rho + h * (half * k3), lam)
            rho = full * rho + (h / 6.0) * (full * k1 + 2.0 * half * (k2 + k3) + k4)
            rho = 0.5 * (rho + rho.conj().T)
        min_eig = float(np.linalg.eigvalsh(rho)[0])
        if min_eig < -1e-6:
            raise PositivityError(f"density matrix eigenvalue {min_eig:.3e} at t={ts:.6g}")
        pops = np.real(np.diag(rho)).copy()
        samples.append(gen.sample(ts, schedule.omega_sb(ts), pops, float(np.trace(rho).real)))
    return samples, rho


def evolve_lindblad(
    ion: IonParams,
    schedule: QuenchSchedule,
    noise: NoiseModel | None = None,
    nl: NonlinearConfig | None = None,
    diss: DissipatorConfig | None = None,
    space: SpaceConfig | None = None,
    init: QuantumState | None = None,
    *,
    max_step: float | None = None,
    return_state: bool = False,
    fixed_cutoff: bool = False,
):
    """Integrate the master equation

    ``d rho/dt = -i[H, rho] + L[sqrt(2 G_m) n] + L[sqrt(h) a^dag] + L[sqrt(h) a] + L[sqrt(2 G_q) s+ s-]``

    with ``L[O] rho = O rho O^dag - {O^dag O, rho}/2``.  A pure ``init`` is
    promoted to a density matrix.
    """
    noise = noise or NoiseModel()
    diss = diss or DissipatorConfig()
    space = space or SpaceConfig(40)
    if init is not None:
        init.check()

    def run(sp: SpaceConfig, start: QuantumState):
        gen = _Generator(ion, noise, nl, sp)
        parts = _LindbladParts(gen, diss)
        h = max_step
        if h is None:
            h = default_max_step(ion, schedule, noise, sp, nl)
            b = parts.bound(schedule.omega_sb_max)
            if b > 0:
                h = min(h, STEP_SAFETY / b)
        samples, rho = _lawson_lindblad(parts, schedule, start.density(), h)
        return samples, QuantumState(rho, sp)

    samples, final = _with_cutoff_retry(run, space, init, fixed_cutoff)
    return (samples, final) if return_state else samples


def evolve(ion, schedule, noise=None, nl=None, diss=None, space=None, init=None, **kw):
    """Dispatch to the Schrodinger solver when no dissipator is active."""
    if diss is None or diss.is_closed:
        return evolve_schrodinger(ion, schedule, noise, nl, space, init, **kw)
    return evolve_lindblad(ion, schedule, noise, nl, diss, space, init, **kw)
