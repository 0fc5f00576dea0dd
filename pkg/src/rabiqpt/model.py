"""Rabi-model Hamiltonians and the trapped-ion parameter mapping.

All frequencies are angular frequencies in rad/s.  Use :func:`khz` to
convert the ``f = omega / 2 pi`` values quoted in kHz.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import hilbert
from .errors import ConfigError
from .hilbert import SpaceConfig

TWO_PI = 2.0 * math.pi


def khz(value: float) -> float:
    """Angular frequency (rad/s) of a frequency given in kHz."""
    return TWO_PI * 1e3 * value


def to_khz(omega: float) -> float:
    return omega / (TWO_PI * 1e3)


@dataclass(frozen=True)
class QrmParams:
    omega_a: float
    omega_f: float
    lam: float

    def __post_init__(self):
        if self.omega_a <= 0 or self.omega_f <= 0:
            raise ConfigError("omega_a and omega_f must be positive")
        if self.lam < 0:
            raise ConfigError("coupling must be non-negative")

    @property
    def g(self) -> float:
        return 2.0 * self.lam / math.sqrt(self.omega_a * self.omega_f)

    @property
    def ratio(self) -> float:
        return self.omega_a / self.omega_f

    @classmethod
    def from_ratio(cls, ratio: float, g: float, omega_f: float = 1.0) -> "QrmParams":
        omega_a = ratio * omega_f
        return cls(omega_a, omega_f, g * math.sqrt(omega_a * omega_f) / 2.0)


@dataclass(frozen=True)
class IonParams:
    """Bichromatic drive detunings and sideband Rabi frequency ``eta * Omega``."""

    delta_b: float
    delta_r: float
    omega_sb: float = 0.0
    eta: float = 0.07

    def __post_init__(self):
        if not self.delta_b > self.delta_r > 0:
            raise ConfigError(f"need delta_b > delta_r > 0, got {self.delta_b}, {self.delta_r}")
        if not 0 < self.eta < 0.5:
            raise ConfigError(f"eta must lie in (0, 0.5), got {self.eta}")
        if self.omega_sb < 0:
            raise ConfigError("omega_sb must be non-negative")

    @property
    def ratio(self) -> float:
        return (self.delta_b + self.delta_r) / (self.delta_b - self.delta_r)

    @property
    def omega_sb_crit(self) -> float:
        return critical_sideband_rabi(self.delta_b, self.delta_r)

    def with_omega_sb(self, omega_sb: float) -> "IonParams":
        return IonParams(self.delta_b, self.delta_r, omega_sb, self.eta)


@dataclass(frozen=True)
class NonlinearConfig:
    """Lamb-Dicke expansion of the coupling.

    ``prefactor`` keeps the overall ``exp(-eta^2 / 2)`` of the series; setting
    it to False keeps only the polynomial terms.
    """

    enabled: bool = False
    l_max: int = 1
    eta: float = 0.07
    prefactor: bool = True

    def __post_init__(self):
        if self.l_max < 0:
            raise ConfigError("l_max must be >= 0")
        if self.eta < 0:
            raise ConfigError("eta must be >= 0")


def ion_to_qrm(ion: IonParams) -> QrmParams:
    if ion.delta_b <= ion.delta_r:
        raise ConfigError("delta_b must exceed delta_r")
    return QrmParams(
        omega_a=(ion.delta_b + ion.delta_r) / 2.0,
        omega_f=(ion.delta_b - ion.delta_r) / 2.0,
        lam=ion.omega_sb / 2.0,
    )


def qrm_to_ion(qrm: QrmParams, eta: float = 0.07) -> IonParams:
    if qrm.omega_a <= qrm.omega_f:
        raise ConfigError("the ion mapping needs omega_a > omega_f")
    return IonParams(
        delta_b=qrm.omega_a + qrm.omega_f,
        delta_r=qrm.omega_a - qrm.omega_f,
        omega_sb=2.0 * qrm.lam,
        eta=eta,
    )


def critical_sideband_rabi(delta_b: float, delta_r: float) -> float:
    return math.sqrt(delta_b**2 - delta_r**2) / 2.0


def detunings_from_ratio(ratio: float, omega_sb_crit: float) -> tuple[float, float]:
    """Detunings giving ratio ``R`` with the critical point at ``omega_sb_crit``."""
    if ratio <= 1:
        raise ConfigError(f"ratio must exceed 1, got {ratio}")
    if omega_sb_crit <= 0:
        raise ConfigError("omega_sb_crit must be positive")
    root = math.sqrt(ratio)
    return omega_sb_crit * (root + 1.0 / root), omega_sb_crit * (root - 1.0 / root)


def control_parameter(ion: IonParams) -> float:
    return 2.0 * ion.omega_sb / math.sqrt(ion.delta_b**2 - ion.delta_r**2)


def coupling_operator(space: SpaceConfig, nl: NonlinearConfig | None = None) -> np.ndarray:
    """``(s+ + s-)(a + a^dag)``, or ``(s+ + s-)(f a + a^dag f)`` when nonlinear."""
    a, adag = hilbert.build_ladder(space)
    _, sp, sm = hilbert.build_spin(space)
    if nl is None or not nl.enabled:
        boson = a + adag
    else:
        f = np.kron(np.eye(2), np.diag(nonlinear_diagonal(nl, space.n_fock)))
        boson = f @ a + adag @ f
    return (sp + sm) @ boson


def nonlinear_diagonal(nl: NonlinearConfig, n_fock: int) -> np.ndarray:
    """Fock-basis diagonal of ``f = e^{-eta^2/2} sum_l (-eta^2)^l / (l!(l+1)!) a^dag^l a^l``.

    ``a^dag^l a^l`` is diagonal with entries ``n! / (n - l)!`` (zero for n < l).
    """
    n = np.arange(n_fock, dtype=float)
    eta2 = nl.eta**2
    out = np.zeros(n_fock)
    falling = np.ones(n_fock)
    for l in range(nl.l_max + 1):
        if l > 0:
            falling = falling * np.clip(n - (l - 1), 0.0, None)
        out += (-eta2) ** l / (math.factorial(l) * math.factorial(l + 1)) * falling
    if nl.prefactor:
        out *= math.exp(-eta2 / 2.0)
    return out


def bare_hamiltonian(omega_a: float, omega_f: float, space: SpaceConfig) -> np.ndarray:
    """Uncoupled part ``omega_a/2 s_z + omega_f a^dag a`` (diagonal)."""
    diag = omega_a / 2.0 * hilbert.spin_labels(space) + omega_f * hilbert.fock_labels(space)
    return np.diag(diag.astype(complex))


def build_qrm_hamiltonian(qrm: QrmParams, space: SpaceConfig) -> np.ndarray:
    return bare_hamiltonian(qrm.omega_a, qrm.omega_f, space) + qrm.lam * coupling_operator(space)


def build_nonlinear_hamiltonian(qrm: QrmParams, nl: NonlinearConfig, space: SpaceConfig) -> np.ndarray:
    if not nl.enabled:
        raise ConfigError("nonlinear config is disabled")
    return bare_hamiltonian(qrm.omega_a, qrm.omega_f, space) + qrm.lam * coupling_operator(space, nl)


def frame_hamiltonian(ion: IonParams, space: SpaceConfig) -> np.ndarray:
    """Interaction-picture generator ``-(db+dr)/4 s_z - (db-dr)/2 a^dag a``.

    It commutes with ``s_z`` and ``a^dag a``, so populations are frame independent.
    """
    return bare_hamiltonian(-(ion.delta_b + ion.delta_r) / 2.0, -(ion.delta_b - ion.delta_r) / 2.0, space)


def effective_ground_energy(qrm: QrmParams) -> float:
    """Leading-order ground energy of the low-energy effective Hamiltonian.

    Normal phase (g < 1): ``-omega_a/2 + omega_f (sqrt(1 - g^2) - 1) / 2``.
    Superradiant phase (g > 1): ``-omega_a (g^2 + g^-2)/4 + omega_f (sqrt(1 - g^-4) - 1) / 2``.
    """
    g = qrm.g
    if abs(g - 1.0) < 1e-6:
        raise ConfigError("effective energies are undefined at the critical point")
    if g < 1.0:
        return -qrm.omega_a / 2.0 + qrm.omega_f * (math.sqrt(1.0 - g**2) - 1.0) / 2.0
    return -qrm.omega_a * (g**2 + g**-2) / 4.0 + qrm.omega_f * (math.sqrt(1.0 - g**-4) - 1.0) / 2.0
