"""Truncated spin (x) Fock space.

Basis ordering is spin-major and fixed everywhere in the package::

    |dn,0>, |dn,1>, ..., |dn,N>, |up,0>, ..., |up,N>

so the flat index of ``|s, n>`` is ``s * (N + 1) + n`` with ``s = 0`` for
spin down and ``s = 1`` for spin up.  Operators are plain dense
``numpy`` arrays of shape ``(dim, dim)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

DOWN = 0
UP = 1


@dataclass(frozen=True)
class SpaceConfig:
    """Truncation of the bosonic mode.

    Attributes
    ----------
    fock_cutoff : int
        Highest Fock index kept; the space has ``2 * (fock_cutoff + 1)`` states.
    tail_tolerance : float
        Largest probability allowed in the top Fock levels after an evolution.
    """

    fock_cutoff: int
    tail_tolerance: float = 1e-6

    def __post_init__(self):
        if int(self.fock_cutoff) != self.fock_cutoff or self.fock_cutoff < 1:
            raise ConfigError(f"fock_cutoff must be an integer >= 1, got {self.fock_cutoff}")
        if not 0.0 < self.tail_tolerance < 1.0:
            raise ConfigError(f"tail_tolerance must lie in (0, 1), got {self.tail_tolerance}")

    @property
    def n_fock(self) -> int:
        return self.fock_cutoff + 1

    @property
    def dim(self) -> int:
        return 2 * self.n_fock

    def grown(self, factor: float = 1.5) -> "SpaceConfig":
        return SpaceConfig(int(math.ceil(self.fock_cutoff * factor)), self.tail_tolerance)


def index(space: SpaceConfig, spin: int, n: int) -> int:
    if spin not in (DOWN, UP) or not 0 <= n <= space.fock_cutoff:
        raise ConfigError(f"basis label |{spin},{n}> outside the space")
    return spin * space.n_fock + n


def build_ladder(space: SpaceConfig) -> tuple[np.ndarray, np.ndarray]:
    """Annihilation and creation operators tensored with the spin identity."""
    a_mode = np.diag(np.sqrt(np.arange(1, space.n_fock, dtype=float)), 1)
    a = np.kron(np.eye(2), a_mode).astype(complex)
    return a, a.conj().T.copy()


def build_spin(space: SpaceConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(sigma_z, sigma_plus, sigma_minus)`` on the full space."""
    eye = np.eye(space.n_fock)
    sz = np.kron(np.diag([-1.0, 1.0]), eye).astype(complex)
    sp = np.kron(np.array([[0.0, 0.0], [1.0, 0.0]]), eye).astype(complex)
    return sz, sp, sp.conj().T.copy()


def number(space: SpaceConfig) -> np.ndarray:
    return np.diag(fock_labels(space).astype(complex))


def identity(space: SpaceConfig) -> np.ndarray:
    return np.eye(space.dim, dtype=complex)


def fock_labels(space: SpaceConfig) -> np.ndarray:
    """Fock index of every basis state, in basis order."""
    return np.tile(np.arange(space.n_fock), 2)


def spin_labels(space: SpaceConfig) -> np.ndarray:
    """+1 for spin-up basis states, -1 for spin-down."""
    return np.repeat([-1.0, 1.0], space.n_fock)


def parity_diagonal(space: SpaceConfig) -> np.ndarray:
    return spin_labels(space) * (-1.0) ** fock_labels(space)


def parity(space: SpaceConfig) -> np.ndarray:
    """Z2 parity ``sigma_z (-1)^(a^dag a)``, conserved by the Rabi Hamiltonian."""
    return np.diag(parity_diagonal(space).astype(complex))


def is_hermitian(op: np.ndarray, atol: float = 1e-12) -> bool:
    scale = max(1.0, float(np.max(np.abs(op))))
    return bool(np.max(np.abs(op - op.conj().T)) <= atol * scale)


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Pure state (1-D vector) or density matrix (2-D) on ``space``."""

    data: np.ndarray
    space: SpaceConfig

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if data.ndim == 1:
            if data.shape != (self.space.dim,):
                raise ConfigError(f"state vector has shape {data.shape}, expected ({self.space.dim},)")
        elif data.ndim == 2:
            if data.shape != (self.space.dim, self.space.dim):
                raise ConfigError(f"density matrix has shape {data.shape}")
        else:
            raise ConfigError("state data must be a vector or a square matrix")

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    def density(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return np.array(self.data)

    def check(self) -> None:
        """Raise ``ConfigError`` if the state violates normalization or positivity."""
        if self.is_pure:
            norm2 = float(np.vdot(self.data, self.data).real)
            if abs(norm2 - 1.0) >= 1e-6:
                raise ConfigError(f"state norm^2 = {norm2}")
            return
        rho = self.data
        if abs(np.trace(rho).real - 1.0) >= 1e-6:
            raise ConfigError(f"trace = {np.trace(rho).real}")
        if np.max(np.abs(rho - rho.conj().T)) >= 1e-9:
            raise ConfigError("density matrix is not Hermitian")
        if np.linalg.eigvalsh(rho).min() <= -1e-8:
            raise ConfigError("density matrix is not positive")

    def populations(self) -> np.ndarray:
        """Diagonal of the density matrix in the product basis."""
        if self.is_pure:
            return np.abs(self.data) ** 2
        return np.real(np.diag(self.data)).copy()

    def embed(self, space: SpaceConfig) -> "QuantumState":
        """Zero-pad into a larger Fock truncation."""
        if space.fock_cutoff < self.space.fock_cutoff:
            raise ConfigError("can only embed into a larger space")
        sel = np.concatenate([np.arange(self.space.n_fock), space.n_fock + np.arange(self.space.n_fock)])
        if self.is_pure:
            out = np.zeros(space.dim, dtype=complex)
            out[sel] = self.data
        else:
            out = np.zeros((space.dim, space.dim), dtype=complex)
            out[np.ix_(sel, sel)] = self.data
        return QuantumState(out, space)


def basis_state(space: SpaceConfig, spin: int, n: int) -> QuantumState:
    psi = np.zeros(space.dim, dtype=complex)
    psi[index(space, spin, n)] = 1.0
    return QuantumState(psi, space)


def ground_product_state(space: SpaceConfig) -> QuantumState:
    """``|dn, 0>``, the initial state of every quench."""
    return basis_state(space, DOWN, 0)


def expectation(state: QuantumState, obs: np.ndarray) -> float:
    """Real expectation value of a Hermitian observable."""
    obs = np.asarray(obs)
    if obs.shape != (state.space.dim, state.space.dim):
        raise ConfigError(f"observable shape {obs.shape} does not match space dim {state.space.dim}")
    if not is_hermitian(obs):
        raise ConfigError("observable is not Hermitian")
    if state.is_pure:
        val = np.vdot(state.data, obs @ state.data)
    else:
        val = np.trace(state.data @ obs)
    if abs(val.imag) >= 1e-9 * max(1.0, abs(val.real)):
        raise ConfigError(f"expectation has imaginary part {val.imag}")
    return float(val.real)


def phonon_distribution(state: QuantumState) -> np.ndarray:
    """Fock-number probabilities with the spin traced out."""
    pops = state.populations()
    n = state.space.n_fock
    return pops[:n] + pops[n:]


def spin_up_population(state: QuantumState) -> float:
    return float(state.populations()[state.space.n_fock:].sum())


def tail_population(state: QuantumState, top_levels: int = 3) -> float:
    """Probability in the ``top_levels`` highest Fock indices, summed over spin."""
    if not 0 < top_levels <= state.space.fock_cutoff:
        raise ConfigError("top_levels must be in [1, fock_cutoff]")
    return float(phonon_distribution(state)[-top_levels:].sum())
