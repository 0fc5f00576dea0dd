"""Exact ground states and gaps of the Rabi model, plus the R -> infinity order parameters."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from . import hilbert, model
from .errors import ConfigError, CutoffError
from .hilbert import QuantumState, SpaceConfig

DENSE_LIMIT = 4000
MAX_RETRIES = 3


@dataclass(frozen=True, eq=False)
class GroundStateResult:
    energy: float
    state: QuantumState
    gap: float
    n_bar: float
    p_up: float
    n_f: float
    parity: float


def ground_state(H: np.ndarray, space: SpaceConfig, ratio: float | None = None) -> GroundStateResult:
    """Lowest eigenpair of ``H`` and the gap to the first excited level.

    ``n_f`` is ``<a^dag a> / ratio``; it is NaN when ``ratio`` is not given.
    """
    H = np.asarray(H)
    if H.shape != (space.dim, space.dim):
        raise ConfigError("Hamiltonian does not match the space")
    if not hilbert.is_hermitian(H):
        raise ConfigError("Hamiltonian is not Hermitian")
    if space.dim <= DENSE_LIMIT:
        w, v = scipy.linalg.eigh(H, subset_by_index=[0, 1])
    else:
        # shift-invert below the Gershgorin bound converges even for near-degenerate doublets
        offdiag = np.sum(np.abs(H), axis=1) - np.abs(np.diag(H))
        sigma = float(np.min(np.real(np.diag(H)) - offdiag)) - 1.0
        w, v = scipy.sparse.linalg.eigsh(scipy.sparse.csr_matrix(H), k=2, sigma=sigma, which="LM")
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    psi = v[:, 0]
    state = QuantumState(psi, space)
    n_bar = float(hilbert.fock_labels(space) @ (np.abs(psi) ** 2))
    par = float(hilbert.parity_diagonal(space) @ (np.abs(psi) ** 2))
    return GroundStateResult(
        energy=float(w[0]),
        state=state,
        gap=float(max(w[1] - w[0], 0.0)),
        n_bar=n_bar,
        p_up=hilbert.spin_up_population(state),
        n_f=n_bar / ratio if ratio else float("nan"),
        parity=par,
    )


def default_cutoff(ratio: float, g: float) -> int:
    return int(math.ceil(max(40.0, 8.0 * ratio ** (1.0 / 3.0) * g**2)))


def qrm_ground_state(qrm: model.QrmParams, space: SpaceConfig | None = None, top_levels: int = 3) -> GroundStateResult:
    """Ground state of the Rabi Hamiltonian with an adequate Fock cutoff.

    The cutoff starts at ``space`` (or the default ``max(40, 8 R^(1/3) g^2)``)
    and grows by 1.5x, at most three times, until the top levels hold less
    than ``tail_tolerance``.
    """
    if space is None:
        space = SpaceConfig(default_cutoff(qrm.ratio, qrm.g))
    for _ in range(MAX_RETRIES + 1):
        res = ground_state(model.build_qrm_hamiltonian(qrm, space), space, qrm.ratio)
        if hilbert.tail_population(res.state, top_levels) < space.tail_tolerance:
            return res
        space = space.grown()
    raise CutoffError(f"ground state not converged in Fock cutoff up to {space.fock_cutoff}")


def parity_gap(H: np.ndarray, space: SpaceConfig) -> float:
    """Gap to the first excitation sharing the ground state's parity.

    This is the gap relevant to a parity-conserving ramp.
    """
    par = hilbert.parity_diagonal(space)
    blocks = {}
    for sign in (1.0, -1.0):
        idx = np.flatnonzero(par == sign)
        blocks[sign] = scipy.linalg.eigh(H[np.ix_(idx, idx)], eigvals_only=True, subset_by_index=[0, 1])
    sign = 1.0 if blocks[1.0][0] <= blocks[-1.0][0] else -1.0
    return float(blocks[sign][1] - blocks[sign][0])


def asymptotic_nf(g: float) -> float:
    """Rescaled boson number ``(omega_f/omega_a) <a^dag a>`` as R -> infinity."""
    if g < 0:
        raise ConfigError("g must be non-negative")
    return 0.0 if g <= 1.0 else (g**4 - 1.0) / (4.0 * g**2)


def asymptotic_na(g: float) -> float:
    """Spin order parameter ``1 + <s_z>`` as R -> infinity."""
    if g < 0:
        raise ConfigError("g must be non-negative")
    if math.isinf(g):
        return 1.0
    return 0.0 if g <= 1.0 else 1.0 - g**-2
