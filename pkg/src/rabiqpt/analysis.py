"""Finite-ratio scaling, the ratio-parameter error budget, and the nonlinear-coupling comparison."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics, model, spectra
from .errors import ConfigError
from .hilbert import SpaceConfig
from .model import IonParams, NonlinearConfig, QrmParams

DEFAULT_G_WINDOW = (0.005, 0.5)


@dataclass(frozen=True)
class ScalingPoint:
    g: float
    p_up: float
    R: float
    G: float
    S_s: float


def scaling_transform(g: float, p_up: float, R: float) -> ScalingPoint:
    """Map ``(g, p_up)`` at ratio ``R`` to ``G = R |g-1|^1.5`` and ``S_s = 2 p_up / |g-1|``."""
    dist = abs(g - 1.0)
    if dist <= 1e-9:
        raise ConfigError("scaling variables are undefined at g = 1")
    return ScalingPoint(g=g, p_up=p_up, R=R, G=R * dist**1.5, S_s=2.0 * p_up / dist)


def inverse_scaling(S_s: float, g: float) -> float:
    """Spin-up population recovered from ``S_s`` at coupling ``g``."""
    return S_s * abs(g - 1.0) / 2.0


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.unique(x).size != x.size:
        raise ConfigError("abscissa values must be distinct")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ConfigError("log-log fit needs positive values")
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)


def spin_scaling_slope(points, G_window=DEFAULT_G_WINDOW) -> float:
    """Least-squares slope of ``log S_s`` against ``log G`` inside ``G_window``.

    Points outside the window are ignored; at least four must remain.
    """
    lo, hi = G_window
    inside = [p for p in points if lo <= p.G <= hi]
    if len(inside) < 4:
        raise ConfigError(f"need at least 4 points with G in [{lo}, {hi}], got {len(inside)}")
    S = np.array([p.S_s for p in inside])
    G = np.array([p.G for p in inside])
    if np.ptp(S) == 0.0:
        return 0.0
    return loglog_slope(G, S)


def spin_scaling_points(R: float, g_values, omega_f: float = 1.0) -> list[ScalingPoint]:
    """Ground-state scaling points of the Rabi model at ratio ``R``."""
    out = []
    for g in g_values:
        res = spectra.qrm_ground_state(QrmParams.from_ratio(R, g, omega_f))
        out.append(scaling_transform(g, res.p_up, R))
    return out


def default_spin_grid(R: float, G_window=DEFAULT_G_WINDOW, n: int = 40, side: str = "normal") -> np.ndarray:
    """Couplings whose ``G`` values are log-spaced across ``G_window``."""
    G = np.geomspace(G_window[0], G_window[1], n)
    dist = (G / R) ** (2.0 / 3.0)
    if np.any(dist >= 1.0):
        raise ConfigError("G window reaches g = 0 at this ratio")
    return 1.0 - dist if side == "normal" else 1.0 + dist


def critical_phonon_numbers(R_grid, space_policy=None, omega_f: float = 1.0) -> np.ndarray:
    """Exact ground-state ``<a^dag a>`` at ``g = 1`` for each ratio.

    ``space_policy(R)`` may return a starting :class:`SpaceConfig`; the
    default is the ground-state cutoff rule.
    """
    out = []
    for R in R_grid:
        space = space_policy(R) if space_policy else None
        out.append(spectra.qrm_ground_state(QrmParams.from_ratio(R, 1.0, omega_f), space).n_bar)
    return np.array(out)


def phonon_ratio_slope(R_grid, space_policy=None, omega_f: float = 1.0) -> float:
    """Log-log slope of the critical phonon number against ``R``."""
    R = np.asarray(list(R_grid), dtype=float)
    if R.size < 2:
        raise ConfigError("need at least two ratios")
    if np.unique(R).size != R.size:
        raise ConfigError("duplicate ratio values")
    return loglog_slope(R, critical_phonon_numbers(R, space_policy, omega_f))


@dataclass(frozen=True)
class ErrorBudget:
    delta_R_common: float
    delta_R_trap: float


def ratio_error_budget(ion: IonParams, sigma_common: float, eps_trap: float, mode: str = "one_sided") -> ErrorBudget:
    """Uncertainty of ``R = (db + dr)/(db - dr)`` from detuning drifts.

    A common shift ``sigma_common`` moves ``db + dr`` only.  A trap-frequency
    offset ``eps_trap`` widens the splitting; ``mode="one_sided"`` evaluates
    the ratio at the widened splitting, ``mode="linear"`` uses ``2 R eps/(db - dr)``.
    """
    split = ion.delta_b - ion.delta_r
    if abs(sigma_common) >= split / 2.0 or abs(eps_trap) >= split / 2.0:
        raise ConfigError("perturbation must be smaller than half the detuning splitting")
    common = 2.0 * abs(sigma_common) / split
    if mode == "one_sided":
        trap = ion.ratio - (ion.delta_b + ion.delta_r) / (split + 2.0 * abs(eps_trap))
    elif mode == "linear":
        trap = 2.0 * ion.ratio * abs(eps_trap) / split
    else:
        raise ConfigError(f"unknown error-budget mode {mode!r}")
    return ErrorBudget(delta_R_common=common, delta_R_trap=trap)


def compare_lm_nlm(
    ion: IonParams,
    schedule: dynamics.QuenchSchedule,
    nl: NonlinearConfig,
    space: SpaceConfig | None = None,
) -> dict:
    """Relative phonon-number deviation between linear and nonlinear coupling.

    Both quenches are sampled on ``schedule.sample_times`` plus the critical
    time.  ``max_rel_dev`` is taken over samples with ``n_bar > 1`` in the
    linear model; ``crit_rel_dev`` is the deviation at ``g = 1``.
    """
    if not nl.enabled:
        raise ConfigError("nonlinear config must be enabled")
    t_crit = dynamics.time_to_critical(ion, schedule)
    times = np.union1d(schedule.sample_times, [t_crit])
    sched = schedule.with_times(times)
    lm = dynamics.evolve_schrodinger(ion, sched, space=space)
    nlm = dynamics.evolve_schrodinger(ion, sched, nl=nl, space=space)
    n_lm = np.array([s.n_bar for s in lm])
    n_nlm = np.array([s.n_bar for s in nlm])
    rel = np.abs(n_lm - n_nlm) / np.where(n_lm > 0, n_lm, 1.0)
    mask = n_lm > 1.0
    i_crit = int(np.argmin(np.abs(times - t_crit)))
    return {
        "max_rel_dev": float(rel[mask].max()) if mask.any() else 0.0,
        "crit_rel_dev": float(rel[i_crit]) if n_lm[i_crit] > 0 else 0.0,
        "t_crit": float(t_crit),
        "times": times,
        "n_bar_lm": n_lm,
        "n_bar_nlm": n_nlm,
    }


def finite_size_gap(R: float, omega_f: float, parity_resolved: bool = False) -> float:
    """Gap of the Rabi model at ``g = 1``; the same-parity gap if ``parity_resolved``."""
    qrm = QrmParams.from_ratio(R, 1.0, omega_f)
    res = spectra.qrm_ground_state(qrm)
    if not parity_resolved:
        return res.gap
    space = res.state.space
    return spectra.parity_gap(model.build_qrm_hamiltonian(qrm, space), space)

