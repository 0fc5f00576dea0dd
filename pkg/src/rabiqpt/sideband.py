"""Blue-sideband phonon tomography.

After the spin is pumped to ``|dn>``, a blue-sideband pulse of length ``t`` gives

    P_up(t) = 1/2 [1 - sum_k p_k exp(-gamma_k t) cos(sqrt(k+1) Omega t)],
    gamma_k = gamma0 (k+1)^0.7.

The occupations ``p_k`` (and optionally ``gamma0``) are recovered by weighted
nonlinear least squares.  Non-negativity is enforced by fitting ``q_k`` with
``p_k = q_k^2`` (and ``gamma0 = GAMMA_SCALE u^2``).  The covariance is reported
for the physical parameters: since the model is linear in ``p``, the chain-rule
map ``diag(2q) Sigma_q diag(2q)`` equals ``s^2 (J_p^T J_p)^-1`` whenever no
``q_k`` is exactly zero, and the latter stays finite at the boundary.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import measurement_model
from .errors import ConfigError, ConvergenceError, DataFormatError, RankDeficiencyError, ThresholdUnreachableError

log = logging.getLogger(__name__)

DECAY_EXPONENT = 0.7
GAMMA_SCALE = 1e3  # 1/s; gamma0 = GAMMA_SCALE * u^2
GAMMA0_INIT = 500.0  # 1/s
VARIANCE_FLOOR = 1e-4
OVERFIT_STD = 0.5


@dataclass(frozen=True, eq=False)
class SidebandSignal:
    times: np.ndarray
    p_up: np.ndarray
    shots_per_point: int
    omega_sb_probe: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        p_up = np.asarray(self.p_up, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "p_up", p_up)
        if times.shape != p_up.shape or times.ndim != 1:
            raise ConfigError("times and p_up must be 1-D arrays of equal length")
        if np.any((p_up < 0) | (p_up > 1)):
            raise ConfigError("p_up values must lie in [0, 1]")
        if self.omega_sb_probe <= 0:
            raise ConfigError("omega_sb_probe must be positive")

    def weights(self) -> np.ndarray:
        """Inverse standard deviations from the binomial variance, floored."""
        if self.shots_per_point <= 0:
            return np.ones_like(self.p_up)
        var = self.p_up * (1.0 - self.p_up) / self.shots_per_point
        return 1.0 / np.sqrt(np.maximum(var, VARIANCE_FLOOR))


@dataclass(frozen=True, eq=False)
class PhononFitResult:
    p: np.ndarray
    covariance: np.ndarray
    k_max: int
    gamma0: float
    n_bar: float
    sigma_n_bar: float
    total_occupation: float
    chi2: float
    flags: tuple[str, ...] = ()
    scan: tuple[dict, ...] = field(default=(), repr=False)

    @property
    def p_std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def to_dict(self) -> dict:
        out = {
            "p": [float(x) for x in self.p],
            "p_std": [float(x) for x in self.p_std],
            "covariance": [[float(x) for x in row] for row in self.covariance],
            "k_max": int(self.k_max),
            "gamma0_per_ms": float(self.gamma0 / 1e3),
            "n_bar": float(self.n_bar),
            "sigma_n_bar": float(self.sigma_n_bar),
            "total_occupation": float(self.total_occupation),
            "chi2": float(self.chi2),
            "flags": list(self.flags),
        }
        if self.scan:
            out["scan"] = [dict(row) for row in self.scan]
        return out


def decay_rates(gamma0: float, n_levels: int) -> np.ndarray:
    return gamma0 * np.arange(1, n_levels + 1, dtype=float) ** DECAY_EXPONENT


def _components(n_levels: int, gamma0: float, omega: float, t: np.ndarray):
    k1 = np.arange(1, n_levels + 1, dtype=float)[:, None]
    damp = np.exp(-gamma0 * k1**DECAY_EXPONENT * t[None, :])
    osc = np.cos(np.sqrt(k1) * omega * t[None, :])
    return damp * osc, k1**DECAY_EXPONENT


def sideband_model(p, gamma0: float, omega_sb_probe: float, times) -> np.ndarray:
    """Spin-up population of a blue-sideband pulse on phonon distribution ``p``."""
    p = np.asarray(p, dtype=float)
    comp, _ = _components(len(p), gamma0, omega_sb_probe, np.asarray(times, dtype=float))
    return 0.5 * (1.0 - p @ comp)


def synthesize_signal(
    p,
    omega_sb_probe: float,
    gamma0: float,
    times,
    shots: int | None = None,
    seed: int | None = None,
    dark_error: float = 0.0,
    bright_error: float = 0.0,
) -> SidebandSignal:
    """Evaluate the sideband model, optionally with readout shot noise.

    Without ``shots`` the signal is exact and carries ``shots_per_point = 0``
    (unweighted fitting).  With ``shots`` each point passes through
    :func:`~rabiqpt.dynamics.measurement_model` from one seeded generator.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or p.sum() > 1 + 1e-9:
        raise ConfigError("occupations must be non-negative with sum <= 1")
    if gamma0 < 0:
        raise ConfigError("gamma0 must be non-negative")
    times = np.asarray(times, dtype=float)
    clean = np.clip(sideband_model(p, gamma0, omega_sb_probe, times), 0.0, 1.0)
    if not shots:
        return SidebandSignal(times, clean, 0, omega_sb_probe)
    rng = np.random.default_rng(seed)
    noisy = measurement_model(clean, shots, dark_error, bright_error, rng=rng)
    return SidebandSignal(times, np.atleast_1d(noisy), int(shots), omega_sb_probe)


def _levenberg_marquardt(residual_jac, x0, max_iter=2000, ftol=1e-10, xtol=1e-10):
    """Minimize ``|r(x)|^2 / 2`` with Marquardt-scaled damping.

    ``residual_jac(x)`` returns ``(r, J)``.  The damping update follows
    Nielsen's gain-ratio rule.
    """
    x = np.array(x0, dtype=float)
    r, J = residual_jac(x)
    cost = 0.5 * float(r @ r)
    mu = None
    nu = 2.0
    for it in range(1, max_iter + 1):
        A = J.T @ J
        grad = J.T @ r
        diag = np.maximum(np.diag(A), 1e-12 * max(1.0, float(np.max(np.diag(A)))))
        if mu is None:
            mu = 1e-3
        if np.max(np.abs(grad)) <= 1e-14 * max(1.0, cost):
            return x, r, J, it
        while True:
            try:
                step = np.linalg.solve(A + mu * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                mu *= nu
                nu *= 2.0
                continue
            x_new = x + step
            r_new, J_new = residual_jac(x_new)
            cost_new = 0.5 * float(r_new @ r_new)
            predicted = -(grad @ step) - 0.5 * step @ (A @ step)
            gain = (cost - cost_new) / predicted if predicted > 0 else -1.0
            if gain > 0:
                small_step = np.max(np.abs(step)) <= xtol * (np.max(np.abs(x)) + xtol)
                small_gain = cost - cost_new <= ftol * cost
                x, r, J, cost = x_new, r_new, J_new, cost_new
                mu *= max(1.0 / 3.0, 1.0 - (2.0 * gain - 1.0) ** 3)
                nu = 2.0
                if small_step or small_gain or cost == 0.0:
                    return x, r, J, it
                break
            mu *= nu
            nu *= 2.0
            if mu > 1e20:
                return x, r, J, it
    raise ConvergenceError(f"least squares did not converge in {max_iter} iterations")


def fit_phonon_distribution(
    signal: SidebandSignal,
    k_max: int,
    gamma0: float | None = None,
    *,
    p_init=None,
    max_iter: int = 2000,
) -> PhononFitResult:
    """Fit occupations ``p_0 .. p_kmax`` to a sideband signal.

    ``gamma0=None`` fits the base decay rate jointly (start 0.5 /ms); a number
    keeps it fixed.  ``p_init`` defaults to a uniform 0.95 total.
    """
    if k_max < 0:
        raise ConfigError("k_max must be >= 0")
    n_levels = k_max + 1
    n_par = n_levels + (1 if gamma0 is None else 0)
    if len(signal.times) < 2 * (k_max + 2):
        raise ConfigError(f"need at least {2 * (k_max + 2)} points for k_max={k_max}")
    t, y, w, omega = signal.times, signal.p_up, signal.weights(), signal.omega_sb_probe

    def natural(x):
        p = x[:n_levels] ** 2
        g0 = GAMMA_SCALE * x[n_levels] ** 2 if gamma0 is None else gamma0
        return p, g0

    def nat_jacobian(p, g0):
        comp, kpow = _components(n_levels, g0, omega, t)
        model = 0.5 * (1.0 - p @ comp)
        cols = [-0.5 * comp.T]
        if gamma0 is None:
            cols.append((0.5 * (p[:, None] * kpow * comp).sum(axis=0) * t)[:, None])
        return model, np.hstack(cols)

    def residual_jac(x):
        p, g0 = natural(x)
        model, jn = nat_jacobian(p, g0)
        chain = 2.0 * x[:n_levels]
        if gamma0 is None:
            chain = np.append(chain, 2.0 * GAMMA_SCALE * x[n_levels])
        return w * (model - y), (w[:, None] * jn) * chain[None, :]

    if p_init is None:
        p_init = np.full(n_levels, 0.95 / n_levels)
    p_init = np.asarray(p_init, dtype=float)
    if p_init.shape != (n_levels,):
        raise ConfigError("p_init has the wrong length")
    x0 = np.sqrt(np.clip(p_init, 0.0, None))
    if gamma0 is None:
        x0 = np.append(x0, math.sqrt(GAMMA0_INIT / GAMMA_SCALE))
    x, r, _, n_iter = _levenberg_marquardt(residual_jac, x0, max_iter=max_iter)

    p, g0 = natural(x)
    _, jn = nat_jacobian(p, g0)
    jw = w[:, None] * jn
    sv = np.linalg.svd(jw, compute_uv=False)
    if sv[-1] <= 1e-13 * sv[0]:
        raise RankDeficiencyError(
            f"normal equations are singular at k_max={k_max}; use fewer levels or more time points"
        )
    chi2 = float(r @ r)
    dof = len(t) - n_par
    s2 = chi2 / dof if dof > 0 else 0.0
    _, s, vt = np.linalg.svd(jw, full_matrices=False)
    cov_full = s2 * (vt.T / s**2) @ vt
    cov = 0.5 * (cov_full[:n_levels, :n_levels] + cov_full[:n_levels, :n_levels].T)
    levels = np.arange(n_levels, dtype=float)
    var_n = float(levels @ cov @ levels)
    flags = []
    if np.sqrt(np.max(np.diag(cov))) > OVERFIT_STD:
        flags.append("overfit")
    log.debug("k_max=%d converged in %d iterations, chi2=%.4g", k_max, n_iter, chi2)
    return PhononFitResult(
        p=p,
        covariance=cov,
        k_max=k_max,
        gamma0=float(g0),
        n_bar=float(levels @ p),
        sigma_n_bar=math.sqrt(max(var_n, 0.0)),
        total_occupation=float(p.sum()),
        chi2=chi2,
        flags=tuple(flags),
    )


def overfit_signature(base: PhononFitResult, wider: PhononFitResult) -> bool:
    """True when ``wider`` (more levels) looks overfitted relative to ``base``."""
    jump = abs(wider.n_bar - base.n_bar) > 3.0 * base.sigma_n_bar
    return jump or "overfit" in wider.flags


def select_kmax(
    signal: SidebandSignal,
    k_range,
    occupation_threshold: float = 0.95,
    gamma0: float | None = None,
    lookahead: int = 3,
) -> tuple[int, PhononFitResult]:
    """Smallest cutoff whose fitted total occupation reaches the threshold.

    The fit at ``k_max + lookahead`` is also run; if it shows the overfitting
    signature the returned result carries the flag ``overfit_at_k{k_max+lookahead}``.
    """
    ks = list(k_range)
    if not ks:
        raise ConfigError("k_range is empty")
    scan = []
    fits = {}
    chosen = None
    for k in ks:
        try:
            fits[k] = fit_phonon_distribution(signal, k, gamma0)
        except (RankDeficiencyError, ConvergenceError) as exc:
            log.info("k_max=%d skipped: %s", k, exc)
            scan.append({"k_max": k, "error": str(exc)})
            continue
        scan.append(_scan_row(fits[k]))
        if fits[k].total_occupation >= occupation_threshold:
            chosen = k
            break
    if chosen is None:
        best = max(fits.values(), key=lambda f: f.total_occupation, default=None)
        detail = f" (best {best.total_occupation:.4f} at k_max={best.k_max})" if best else ""
        raise ThresholdUnreachableError(
            f"no k_max in {ks[0]}..{ks[-1]} reaches total occupation {occupation_threshold}{detail}",
            best=best,
        )
    base = fits[chosen]
    flags = list(base.flags)
    probe_k = chosen + lookahead
    try:
        probe = fit_phonon_distribution(signal, probe_k, gamma0)
        scan.append(_scan_row(probe))
        if overfit_signature(base, probe):
            flags.append(f"overfit_at_k{probe_k}")
    except (RankDeficiencyError, ConvergenceError, ConfigError) as exc:
        log.info("look-ahead fit at k_max=%d failed: %s", probe_k, exc)
        flags.append(f"overfit_at_k{probe_k}")
    result = PhononFitResult(
        p=base.p,
        covariance=base.covariance,
        k_max=base.k_max,
        gamma0=base.gamma0,
        n_bar=base.n_bar,
        sigma_n_bar=base.sigma_n_bar,
        total_occupation=base.total_occupation,
        chi2=base.chi2,
        flags=tuple(flags),
        scan=tuple(scan),
    )
    return chosen, result


def _scan_row(fit: PhononFitResult) -> dict:
    return {
        "k_max": fit.k_max,
        "total_occupation": fit.total_occupation,
        "n_bar": fit.n_bar,
        "sigma_n_bar": fit.sigma_n_bar,
        "max_p_std": float(np.max(fit.p_std)),
        "flags": list(fit.flags),
    }


def write_signal_csv(signal: SidebandSignal, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t_us", "p_up", "shots"])
        for t, p in zip(signal.times, signal.p_up):
            out.writerow([f"{t * 1e6:.9g}", f"{p:.9g}", signal.shots_per_point])


def read_signal_csv(path, omega_sb_probe: float) -> SidebandSignal:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if not rows or set(rows[0]) != {"t_us", "p_up", "shots"}:
        raise DataFormatError(f"{path}: expected header t_us,p_up,shots")
    try:
        times = np.array([float(r["t_us"]) for r in rows]) * 1e-6
        p_up = np.array([float(r["p_up"]) for r in rows])
        shots = {int(r["shots"]) for r in rows}
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: malformed value ({exc})") from exc
    if len(shots) != 1:
        raise DataFormatError(f"{path}: shots must be constant across rows")
    try:
        return SidebandSignal(times, p_up, shots.pop(), omega_sb_probe)
    except ConfigError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
