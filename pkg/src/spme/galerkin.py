"""Time integration of the spectral Galerkin system and ensemble statistics.

Two Euler--Maruyama flavours are provided.  The explicit scheme works for
every fractional order ``alpha`` but is protected by a stability guard
``dt * lam_m * sup|Psi'| <= 2`` evaluated on the observed state range; the
semi-implicit scheme treats the stiff monotone term by a damped Newton solve
on the grid (tridiagonal Jacobian) and is available for the full Laplacian
(``alpha = 1``) only.

The ensemble driver advances many paths at once on stacked coefficient
arrays.  Per-path noise comes from the dedicated streams in
:mod:`spme.noise`, so every trajectory is a pure function of
``(master_seed, path_idx, config)`` no matter how paths are batched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .drift import DriftSpec, drift_coeffs, phi0_eval, psi_eval, psi_prime, psi_prime_max, young_modular
from .noise import NoiseSpec, increments_for_path
from .triple import Field, SpectralDomain

SCHEMES = ("explicit", "semi-implicit")

#: Newton Jacobian entries use Psi' clamped at 1/_JACOBIAN_FLOOR so the
#: singular fast-diffusion derivative cannot poison the linear solve.  The
#: clamp affects only the solver path; residuals use the exact Psi.
_JACOBIAN_FLOOR = 1e-8


class BlowUpError(RuntimeError):
    """State left the finite range; carries the offending step index."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class StabilityError(RuntimeError):
    """Explicit stability guard violated."""


class ConvergenceError(RuntimeError):
    """Newton did not reach the residual tolerance."""


class UnsupportedSchemeError(RuntimeError):
    """Scheme/domain combination not available."""


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    T: float
    n_modes: int
    scheme: str = "explicit"
    implicit_tol: float = 1e-10
    implicit_max_iter: int = 100
    record_ito: bool = False

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        if not (self.T >= 0 and math.isfinite(self.T)):
            raise ValueError("T must be nonnegative and finite")
        if self.n_modes < 1:
            raise ValueError("n_modes must be at least 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        n = round(self.T / self.dt)
        if abs(n * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError("T must be an integer multiple of dt")
        if self.implicit_tol <= 0 or self.implicit_max_iter < 1:
            raise ValueError("implicit_tol must be positive, implicit_max_iter >= 1")

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)


@dataclass
class Trajectory:
    """One simulated path.

    ``drift_record`` / ``diffusion_record`` / ``increments`` are populated
    only when the configuration asked for the Ito ledger: per step k they
    hold the spectral coordinates of A(t_k, X_k), the per-mode diffusion
    coefficients rho(|X_k|_H) sigma, and the Brownian increments consumed.
    """

    dom: SpectralDomain
    times: np.ndarray
    states: list
    path_seed: tuple
    drift_record: np.ndarray | None = None
    diffusion_record: np.ndarray | None = None
    increments: np.ndarray | None = None

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def coeff_matrix(self) -> np.ndarray:
        return np.stack([s.coeffs for s in self.states])

    def to_csv(self, path) -> None:
        mat = self.coeff_matrix()
        header = ["t"] + [f"mode_{k}" for k in range(1, mat.shape[1] + 1)]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for t, row in zip(self.times, mat):
                cells = [format(t, ".17g")] + [format(v, ".17g") for v in row]
                fh.write(",".join(cells) + "\n")


class _StabilityGuard:
    """Caches sup|Psi'| over the largest state range seen so far.

    The bound is monotone in the range, so a cached value at a larger cap
    stays valid while the state shrinks; time modulation is absorbed by
    rescaling to the worst instant.
    """

    def __init__(self, dom: SpectralDomain, drift: DriftSpec, dt: float, m: int):
        self.threshold = 2.0
        self.dt = dt
        self.factor = dt * dom.lam[m - 1]
        self.psi = drift.psi
        self.s_cap = -1.0
        self.p_worst = 0.0

    def check(self, s_max: float, t: float) -> None:
        if s_max > self.s_cap:
            cap = 1.25 * s_max + 1e-12
            p = psi_prime_max(self.psi, t, cap)
            if self.psi.modulation is not None and p < math.inf:
                p *= self.psi.a_max / self.psi.a_at(t)
            self.s_cap, self.p_worst = cap, p
        value = self.factor * self.p_worst
        if not value <= self.threshold:
            if math.isinf(self.p_worst):
                raise StabilityError(
                    "explicit step refused: Psi' is unbounded on the state range "
                    f"[0, {self.s_cap:.3g}] (singular diffusion); "
                    "use the semi-implicit scheme"
                )
            dt_max = self.dt * self.threshold / value
            raise StabilityError(
                f"explicit step unstable at t={t:.6g}: dt*lam_m*sup|Psi'| = "
                f"{value:.3g} > 2; reduce dt below {dt_max:.3g} "
                "or use the semi-implicit scheme"
            )


def _noise_coeffs(noise: NoiseSpec, dom: SpectralDomain, C: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """Spectral coordinates of B(X) dW for a stack of states C (P, n_grid)."""
    mn = noise.n_modes
    if mn > dom.n_grid:
        raise ValueError("noise has more modes than the grid resolves")
    hn = np.sqrt(np.sum(C * C / dom.lam, axis=-1))
    rho = noise.mult(hn) if noise.mult is not None else np.ones_like(hn)
    out = np.zeros_like(C)
    out[..., :mn] = rho[..., None] * noise.sigma_array() * dW
    return out


def _diffusion_coeffs(noise: NoiseSpec, dom: SpectralDomain, C: np.ndarray) -> np.ndarray:
    hn = np.sqrt(np.sum(C * C / dom.lam, axis=-1))
    rho = noise.mult(hn) if noise.mult is not None else np.ones_like(hn)
    return rho[..., None] * noise.sigma_array()


def _step_chunk_explicit(dom, drift, noise, t, C, dW, dt, m, guard):
    # Overflow here is the blow-up the caller detects; keep it silent.
    with np.errstate(over="ignore", invalid="ignore"):
        values = dom.from_spectral(C)
        s_max = float(np.max(np.abs(values))) if values.size else 0.0
        if math.isfinite(s_max):
            guard.check(s_max, t)
        A = drift_coeffs(dom, drift, t, values, C)
        new = np.zeros_like(C)
        new[..., :m] = C[..., :m] + dt * A[..., :m]
        new[..., :m] += _noise_coeffs(noise, dom, C, dW)[..., :m]
        z = _diffusion_coeffs(noise, dom, C)
    return new, A, z


def _tridiag_L(vals: np.ndarray, h: float) -> np.ndarray:
    out = -2.0 * vals
    out[:-1] += vals[1:]
    out[1:] += vals[:-1]
    return out / h**2


def _newton_implicit(dom, psi, t, b, dt, tol, max_iter):
    """Solve u - dt * L_h Psi(t, u) = b on the grid by damped Newton."""
    h = dom.h
    u = b.copy()
    res = u - dt * _tridiag_L(np.asarray(psi_eval(psi, t, u), dtype=float), h) - b
    rnorm = float(np.max(np.abs(res)))
    gamma = dt / h**2
    u_best, r_best = u, rnorm
    for _ in range(max_iter):
        if rnorm <= tol:
            return u
        pp = np.minimum(psi_prime(psi, t, u), 1.0 / _JACOBIAN_FLOOR)
        pp = np.asarray(pp, dtype=float)
        ab = np.zeros((3, u.size))
        ab[0, 1:] = -gamma * pp[1:]
        ab[1, :] = 1.0 + 2.0 * gamma * pp
        ab[2, :-1] = -gamma * pp[:-1]
        du = solve_banded((1, 1), ab, -res)
        step = 1.0
        while True:
            u_try = u + step * du
            res_try = u_try - dt * _tridiag_L(
                np.asarray(psi_eval(psi, t, u_try), dtype=float), h
            ) - b
            rnorm_try = float(np.max(np.abs(res_try)))
            if rnorm_try <= (1.0 - 0.5 * step) * rnorm or step < 1.0 / 64.0:
                break
            step *= 0.5
        u, res, rnorm = u_try, res_try, rnorm_try
        if rnorm < r_best:
            u_best, r_best = u, rnorm
    if r_best <= tol:
        return u_best
    raise ConvergenceError(
        f"implicit solve did not converge within {max_iter} iterations "
        f"(best residual {r_best:.3e}, tolerance {tol:.1e})"
    )


def _step_chunk_semi_implicit(dom, drift, noise, t, C, dW, dt, m, tol, max_iter,
                              want_drift_record=False):
    if abs(dom.alpha - 1.0) > 1e-12:
        raise UnsupportedSchemeError(
            "the semi-implicit Newton path requires the full Laplacian "
            f"(alpha=1); got alpha={dom.alpha}.  Fall back to the explicit scheme."
        )
    values = dom.from_spectral(C)
    h_t = drift.phi.h_at(t)
    b = values + dt * (h_t * values + phi0_eval(drift.phi, values))
    b = b + dom.from_spectral(_noise_coeffs(noise, dom, C, dW))
    new_vals = np.empty_like(values)
    for i in range(values.shape[0]):
        new_vals[i] = _newton_implicit(dom, drift.psi, t, b[i], dt, tol, max_iter)
    new = dom.to_spectral(new_vals)
    new[..., m:] = 0.0
    A = drift_coeffs(dom, drift, t, values, C) if want_drift_record else None
    z = _diffusion_coeffs(noise, dom, C)
    return new, A, z


def step_explicit(dom, drift, noise, t, X, dW, dt, n_modes=None) -> Field:
    """One explicit Euler--Maruyama step, projected onto the leading modes."""
    m = dom.n_grid if n_modes is None else n_modes
    guard = _StabilityGuard(dom, drift, dt, m)
    C, _, _ = _step_chunk_explicit(
        dom, drift, noise, t, X.coeffs[None], np.asarray(dW, dtype=float)[None], dt, m, guard
    )
    if not np.all(np.isfinite(C)):
        raise BlowUpError(f"non-finite state after explicit step at t={t:.6g}")
    return Field.from_coeffs(dom, C[0])


def step_semi_implicit(dom, drift, noise, t, X, dW, dt, n_modes=None,
                       tol=1e-10, max_iter=100) -> Field:
    """One semi-implicit step: the monotone term is solved on the grid."""
    m = dom.n_grid if n_modes is None else n_modes
    C, _, _ = _step_chunk_semi_implicit(
        dom, drift, noise, t, X.coeffs[None], np.asarray(dW, dtype=float)[None],
        dt, m, tol, max_iter
    )
    if not np.all(np.isfinite(C)):
        raise BlowUpError(f"non-finite state after semi-implicit step at t={t:.6g}")
    return Field.from_coeffs(dom, C[0])


def _validated_dims(config: StepperConfig, dom: SpectralDomain, noise: NoiseSpec) -> int:
    if config.n_modes > dom.n_grid:
        raise ValueError("n_modes exceeds the grid resolution")
    if noise.n_modes > dom.n_grid:
        raise ValueError("noise has more modes than the grid resolves")
    return config.n_modes


def simulate(config: StepperConfig, dom: SpectralDomain, drift: DriftSpec,
             noise: NoiseSpec, X0: Field, master_seed: int, path_idx: int = 0,
             increments: np.ndarray | None = None) -> Trajectory:
    """Integrate one path; deterministic in (master_seed, path_idx, config)."""
    m = _validated_dims(config, dom, noise)
    n_steps = config.n_steps
    if increments is None:
        increments = increments_for_path(noise, n_steps, config.dt, master_seed, path_idx)
    else:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (n_steps, noise.n_modes):
            raise ValueError("increments must have shape (n_steps, n_modes)")

    C = np.zeros(dom.n_grid)
    C[:m] = X0.coeffs[:m]
    states = [Field.from_coeffs(dom, C.copy())]
    drift_rec = np.empty((n_steps, dom.n_grid)) if config.record_ito else None
    diff_rec = np.empty((n_steps, noise.n_modes)) if config.record_ito else None
    guard = _StabilityGuard(dom, drift, config.dt, m) if config.scheme == "explicit" else None

    Crow = C[None]
    for k in range(n_steps):
        t = k * config.dt
        dW = increments[k][None]
        if config.scheme == "explicit":
            Crow, A, z = _step_chunk_explicit(dom, drift, noise, t, Crow, dW,
                                              config.dt, m, guard)
        else:
            Crow, A, z = _step_chunk_semi_implicit(
                dom, drift, noise, t, Crow, dW, config.dt, m,
                config.implicit_tol, config.implicit_max_iter,
                want_drift_record=config.record_ito,
            )
        if not np.all(np.isfinite(Crow)):
            raise BlowUpError(
                f"non-finite state at step {k + 1} (t={t + config.dt:.6g})", step=k + 1
            )
        if config.record_ito:
            drift_rec[k] = A[0]
            diff_rec[k] = z[0]
        states.append(Field.from_coeffs(dom, Crow[0].copy()))

    times = np.arange(n_steps + 1) * config.dt
    return Trajectory(
        dom=dom, times=times, states=states, path_seed=(master_seed, path_idx),
        drift_record=drift_rec, diffusion_record=diff_rec,
        increments=increments if config.record_ito else None,
    )


def simulate_pair(config: StepperConfig, dom: SpectralDomain, drift: DriftSpec,
                  noise: NoiseSpec, X0: Field, Y0: Field, seed: int):
    """Two trajectories driven by the identical Brownian increments."""
    inc = increments_for_path(noise, config.n_steps, config.dt, seed, 0)
    tx = simulate(config, dom, drift, noise, X0, seed, 0, increments=inc)
    ty = simulate(config, dom, drift, noise, Y0, seed, 0, increments=inc)
    return tx, ty


# ---------------------------------------------------------------------------
# Ensemble statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StatTable:
    """Per-time mean/variance/standard error for each observable column."""

    times: np.ndarray
    names: tuple
    mean: np.ndarray
    var: np.ndarray
    se: np.ndarray
    n_paths: int

    def col(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"observable {name!r} not in table {self.names}") from None

    def mean_of(self, name: str) -> np.ndarray:
        return self.mean[:, self.col(name)]

    def var_of(self, name: str) -> np.ndarray:
        return self.var[:, self.col(name)]

    def se_of(self, name: str) -> np.ndarray:
        return self.se[:, self.col(name)]

    def to_csv(self, path) -> None:
        header = ["t"]
        for name in self.names:
            header += [f"{name}_mean", f"{name}_var", f"{name}_se"]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for i, t in enumerate(self.times):
                cells = [format(t, ".17g")]
                for j in range(len(self.names)):
                    cells += [format(self.mean[i, j], ".17g"),
                              format(self.var[i, j], ".17g"),
                              format(self.se[i, j], ".17g")]
                fh.write(",".join(cells) + "\n")


_PLAIN_OBSERVABLES = ("h_norm_sq", "modular", "R", "sup_abs", "dist_sq",
                      "drift_norm_sq")


def _is_plain(name: str, paired: bool) -> bool:
    if name in _PLAIN_OBSERVABLES:
        if name == "dist_sq" and not paired:
            raise ValueError("dist_sq requires a paired ensemble (Y0 given)")
        return True
    return name.startswith("mode_") and name[5:].isdigit() and int(name[5:]) >= 1


def _check_observables(names, paired: bool) -> None:
    for name in names:
        base = name[4:] if name.startswith("int_") else name
        if not base or not _is_plain(base, paired):
            raise ValueError(f"unknown observable {name!r}")


def _eval_plain(name, dom, drift, t, C, CY, cache):
    if name == "h_norm_sq":
        return np.sum(C * C / dom.lam, axis=-1)
    if name == "dist_sq":
        D = C - CY
        return np.sum(D * D / dom.lam, axis=-1)
    if name == "drift_norm_sq":
        if "values" not in cache:
            cache["values"] = dom.from_spectral(C)
        A = drift_coeffs(dom, drift, t, cache["values"], C)
        return np.sum(A * A / dom.lam, axis=-1)
    if name == "modular":
        if "values" not in cache:
            cache["values"] = dom.from_spectral(C)
        return np.atleast_1d(young_modular(dom, drift.psi, cache["values"]))
    if name == "R":
        if "values" not in cache:
            cache["values"] = dom.from_spectral(C)
        return (np.atleast_1d(young_modular(dom, drift.psi, cache["values"]))
                + np.sum(C * C / dom.lam, axis=-1))
    if name == "sup_abs":
        if "values" not in cache:
            cache["values"] = dom.from_spectral(C)
        return np.max(np.abs(cache["values"]), axis=-1)
    return C[:, int(name[5:]) - 1]


def _eval_observables(names, dom, drift, t, C, CY=None, cums=None):
    """Column stack of observables; ``int_*`` names read the accumulators."""
    cols = []
    cache = {}
    for name in names:
        if name.startswith("int_"):
            cols.append(cums[name].copy())
        else:
            cols.append(_eval_plain(name, dom, drift, t, C, CY, cache))
    return np.stack(cols, axis=-1)  # (P, K)


def _merge_moments(nA, meanA, M2A, nB, meanB, M2B):
    if nA == 0:
        return nB, meanB, M2B
    delta = meanB - meanA
    n = nA + nB
    mean = meanA + delta * (nB / n)
    M2 = M2A + M2B + delta * delta * (nA * nB / n)
    return n, mean, M2


def monte_carlo(config: StepperConfig, dom: SpectralDomain, drift: DriftSpec,
                noise: NoiseSpec, X0: Field, master_seed: int, ensemble_size: int,
                observables, Y0: Field | None = None, save_every: int = 1,
                chunk: int = 128) -> StatTable:
    """Ensemble statistics of the requested observables at the save times.

    Paths are advanced in chunks on stacked coefficient arrays; chunk moments
    are combined with the parallel mean/M2 merge, so the reduction is
    independent of the chunking.
    """
    if ensemble_size < 2:
        raise ValueError("ensemble_size must be at least 2")
    if save_every < 1:
        raise ValueError("save_every must be at least 1")
    names = tuple(observables)
    if not names:
        raise ValueError("at least one observable is required")
    _check_observables(names, paired=Y0 is not None)
    m = _validated_dims(config, dom, noise)
    n_steps = config.n_steps
    save_idx = list(range(0, n_steps + 1, save_every))
    if save_idx[-1] != n_steps:
        save_idx.append(n_steps)
    save_set = {k: i for i, k in enumerate(save_idx)}
    S, K = len(save_idx), len(names)

    X0C = np.zeros(dom.n_grid)
    X0C[:m] = X0.coeffs[:m]
    Y0C = None
    if Y0 is not None:
        Y0C = np.zeros(dom.n_grid)
        Y0C[:m] = Y0.coeffs[:m]

    total_n, total_mean, total_M2 = 0, np.zeros((S, K)), np.zeros((S, K))
    for start in range(0, ensemble_size, chunk):
        idxs = range(start, min(start + chunk, ensemble_size))
        P = len(idxs)
        inc = np.empty((P, n_steps, noise.n_modes))
        for i, pidx in enumerate(idxs):
            inc[i] = increments_for_path(noise, n_steps, config.dt, master_seed, pidx)
        C = np.tile(X0C, (P, 1))
        CY = np.tile(Y0C, (P, 1)) if Y0C is not None else None
        guard = (_StabilityGuard(dom, drift, config.dt, m)
                 if config.scheme == "explicit" else None)
        int_names = [n for n in names if n.startswith("int_")]
        cums = {n: np.zeros(P) for n in int_names}
        samples = np.empty((S, P, K))
        for k in range(n_steps + 1):
            t = k * config.dt
            if k in save_set:
                samples[save_set[k]] = _eval_observables(names, dom, drift, t, C,
                                                         CY, cums)
            if k == n_steps:
                break
            for n in int_names:  # left-endpoint rule, matching the step scheme
                cums[n] += config.dt * _eval_plain(n[4:], dom, drift, t, C, CY, {})
            dW = inc[:, k, :]
            if config.scheme == "explicit":
                C, _, _ = _step_chunk_explicit(dom, drift, noise, t, C, dW,
                                               config.dt, m, guard)
                if CY is not None:
                    CY, _, _ = _step_chunk_explicit(dom, drift, noise, t, CY, dW,
                                                    config.dt, m, guard)
            else:
                C, _, _ = _step_chunk_semi_implicit(
                    dom, drift, noise, t, C, dW, config.dt, m,
                    config.implicit_tol, config.implicit_max_iter)
                if CY is not None:
                    CY, _, _ = _step_chunk_semi_implicit(
                        dom, drift, noise, t, CY, dW, config.dt, m,
                        config.implicit_tol, config.implicit_max_iter)
            if not np.all(np.isfinite(C)) or (CY is not None and not np.all(np.isfinite(CY))):
                raise BlowUpError(
                    f"non-finite state at step {k + 1} (t={t + config.dt:.6g})",
                    step=k + 1,
                )
        chunk_mean = samples.mean(axis=1)
        chunk_M2 = np.sum((samples - chunk_mean[:, None, :]) ** 2, axis=1)
        total_n, total_mean, total_M2 = _merge_moments(
            total_n, total_mean, total_M2, P, chunk_mean, chunk_M2)

    var = total_M2 / (total_n - 1)
    var = np.maximum(var, 0.0)
    se = np.sqrt(var / total_n)
    times = np.asarray(save_idx, dtype=float) * config.dt
    return StatTable(times=times, names=names, mean=total_mean, var=var, se=se,
                     n_paths=total_n)
