"""Moller wave operators, the scattering operator, and their diagnostics.

On the truncated model every operator acts on a finite-dimensional space,
so the ideal strong limits

    W_+- = lim_{t -> -+inf} exp(iHt) exp(-iH0 t) P_ac

do not exist pointwise: the comparison trajectory
Omega(t) = exp(iHt) exp(-iH0 t) P_ac is quasi-periodic and its
oscillation amplitude never decays.  Two limit surrogates are provided
and required to agree:

* ``time-plateau``: the running time average
  (1/T) int_0^T Omega(s) ds is tracked along an increasing time grid and
  declared converged when its drift over a trailing window stays below a
  tolerance.  Averaging damps the off-resonant oscillation like 1/T, so
  the stopping tolerance directly controls the quality of the limit;
  the raw iterate Omega(T) has no such control.
* ``adiabatic``: Abel damping
  W(eps) = eps int_0^inf exp(-eps s) Omega(s) ds by composite
  Gauss-Legendre quadrature, Richardson-extrapolated over the last two
  eps values.

Both overwrite the vacuum column with the vacuum itself: the wave
operators extend to the free ground state as the identity by definition.
The absolutely-continuous projection of the discretized model is the
orthogonal complement of the vacuum, P_ac = I - |w0><w0|.

Sign convention: direction "+" takes t -> -infinity and "-" takes
t -> +infinity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .evolution import Propagator
from .hamiltonian import RegularizedHamiltonian
from .fock import FockBasis
from .linalg import gauss_legendre_panels, max_abs, orthonormal_range, principal_angles

__all__ = [
    "WaveOperatorResult",
    "ScatteringReport",
    "ac_projection",
    "wave_operator_time_plateau",
    "wave_operator_adiabatic",
    "damped_trajectory_integral",
    "range_projection",
    "intertwining_defect",
    "scattering_operator",
    "compute_wave_operators",
]

_DIRECTIONS = ("+", "-")


def ac_projection(basis: FockBasis) -> sparse.csr_matrix:
    """P_ac = I - |vacuum><vacuum| (the vacuum is basis state 0)."""
    diag = np.ones(basis.dim)
    diag[0] = 0.0
    return sparse.diags(diag, format="csr")


def _direction_sign(direction: str) -> float:
    if direction not in _DIRECTIONS:
        raise ValueError(f"direction must be '+' or '-', got {direction!r}")
    # "+" runs to t -> -inf, so its positive-parameter trajectory uses -H
    return -1.0 if direction == "+" else 1.0


def _default_propagator(h: RegularizedHamiltonian, dense_limit: int = 400) -> Propagator:
    method = "dense-exponential" if h.dim <= dense_limit else "krylov-step"
    return Propagator(h.full, method=method)


class _TrajectoryMean:
    """Running trapezoidal time average of Omega(s) from s = 0.

    Omega(0) = P_ac; columns are tracked with the vacuum column zeroed.
    """

    def __init__(self, h: RegularizedHamiltonian, direction: str, prop: Propagator):
        self.sign = _direction_sign(direction)
        self.energies = h.energies
        self.prop = prop
        dim = h.dim
        self.phi = np.eye(dim, dtype=complex)  # exp(i*sign*H*s)
        self.phi[:, 0] = 0.0
        self.s = 0.0
        self.omega = self.phi.copy()
        self.accum = np.zeros_like(self.phi)

    def advance(self, s_next: float) -> np.ndarray:
        """Step the trajectory to s_next > s and return the running mean."""
        ds = s_next - self.s
        if ds <= 0.0:
            raise ValueError("trajectory times must be strictly increasing")
        self.phi = self.prop.apply_matrix(self.phi, -self.sign * ds)
        phases = np.exp(-1j * self.sign * s_next * self.energies)
        omega_next = self.phi * phases[None, :]
        self.accum += 0.5 * ds * (self.omega + omega_next)
        self.omega = omega_next
        self.s = s_next
        return self.accum / self.s

    def omega_now(self) -> np.ndarray:
        return self.omega


@dataclass
class WaveOperatorResult:
    """One or both wave operators plus convergence diagnostics.

    ``w_plus``/``w_minus`` hold the computed directions (columns are the
    operator applied to basis states; the vacuum column is the vacuum).
    ``plateau_time`` is the accepted horizon T for the time-plateau method.
    """

    method: str
    w_plus: Optional[np.ndarray] = None
    w_minus: Optional[np.ndarray] = None
    plateau_time: Optional[float] = None
    converged: bool = True
    damping_sequence: tuple[float, ...] = ()
    eps_matrices: tuple[np.ndarray, ...] = ()
    extrapolation_disagreement: Optional[float] = None
    times: Optional[np.ndarray] = None
    drifts: Optional[np.ndarray] = None
    recurrence_time: Optional[float] = None
    isometry_defect: float = np.nan
    intertwining_defect: float = np.nan

    def matrix(self, direction: str) -> np.ndarray:
        m = self.w_plus if direction == "+" else self.w_minus
        if m is None:
            raise ValueError(f"direction {direction!r} was not computed in this result")
        return m

    def single_matrix(self) -> np.ndarray:
        if (self.w_plus is None) == (self.w_minus is None):
            raise ValueError("result does not hold exactly one direction")
        return self.w_plus if self.w_plus is not None else self.w_minus


def _isometry_defect(w: np.ndarray) -> float:
    """max-entry norm of (W^dagger W - I) P_ac.

    The projection acts on the right only: the vacuum row survives and
    measures how much weight the AC columns leak onto the free vacuum.
    """
    gram = w.conj().T @ w
    gram -= np.eye(w.shape[0])
    gram[:, 0] = 0.0
    return max_abs(gram)


def _finalize(w: np.ndarray) -> np.ndarray:
    w = w.copy()
    w[:, 0] = 0.0
    w[0, 0] = 1.0  # definitional vacuum extension
    return w


def _detect_recurrence(times: np.ndarray, drifts: np.ndarray) -> Optional[float]:
    """First time the drift rises persistently above twice its running minimum."""
    if drifts.size < 3:
        return None
    running_min = np.minimum.accumulate(drifts)
    grew = drifts > 2.0 * running_min
    # require two consecutive growth points after the minimum was set
    for k in range(1, drifts.size):
        if grew[k] and grew[k - 1] and running_min[k] < drifts[0]:
            return float(times[k])
    return None


def wave_operator_time_plateau(
    h: RegularizedHamiltonian,
    direction: str,
    time_grid: Sequence[float],
    window: int = 4,
    tol: float = 1e-5,
    prop: Optional[Propagator] = None,
) -> WaveOperatorResult:
    """Wave operator by plateau detection on the time-averaged trajectory.

    Walks the positive time grid (mapped to negative times for
    direction "+"), tracking the running mean of Omega(s) and its
    per-column drift between grid points.  Converges at the first grid
    time where the trailing ``window`` drifts all fall below ``tol``;
    otherwise returns the lowest-drift iterate flagged non-converged.
    """
    times = np.asarray(list(time_grid), dtype=float)
    if times.size == 0:
        raise ValueError("time grid is empty")
    if np.any(times <= 0.0) or np.any(np.diff(times) <= 0.0):
        raise ValueError("time grid must be strictly increasing and positive")
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    if prop is None:
        # propagate only as accurately as the detection threshold requires:
        # the returned operator then genuinely reflects the requested tol
        prop = Propagator(h.full, method="chebyshev", tolerance=tol)

    walker = _TrajectoryMean(h, direction, prop)
    prev_mean = walker.omega.copy()  # Omega(0) = P_ac
    drifts = []
    best = (np.inf, prev_mean, times[0])
    converged = False
    plateau_time = None
    result_matrix = None
    used = 0
    for k, s in enumerate(times):
        mean = walker.advance(float(s))
        drift = float(np.max(np.linalg.norm(mean - prev_mean, axis=0)))
        drifts.append(drift)
        prev_mean = mean.copy()
        used = k + 1
        if drift < best[0]:
            best = (drift, mean.copy(), float(s))
        if k + 1 >= window and all(d < tol for d in drifts[-window:]):
            converged = True
            plateau_time = float(s)
            result_matrix = mean
            break
    if result_matrix is None:
        result_matrix = best[1]
        plateau_time = best[2]
    drifts_arr = np.array(drifts)
    times_used = times[:used]
    w = _finalize(result_matrix)
    result = WaveOperatorResult(
        method="time-plateau",
        plateau_time=plateau_time,
        converged=converged,
        times=times_used,
        drifts=drifts_arr,
        recurrence_time=_detect_recurrence(times_used, drifts_arr),
        isometry_defect=_isometry_defect(w),
    )
    if direction == "+":
        result.w_plus = w
    else:
        result.w_minus = w
    return result


def damped_trajectory_integral(
    h: RegularizedHamiltonian,
    direction: str,
    eps: float,
    prop: Optional[Propagator] = None,
    s_max_factor: float = 40.0,
    panel_width: Optional[float] = None,
    nodes: int = 8,
) -> np.ndarray:
    """Abel-damped average eps * int_0^inf exp(-eps*s) Omega(s) ds.

    The integral is truncated at s_max_factor/eps (relative truncation
    error below exp(-s_max_factor)) and evaluated by composite
    Gauss-Legendre panels sized to resolve the fastest phase.
    """
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    if prop is None:
        prop = _default_propagator(h)
    if panel_width is None:
        lo, hi = prop.spectral_interval()
        rate = max(abs(lo), abs(hi), float(np.max(np.abs(h.energies))), 1.0)
        panel_width = 1.5 / rate
    s_max = s_max_factor / eps
    points, weights = gauss_legendre_panels(0.0, s_max, panel_width, nodes)

    sign = _direction_sign(direction)
    energies = h.energies
    dim = h.dim
    phi = np.eye(dim, dtype=complex)
    phi[:, 0] = 0.0
    acc = np.zeros((dim, dim), dtype=complex)
    s_prev = 0.0
    for s, wgt in zip(points, weights):
        phi = prop.apply_matrix(phi, -sign * (s - s_prev))
        s_prev = s
        omega = phi * np.exp(-1j * sign * s * energies)[None, :]
        acc += (wgt * eps * np.exp(-eps * s)) * omega
    return acc


def wave_operator_adiabatic(
    h: RegularizedHamiltonian,
    direction: str,
    eps_sequence: Sequence[float],
    prop: Optional[Propagator] = None,
    s_max_factor: float = 40.0,
    panel_width: Optional[float] = None,
    nodes: int = 8,
    extrapolation_tol: Optional[float] = None,
) -> WaveOperatorResult:
    """Wave operator by Abel damping with Richardson extrapolation eps -> 0.

    ``eps_sequence`` must be positive and strictly decreasing; the last two
    values feed a first-order Richardson step.  With a single value the
    damped integral itself is returned.
    """
    eps_list = [float(e) for e in eps_sequence]
    if not eps_list:
        raise ValueError("eps sequence is empty")
    if any(e <= 0.0 for e in eps_list) or any(
        b >= a for a, b in zip(eps_list, eps_list[1:])
    ):
        raise ValueError("eps sequence must be positive and strictly decreasing")
    if prop is None:
        prop = _default_propagator(h)
    mats = [
        damped_trajectory_integral(
            h, direction, e, prop=prop, s_max_factor=s_max_factor,
            panel_width=panel_width, nodes=nodes,
        )
        for e in eps_list
    ]
    disagreement = None
    if len(mats) >= 2:
        e1, e2 = eps_list[-2], eps_list[-1]
        extrapolated = (e1 * mats[-1] - e2 * mats[-2]) / (e1 - e2)
        disagreement = max_abs(extrapolated - mats[-1])
    else:
        extrapolated = mats[-1]
    converged = True
    if extrapolation_tol is not None and disagreement is not None:
        converged = disagreement <= extrapolation_tol
    w = _finalize(extrapolated)
    result = WaveOperatorResult(
        method="adiabatic",
        converged=converged,
        damping_sequence=tuple(eps_list),
        eps_matrices=tuple(_finalize(m) for m in mats),
        extrapolation_disagreement=disagreement,
        isometry_defect=_isometry_defect(w),
    )
    if direction == "+":
        result.w_plus = w
    else:
        result.w_minus = w
    return result


def compute_wave_operators(
    h: RegularizedHamiltonian,
    method: str = "time-plateau",
    prop: Optional[Propagator] = None,
    **params,
) -> WaveOperatorResult:
    """Both wave operators with shared parameters, merged into one result.

    Each method keeps its own propagator default when ``prop`` is None
    (tolerance-tied Chebyshev for the plateau walk, exact/dense for the
    adiabatic quadrature).
    """
    if method == "time-plateau":
        rp = wave_operator_time_plateau(h, "+", prop=prop, **params)
        rm = wave_operator_time_plateau(h, "-", prop=prop, **params)
    elif method == "adiabatic":
        if prop is None:
            prop = _default_propagator(h)
        rp = wave_operator_adiabatic(h, "+", prop=prop, **params)
        rm = wave_operator_adiabatic(h, "-", prop=prop, **params)
    else:
        raise ValueError(f"unknown wave-operator method {method!r}")
    merged = rp
    merged.w_minus = rm.w_minus
    merged.converged = rp.converged and rm.converged
    merged.isometry_defect = max(rp.isometry_defect, rm.isometry_defect)
    if rp.plateau_time is not None and rm.plateau_time is not None:
        merged.plateau_time = max(rp.plateau_time, rm.plateau_time)
    return merged


def range_projection(w, rank_tol: float = 1e-8) -> np.ndarray:
    """Orthogonal projection onto the numerical column span of W."""
    mat = w.single_matrix() if isinstance(w, WaveOperatorResult) else np.asarray(w)
    q, rank = orthonormal_range(mat, rank_tol)
    if rank < mat.shape[1]:
        warnings.warn(
            f"wave operator is rank deficient: numerical rank {rank} < {mat.shape[1]}",
            stacklevel=2,
        )
    return q @ q.conj().T


def intertwining_defect(h: RegularizedHamiltonian, w) -> float:
    """max-entry norm of (H W - W H0) P_ac; recorded on the result."""
    if isinstance(w, WaveOperatorResult):
        mats = [m for m in (w.w_plus, w.w_minus) if m is not None]
        defect = max(_intertwining_defect_matrix(h, m) for m in mats)
        w.intertwining_defect = defect
        return defect
    return _intertwining_defect_matrix(h, np.asarray(w))


def _intertwining_defect_matrix(h: RegularizedHamiltonian, w: np.ndarray) -> float:
    lhs = h.full @ w
    rhs = w * h.energies[None, :]
    diff = lhs - rhs
    diff[:, 0] = 0.0
    return max_abs(diff)


@dataclass
class ScatteringReport:
    """S = W_-^dagger W_+ with its diagnostics.

    ``unitarity_defect`` is the max-entry norm of P_ac (S^dagger S - I) P_ac;
    ``vacuum_persistence`` is exactly 1 by the definitional vacuum
    extension.  ``range_principal_angles`` measures how far the two wave
    operators are from sharing a range (asymptotic completeness holds only
    approximately on the truncated model).
    """

    s_matrix: np.ndarray
    unitarity_defect: float
    vacuum_persistence: complex
    max_channel_probability: float
    range_principal_angles: np.ndarray = field(default_factory=lambda: np.array([]))

    def channel_probability(self, out_index: int, in_index: int) -> float:
        return float(np.abs(self.s_matrix[out_index, in_index]) ** 2)

    def channel_probabilities(self) -> dict[tuple[int, int], float]:
        probs = np.abs(self.s_matrix) ** 2
        return {
            (int(i), int(j)): float(probs[i, j])
            for i in range(probs.shape[0])
            for j in range(probs.shape[1])
        }


def scattering_operator(
    wp: WaveOperatorResult, wm: WaveOperatorResult
) -> ScatteringReport:
    """S = W_-^dagger W_+ with the vacuum row/column forced to the identity."""
    if wp.method != wm.method:
        warnings.warn(
            f"mixing wave-operator methods {wp.method!r} and {wm.method!r}",
            stacklevel=2,
        )
    w_plus = wp.matrix("+")
    w_minus = wm.matrix("-")
    s = w_minus.conj().T @ w_plus
    s[:, 0] = 0.0
    s[0, :] = 0.0
    s[0, 0] = 1.0
    gram = s.conj().T @ s - np.eye(s.shape[0])
    gram[:, 0] = 0.0
    gram[0, :] = 0.0
    angles = principal_angles(w_plus, w_minus)
    return ScatteringReport(
        s_matrix=s,
        unitarity_defect=max_abs(gram),
        vacuum_persistence=complex(s[0, 0]),
        max_channel_probability=float(np.max(np.abs(s) ** 2)),
        range_principal_angles=angles,
    )
