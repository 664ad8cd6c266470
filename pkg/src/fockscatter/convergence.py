"""Double-limit plateau studies over (rank, cutoff) grids and the
scattering-horizon study.

The full-interaction limit is approached through two nested limits: the
interaction rank n grows at fixed grid refinement r, then r is refined.
For a declared finite family of observables g(n, r) the study finds, per
refinement, the plateau rank

    n*(r, eps) = first computed n such that all computed values at ranks
                 >= n lie within eps of each other (pairwise),

and certifies h_star = max over families of n*(r_finest, eps): the single
rank adequate for every declared observable, with per-family dominance
|g(h_star) - g(n)| < eps for every computed n >= h_star.  The outer limit is a
first-order Richardson extrapolation in the refinement parameter over the
last two grids, with the last-step difference as the quoted uncertainty.
A study can only speak for the observables it was given; no closure over
"all functions of interest" is claimed.

The horizon study is the time-domain analogue: per normalized state u it
finds the earliest grid time T_u after which the time-averaged comparison
trajectory applied to u stops drifting (tolerance tol), and reports the
global horizon T = max_u T_u.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .evolution import Propagator
from .hamiltonian import RegularizedHamiltonian
from .scattering import _TrajectoryMean, _default_propagator

__all__ = [
    "ObservableFamily",
    "Refinement",
    "PlateauRecord",
    "DoubleLimitReport",
    "HorizonRecord",
    "inner_sweep",
    "double_limit_study",
    "horizon_study",
    "richardson_last_two",
]


@dataclass(frozen=True)
class ObservableFamily:
    """A named deterministic map (rank, refinement) -> complex."""

    name: str
    evaluate: Callable[[int, Any], complex]


@dataclass(frozen=True)
class Refinement:
    """One grid refinement: a sortable key and a parameter h -> 0.

    ``payload`` carries whatever the evaluator needs (grids, bases, ...).
    """

    key: str
    h: float
    payload: Any = None


@dataclass
class PlateauRecord:
    """Inner sweep of one family at fixed refinement."""

    family: str
    refinement_key: str
    ranks: tuple[int, ...]
    values: tuple[complex, ...]
    eps: float
    plateau_rank: Optional[int]
    plateau_value: Optional[complex]
    tail_value: complex
    max_tail_spread: float
    failures: tuple[tuple[int, str], ...] = ()

    @property
    def plateaued(self) -> bool:
        return self.plateau_rank is not None


def inner_sweep(
    fam: ObservableFamily,
    r: Refinement,
    ranks: Sequence[int],
    eps: float,
) -> PlateauRecord:
    """Evaluate g(n, r) along ascending ranks and locate the plateau rank."""
    ranks = tuple(int(n) for n in ranks)
    if len(ranks) < 3:
        raise ValueError("inner sweep needs at least 3 ranks")
    if any(b <= a for a, b in zip(ranks, ranks[1:])):
        raise ValueError("ranks must be strictly increasing")
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    values: list[complex] = []
    failures: list[tuple[int, str]] = []
    kept_ranks: list[int] = []
    for n in ranks:
        try:
            values.append(complex(fam.evaluate(n, r)))
            kept_ranks.append(n)
        except Exception as exc:  # partial report on evaluation failure
            failures.append((n, f"{type(exc).__name__}: {exc}"))
    plateau_rank = None
    plateau_value = None
    arr = np.array(values) if values else np.array([], dtype=complex)
    # pairwise tube: every rank at or past the plateau is within eps of
    # every other, so any later certified rank inherits the dominance; a
    # tail of fewer than 3 points is not accepted as evidence
    for i in range(max(len(arr) - 2, 0)):
        tail = arr[i:]
        if np.max(np.abs(tail[:, None] - tail[None, :])) < eps:
            plateau_rank = kept_ranks[i]
            plateau_value = complex(arr[i])
            break
    tail = complex(arr[-1]) if arr.size else complex(np.nan)
    spread = float(np.max(np.abs(arr - tail))) if arr.size else float("nan")
    return PlateauRecord(
        family=fam.name,
        refinement_key=r.key,
        ranks=tuple(kept_ranks),
        values=tuple(complex(v) for v in arr),
        eps=eps,
        plateau_rank=plateau_rank,
        plateau_value=plateau_value,
        tail_value=tail,
        max_tail_spread=spread,
        failures=tuple(failures),
    )


def richardson_last_two(
    values: Sequence[complex], hs: Sequence[float]
) -> tuple[complex, float]:
    """First-order Richardson step on the last two (value, h) pairs.

    Returns (extrapolated value, |last-step difference|).  With a single
    point the value itself is returned with infinite uncertainty replaced
    by 0 (nothing to compare against).
    """
    if len(values) != len(hs) or not values:
        raise ValueError("values and hs must be equal-length and nonempty")
    if len(values) == 1:
        return complex(values[0]), 0.0
    v1, v2 = complex(values[-2]), complex(values[-1])
    h1, h2 = float(hs[-2]), float(hs[-1])
    if h2 >= h1:
        raise ValueError("refinement parameters must strictly decrease")
    extrapolated = (h1 * v2 - h2 * v1) / (h1 - h2)
    return extrapolated, abs(v2 - v1)


@dataclass
class FamilySummary:
    family: str
    inner_plateaus: dict[str, Optional[int]]
    outer_estimate: Optional[complex]
    uncertainty: Optional[float]
    swapped_estimate: Optional[complex] = None
    order_discrepancy: Optional[float] = None
    quarantined: bool = False


@dataclass
class DoubleLimitReport:
    """Per-family plateau table, the certified common rank, and extrapolations."""

    eps: float
    ranks: tuple[int, ...]
    refinement_keys: tuple[str, ...]
    records: dict[tuple[str, str], PlateauRecord]
    families: dict[str, FamilySummary]
    h_star: Optional[int]
    certified: bool

    def value_table(self) -> list[tuple[str, str, int, complex]]:
        """Flat (family, refinement, rank, value) rows in deterministic order."""
        rows = []
        for fam in sorted(self.families):
            for rkey in self.refinement_keys:
                rec = self.records[(fam, rkey)]
                for n, v in zip(rec.ranks, rec.values):
                    rows.append((fam, rkey, n, v))
        return rows


def double_limit_study(
    fams: Sequence[ObservableFamily],
    r_grid: Sequence[Refinement],
    rank_grid: Sequence[int],
    eps: float,
    swapped_order: bool = False,
) -> DoubleLimitReport:
    """Run inner rank sweeps per refinement and certify a common plateau rank.

    ``h_star`` is the maximum plateau rank at the finest refinement over
    all families that plateaued; any family without a plateau is
    quarantined (excluded from h_star and the extrapolated estimates) and
    the report is flagged non-certified.
    """
    if not fams:
        raise ValueError("no observable families declared")
    if not r_grid:
        raise ValueError("refinement grid is empty")
    r_list = list(r_grid)
    if any(b.h >= a.h for a, b in zip(r_list, r_list[1:])):
        raise ValueError("refinements must have strictly decreasing h")
    records: dict[tuple[str, str], PlateauRecord] = {}
    summaries: dict[str, FamilySummary] = {}
    finest = r_list[-1]
    certified = True
    h_star: Optional[int] = None
    for fam in fams:
        inner: dict[str, Optional[int]] = {}
        for r in r_list:
            rec = inner_sweep(fam, r, rank_grid, eps)
            records[(fam.name, r.key)] = rec
            inner[r.key] = rec.plateau_rank
        quarantined = any(v is None for v in inner.values())
        outer = None
        unc = None
        swapped = None
        discrepancy = None
        if not quarantined:
            tails = [records[(fam.name, r.key)].tail_value for r in r_list]
            hs = [r.h for r in r_list]
            outer, unc = richardson_last_two(tails, hs)
            if swapped_order and len(r_list) >= 2:
                # refine r first at each rank, then read off the rank tail
                per_rank = []
                for i, n in enumerate(records[(fam.name, finest.key)].ranks):
                    vals_r = []
                    ok = True
                    for r in r_list:
                        rec = records[(fam.name, r.key)]
                        if n in rec.ranks:
                            vals_r.append(rec.values[rec.ranks.index(n)])
                        else:
                            ok = False
                    if ok:
                        per_rank.append(richardson_last_two(vals_r, hs)[0])
                if per_rank:
                    swapped = per_rank[-1]
                    discrepancy = abs(swapped - outer)
        else:
            certified = False
        if not quarantined:
            n_star = inner[finest.key]
            h_star = n_star if h_star is None else max(h_star, n_star)
        summaries[fam.name] = FamilySummary(
            family=fam.name,
            inner_plateaus=inner,
            outer_estimate=outer,
            uncertainty=unc,
            swapped_estimate=swapped,
            order_discrepancy=discrepancy,
            quarantined=quarantined,
        )
    return DoubleLimitReport(
        eps=eps,
        ranks=tuple(int(n) for n in rank_grid),
        refinement_keys=tuple(r.key for r in r_list),
        records=records,
        families=summaries,
        h_star=h_star,
        certified=certified,
    )


@dataclass
class HorizonRecord:
    """Per-state stabilization times of the averaged comparison trajectory."""

    direction: str
    tol: float
    times: np.ndarray
    per_state_horizon: tuple[Optional[float], ...]
    global_horizon: Optional[float]
    converged: bool
    recurrence_onset: Optional[float]


def horizon_study(
    h: RegularizedHamiltonian,
    states: Sequence[np.ndarray],
    time_grid: Sequence[float],
    tol: float,
    direction: str = "-",
    window: int = 4,
    prop: Optional[Propagator] = None,
) -> HorizonRecord:
    """Earliest per-state times after which the averaged trajectory is static.

    For each normalized state u, T_u is the first grid time such that
    every later computed time t satisfies
    || (Mean(t) - Mean(T_u)) u || < tol.  The global horizon is the
    maximum of the per-state times; ``recurrence_onset`` reports the first
    time the worst per-state drift grows back above twice its running
    minimum.
    """
    times = np.asarray(list(time_grid), dtype=float)
    if times.size < window:
        raise ValueError("time grid shorter than the stabilization window")
    if np.any(times <= 0.0) or np.any(np.diff(times) <= 0.0):
        raise ValueError("time grid must be strictly increasing and positive")
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    mat = np.column_stack([np.asarray(u, dtype=complex) for u in states])
    norms = np.linalg.norm(mat, axis=0)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("states must be normalized")
    if prop is None:
        prop = _default_propagator(h)

    walker = _TrajectoryMean(h, direction, prop)
    trajectory = np.empty((times.size, h.dim, mat.shape[1]), dtype=complex)
    for k, s in enumerate(times):
        trajectory[k] = walker.advance(float(s)) @ mat

    n_states = mat.shape[1]
    horizons: list[Optional[float]] = []
    for j in range(n_states):
        t_u: Optional[float] = None
        for k in range(times.size):
            later = trajectory[k + 1 :, :, j] - trajectory[k, :, j][None, :]
            if later.shape[0] == 0:
                break
            if np.all(np.linalg.norm(later, axis=1) < tol):
                t_u = float(times[k])
                break
        horizons.append(t_u)
    converged = all(t is not None for t in horizons)
    global_t = max((t for t in horizons if t is not None), default=None)
    if not converged:
        global_t = None

    # worst-state drift between consecutive grid points, for recurrence
    steps = np.linalg.norm(np.diff(trajectory, axis=0), axis=1)  # (n_t-1, n_states)
    worst = steps.max(axis=1)
    recurrence = None
    if worst.size >= 3:
        running_min = np.minimum.accumulate(worst)
        for k in range(2, worst.size):
            if worst[k] > 2.0 * running_min[k] and worst[k - 1] > 2.0 * running_min[k - 1] and running_min[k] < worst[0]:
                recurrence = float(times[k + 1])
                break
    return HorizonRecord(
        direction=direction,
        tol=tol,
        times=times,
        per_state_horizon=tuple(horizons),
        global_horizon=global_t,
        converged=converged,
        recurrence_onset=recurrence,
    )
