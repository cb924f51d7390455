"""Block coordinate descent inside a penalty dual decomposition loop.

The broadcast and unicast solvers plug their beamforming and coefficient
steps into :func:`run_pdd_bcd`.  Everything model specific stays in those
callbacks; this module owns iteration control and the trace.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .channel import watt_to_dbm
from .conic import Tolerances
from .model import StarCoefficients
from .pdd import (AuxCoefficients, PddState, pdd_outer_step, project_fixed_split,
                  project_uncoupled, solve_aux, violation)
from .sca import COUPLED, FIXED_SPLIT, MODES, SHARED, UNCOUPLED

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max-iterations"
INFEASIBLE = "infeasible"
NUMERICAL = "numerical-failure"


class SubproblemInfeasible(RuntimeError):
    """The beamforming step found no feasible beamformer for the coefficients."""


class SubproblemFailure(RuntimeError):
    """A conic subproblem ended without a usable solution."""


@dataclass
class SolverOptions:
    """Iteration control shared by both solvers.

    ``eps`` is the relative power decrease that ends an inner pass,
    ``delta_tol`` the violation that ends the outer loop.
    """

    mode: str = COUPLED
    eps: float = 1e-4
    delta_tol: float = 1e-4
    max_inner: int = 50
    max_outer: int = 30
    max_sca: int = 30
    max_beam_sca: int = 30
    sca_tol: float = 1e-4
    aux_tol: float = 1e-8
    init_retries: int = 5
    rank_tol: float = 1e-4
    randomizations: int = 100
    rho0: float = 1.0
    eta0: float = 10.0
    c_bar: float = 0.1
    seed: int = 1
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown coefficient mode {self.mode!r}; valid: {', '.join(MODES)}")
        for name in ("max_inner", "max_outer", "max_sca", "max_beam_sca", "init_retries"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class TraceRow:
    iteration: int
    outer: int
    stage: str
    power: float
    delta: float
    status: str = ""

    @property
    def power_dbm(self) -> float:
        return float(watt_to_dbm(self.power)) if self.power > 0 else float("-inf")


@dataclass
class BcdResult:
    status: str
    beam: object
    coefficients: StarCoefficients
    power: float
    trace: list[TraceRow]
    outer_iterations: int
    inner_iterations: int
    delta: float
    message: str = ""
    extras: dict = field(default_factory=dict)


def project(mode: str, state: PddState, coeffs: StarCoefficients, aux_tol: float,
            start: AuxCoefficients | None = None) -> AuxCoefficients:
    phi_r, phi_t = state.phi(coeffs)
    if mode == COUPLED:
        return solve_aux(phi_r, phi_t, tol=aux_tol, start=start)
    if mode == UNCOUPLED:
        return project_uncoupled(phi_r, phi_t)
    if mode == FIXED_SPLIT:
        return project_fixed_split(phi_r, phi_t)
    raise ValueError(f"mode {mode!r} has no auxiliary projection")


MONOTONE_RTOL = 1e-6


def inner_pass_monotone(trace: list[TraceRow], rtol: float = MONOTONE_RTOL) -> bool:
    """True if power never rises by more than ``rtol`` within an inner pass."""
    by_pass: dict[int, list[float]] = {}
    for row in trace:
        if row.stage == "inner":
            by_pass.setdefault(row.outer, []).append(row.power)
    for powers in by_pass.values():
        for a, b in zip(powers, powers[1:]):
            if b > a * (1.0 + rtol):
                return False
    return True


def _bcd_step(beam_step, coeff_step, power_of, options, beam, coeffs, state, aux):
    """One coefficient update followed by one beamforming update.

    The free-residual coefficient step may trade one constraint against
    another and leave ``beam`` infeasible, which can raise the power.  Such
    a step is redone with nonnegative residuals, which keeps ``beam``
    feasible so the warm-started beamforming step cannot do worse.  Returns
    ``None`` if neither variant yields a non-increasing power.
    """
    limit = power_of(beam) * (1.0 + MONOTONE_RTOL)
    for hold in (False, True):
        try:
            new_coeffs = coeff_step(beam, coeffs, state, aux, hold=hold)
            new_aux = aux
            if state is not None:
                new_aux = project(options.mode, state, new_coeffs, options.aux_tol, start=aux)
            new_beam = beam_step(new_coeffs, beam)
        except (SubproblemInfeasible, SubproblemFailure) as exc:
            log.info("BCD step failed (hold=%s): %s", hold, exc)
            continue
        if power_of(new_beam) <= limit:
            return new_beam, new_coeffs, new_aux
        log.info("power rose to %.6g from %.6g (hold=%s)", power_of(new_beam), power_of(beam), hold)
    return None


def run_pdd_bcd(beam_step: Callable, coeff_step: Callable, init_coeffs: Callable,
                power_of: Callable, options: SolverOptions,
                on_pass_start: Callable | None = None) -> BcdResult:
    """Run the triple loop.

    Parameters
    ----------
    beam_step : callable
        ``beam_step(coeffs, previous_beam) -> beam``; raises
        :class:`SubproblemInfeasible` or :class:`SubproblemFailure`.
    coeff_step : callable
        ``coeff_step(beam, coeffs, state, aux) -> coeffs`` where ``state`` and
        ``aux`` are ``None`` when the mode has no penalty term.
    init_coeffs : callable
        ``init_coeffs(attempt) -> StarCoefficients``.
    power_of : callable
        Transmit power of a beam.
    on_pass_start : callable, optional
        ``on_pass_start(beam, coeffs) -> bool`` called before every inner
        pass (used to refresh the decoding order); ``True`` means the
        beamforming step must be redone.
    """
    rng_attempts = options.init_retries
    beam = None
    coeffs = None
    last_error = None
    for attempt in range(rng_attempts):
        coeffs = init_coeffs(attempt)
        try:
            if on_pass_start is not None:
                on_pass_start(None, coeffs)
            beam = beam_step(coeffs, None)
            break
        except (SubproblemInfeasible, SubproblemFailure) as exc:
            last_error = exc
            log.info("initial beamforming failed on attempt %d: %s", attempt, exc)
    if beam is None:
        status = INFEASIBLE if isinstance(last_error, SubproblemInfeasible) else NUMERICAL
        return BcdResult(status, None, coeffs, float("nan"), [], 0, 0, float("nan"),
                         message=f"no feasible beamformer after {rng_attempts} initializations")

    penalized = options.mode != SHARED
    state = PddState.initial(coeffs.size, rho=options.rho0, eta=options.eta0,
                             c_bar=options.c_bar, eps=options.delta_tol) if penalized else None
    aux = None
    if penalized:
        aux = project(options.mode, state, coeffs, options.aux_tol)
    trace = [TraceRow(0, 0, "init", power_of(beam), float("nan"))]
    it = 0
    status = MAX_ITER
    message = ""
    outer_done = 0
    outer_cap = options.max_outer if penalized else 1
    for outer in range(1, outer_cap + 1):
        outer_done = outer
        if on_pass_start is not None and on_pass_start(beam, coeffs):
            try:
                beam = beam_step(coeffs, beam)
            except (SubproblemInfeasible, SubproblemFailure) as exc:
                status, message = NUMERICAL, f"beamforming failed after order refresh: {exc}"
                break
            it += 1
            trace.append(TraceRow(it, outer, "refresh", power_of(beam), state.delta if state else 0.0))
        prev_power = power_of(beam)
        for _ in range(options.max_inner):
            step = _bcd_step(beam_step, coeff_step, power_of, options, beam, coeffs, state, aux)
            stalled = step is None
            if not stalled:
                beam, coeffs, aux = step
            it += 1
            power = power_of(beam)
            delta = violation(coeffs, aux) if penalized else 0.0
            trace.append(TraceRow(it, outer, "inner", power, delta))
            if stalled or prev_power - power <= options.eps * prev_power:
                break
            prev_power = power
        if not penalized:
            status = CONVERGED
            break
        state = pdd_outer_step(state, coeffs, aux.to_coefficients())
        trace[-1].delta = state.delta
        if state.converged:
            status = CONVERGED
            break

    final_coeffs = aux.to_coefficients() if penalized else coeffs
    try:
        if on_pass_start is not None:
            on_pass_start(beam, final_coeffs)
        beam = beam_step(final_coeffs, beam)
    except (SubproblemInfeasible, SubproblemFailure) as exc:
        return BcdResult(NUMERICAL, beam, final_coeffs, power_of(beam), trace, outer_done, it,
                         state.delta if state else 0.0,
                         message=f"final beamforming on the exact coefficients failed: {exc}")
    trace.append(TraceRow(it + 1, outer_done, "final", power_of(beam), state.delta if state else 0.0))
    if status != CONVERGED and not message:
        message = "iteration cap reached"
    return BcdResult(status, beam, final_coeffs, power_of(beam), trace, outer_done, it,
                     state.delta if state else 0.0, message=message)


def randomize_rank_one(W: np.ndarray, feasible_scale: Callable, rng: np.random.Generator,
                       count: int) -> np.ndarray | None:
    """Gaussian randomization for a high-rank ``W``.

    ``feasible_scale(w)`` returns the smallest ``t >= 0`` making ``t w``
    feasible, or ``None``.  The candidate with least power is returned.
    """
    lam, u = np.linalg.eigh(W)
    root = u * np.sqrt(np.clip(lam, 0.0, None))
    best, best_pow = None, np.inf
    for _ in range(count):
        z = (rng.standard_normal(W.shape[0]) + 1j * rng.standard_normal(W.shape[0])) / np.sqrt(2)
        w = root @ z
        t = feasible_scale(w)
        if t is None:
            continue
        p = t * t * float(np.vdot(w, w).real)
        if p < best_pow:
            best, best_pow = t * w, p
    return best


def bisect_scale(is_feasible: Callable, hi: float = 1.0, iters: int = 60) -> float | None:
    """Smallest ``t`` with ``is_feasible(t)`` for a predicate monotone in ``t``."""
    grow = 0
    while not is_feasible(hi):
        hi *= 2.0
        grow += 1
        if grow > 60:
            return None
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if is_feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi
