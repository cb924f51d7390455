"""Comparison schemes built from the two solvers.

Every scheme maps to a coefficient mode of the shared BCD loop, except
baseline 2 which only optimizes the beamformer for a random surface.
"""

from __future__ import annotations

from dataclasses import replace
from enum import Enum

import numpy as np

from .broadcast import STAR_MODE, BroadcastSolution, solve_beamforming, solve_p1
from .channel import ChannelSet
from .engine import CONVERGED, INFEASIBLE, NUMERICAL, SolverOptions, SubproblemFailure, \
    SubproblemInfeasible, TraceRow
from .model import BROADCAST, MODELS, Beamformer, QosSpec, StarCoefficients, check_feasibility
from .sca import COUPLED, FIXED_SPLIT, SHARED, UNCOUPLED, normalize_noise
from .unicast import (UnicastSolution, default_order, gain_order, solve_beamforming_unicast,
                      solve_p4)


class SchemeTag(str, Enum):
    PROPOSED = "proposed"
    NO_PHASE_CORR = "proposed-no-phase-corr"
    BASELINE1 = "baseline1"
    BASELINE2 = "baseline2"
    BASELINE3 = "baseline3"

    @classmethod
    def parse(cls, text: str) -> SchemeTag:
        try:
            return cls(text)
        except ValueError:
            valid = ", ".join(t.value for t in cls)
            raise ValueError(f"unknown scheme {text!r}; valid: {valid}") from None


SCHEMES = tuple(t.value for t in SchemeTag)

Solution = BroadcastSolution | UnicastSolution

# how many times baseline 2 re-solves the unicast beams after a decoding order change
ORDER_REFRESHES = 5


def _check_model(model: str) -> None:
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; valid: {', '.join(MODELS)}")


def _solve(channels, qos, model, options, init=None) -> Solution:
    _check_model(model)
    solver = solve_p1 if model == BROADCAST else solve_p4
    return solver(channels, qos, options, init=init)


def _with_mode(options: SolverOptions | None, mode: str) -> SolverOptions:
    return replace(options or SolverOptions(), mode=mode)


def run_proposed(channels: ChannelSet, qos: QosSpec, model: str,
                 options: SolverOptions | None = None) -> Solution:
    """Coupled STAR coefficients with the phase-correlation constraint."""
    return _solve(channels, qos, model, _with_mode(options, COUPLED))


def run_no_phase_corr(channels: ChannelSet, qos: QosSpec, model: str,
                      options: SolverOptions | None = None,
                      reference: Solution | None = None) -> Solution:
    """Energy split without the phase-correlation constraint.

    The relaxed problem contains every point of the coupled one, so when a
    coupled ``reference`` solution is given the solver is also warm-started
    from its coefficients and the cheapest feasible outcome is returned.
    """
    opts = _with_mode(options, UNCOUPLED)
    best = _solve(channels, qos, model, opts)
    if reference is None or reference.report is None or not reference.report.passed:
        return best
    warm = _solve(channels, qos, model, opts, init=reference.coefficients.copy())
    for cand in (warm, _as_relaxed(reference, channels, qos)):
        if cand.feasible and (not best.feasible or cand.power < best.power):
            best = cand
    return best


def _as_relaxed(solution: Solution, channels: ChannelSet, qos: QosSpec) -> Solution:
    """A coupled solution re-checked against the relaxed coefficient set."""
    order = getattr(solution, "order", None)
    report = check_feasibility(channels, solution.coefficients, solution.beamformer, qos,
                               star=STAR_MODE[UNCOUPLED], order=order)
    return replace(solution, report=report, mode=UNCOUPLED,
                   message=solution.message or "coupled solution is the best relaxed point found")


def run_baseline1(channels: ChannelSet, qos: QosSpec, model: str,
                  options: SolverOptions | None = None) -> Solution:
    """Amplitudes frozen at an even split, phases optimized freely."""
    return _solve(channels, qos, model, _with_mode(options, FIXED_SPLIT))


def random_coefficients(size: int, seed: int) -> StarCoefficients:
    """Even split with independent uniform phases, one draw per seed."""
    rng = np.random.default_rng([seed, 2])
    theta_r = rng.uniform(0.0, 2.0 * np.pi, size)
    theta_t = rng.uniform(0.0, 2.0 * np.pi, size)
    return StarCoefficients.from_polar(0.5, theta_r, 0.5, theta_t)


def run_baseline2(channels: ChannelSet, qos: QosSpec, model: str,
                  options: SolverOptions | None = None) -> Solution:
    """Random surface, beamformer optimized once."""
    _check_model(model)
    opts = _with_mode(options, FIXED_SPLIT)
    n, m, K, Q = channels.dims
    coeffs = random_coefficients(m, opts.seed)
    chn = normalize_noise(channels, qos)
    rng = np.random.default_rng([opts.seed, 7])
    status, message, beam, order = CONVERGED, "", None, default_order(K, Q)
    ratios: list = []
    randomized = 0
    try:
        if model == BROADCAST:
            res = solve_beamforming(chn, coeffs, qos, tol=opts.tolerances, rank_tol=opts.rank_tol,
                                    rng=rng, randomizations=opts.randomizations, normalized=True)
            beam, ratios, randomized = res.w, [res.rank_ratio], int(res.randomized)
        else:
            for _ in range(ORDER_REFRESHES):
                res = solve_beamforming_unicast(chn, coeffs, qos, order, beam,
                                                max_rounds=opts.max_beam_sca, sca_tol=opts.eps,
                                                tol=opts.tolerances, rank_tol=opts.rank_tol,
                                                rng=rng, randomizations=opts.randomizations,
                                                normalized=True)
                beam = res.beams
                ratios.append(max(res.rank_ratios))
                randomized += int(res.randomized)
                new = gain_order(chn, coeffs, beam)
                if new == order:
                    break
                order = new
    except SubproblemInfeasible as exc:
        status, message, beam = INFEASIBLE, str(exc), None
    except SubproblemFailure as exc:
        status, message, beam = NUMERICAL, str(exc), None
    power = float("nan") if beam is None else float(np.sum(np.abs(beam) ** 2))
    trace = [] if beam is None else [TraceRow(0, 0, "final", power, 0.0)]
    if model == BROADCAST:
        report = None if beam is None else check_feasibility(
            channels, coeffs, Beamformer.broadcast(beam), qos, star=STAR_MODE[FIXED_SPLIT])
        return BroadcastSolution(status, beam, coeffs, power, trace, report, 0, 0, 0.0, ratios,
                                 randomized, message, FIXED_SPLIT)
    report = None if beam is None else check_feasibility(
        channels, coeffs, Beamformer.unicast(beam), qos, star=STAR_MODE[FIXED_SPLIT], order=order)
    return UnicastSolution(status, beam, coeffs, power, trace, report, order, 0, 0, 0.0, ratios,
                           randomized, message, FIXED_SPLIT)


def run_baseline3(channels: ChannelSet, qos: QosSpec, model: str,
                  options: SolverOptions | None = None) -> Solution:
    """One backscatter element at the surface position serving both regions.

    Uses the first element's channels, a single coefficient shared by both
    regions and only ``|v| <= 1``.
    """
    return _solve(channels.subset_elements(0), qos, model, _with_mode(options, SHARED))


RUNNERS = {
    SchemeTag.PROPOSED: run_proposed,
    SchemeTag.NO_PHASE_CORR: run_no_phase_corr,
    SchemeTag.BASELINE1: run_baseline1,
    SchemeTag.BASELINE2: run_baseline2,
    SchemeTag.BASELINE3: run_baseline3,
}


def run_scheme(scheme: str | SchemeTag, channels: ChannelSet, qos: QosSpec, model: str,
               options: SolverOptions | None = None) -> Solution:
    """Dispatch on the scheme tag.

    The no-phase-correlation scheme first solves the coupled problem so that
    it can warm-start from it.
    """
    tag = scheme if isinstance(scheme, SchemeTag) else SchemeTag.parse(scheme)
    if tag is SchemeTag.NO_PHASE_CORR:
        ref = run_proposed(channels, qos, model, options)
        return run_no_phase_corr(channels, qos, model, options, reference=ref)
    return RUNNERS[tag](channels, qos, model, options)


__all__ = ["SCHEMES", "SchemeTag", "random_coefficients", "run_baseline1", "run_baseline2",
           "run_baseline3", "run_no_phase_corr", "run_proposed", "run_scheme"]
