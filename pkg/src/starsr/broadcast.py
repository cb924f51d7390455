"""Transmit-power minimization when every primary user wants the same stream.

Beamforming step: semidefinite program over ``W = w w^H`` with the rate
constraints written as products ``(1 + Tr E1 W)(1 + Tr E2 W) >= 4^R``.
Coefficient step: successive convex approximation with residual
variables, plus the penalty that pulls ``v`` towards its auxiliary copy.
All conic programs work on noise-normalized channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, watt_to_dbm
from .conic import Affine, ConicProgram, Tolerances
from .engine import (CONVERGED, BcdResult, SolverOptions, SubproblemFailure,
                     SubproblemInfeasible, TraceRow, bisect_scale, randomize_rank_one,
                     run_pdd_bcd)
from .model import (Beamformer, FeasibilityReport, QosSpec, StarCoefficients,
                    check_feasibility)
from .pdd import AuxCoefficients, PddState
from .sca import (COUPLED, FIXED_SPLIT, SHARED, UNCOUPLED, CoefficientVars,
                  initial_coefficients, normalize_noise, tangent_log_terms)

LN2 = np.log(2.0)

STAR_MODE = {COUPLED: "coupled", UNCOUPLED: "energy", FIXED_SPLIT: "fixed", SHARED: "unit"}


def verify_rank_one(W: np.ndarray, tol: float = 1e-6) -> tuple[bool, float]:
    """``(lambda_2 / lambda_1 <= tol, lambda_2 / lambda_1)``."""
    lam = np.linalg.eigvalsh(W)
    top = lam[-1]
    if top <= 0:
        return False, float("inf")
    ratio = float(max(lam[-2], 0.0) / top) if lam.shape[0] > 1 else 0.0
    return ratio <= tol, ratio


def _cascade_vector(F: np.ndarray, g: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``e`` with ``e^H w = g^H diag(v) F w``."""
    return F.conj().T @ (g * v.conj())


def _margins(chn: ChannelSet, coeffs: StarCoefficients, w: np.ndarray, qos: QosSpec) -> np.ndarray:
    """Constraint margins on noise-normalized channels (rates in bits, SINR relative)."""
    fw = chn.F @ w
    out = []
    for h, g, v in ((chn.h_p, chn.g_p, coeffs.v_r), (chn.h_s, chn.g_s, coeffs.v_t)):
        d = h.conj() @ w
        c = g.conj() @ (v * fw)
        rate = 0.5 * (np.log2(1 + np.abs(d + c) ** 2) + np.log2(1 + np.abs(d - c) ** 2))
        out.append(rate - qos.rate_min)
    d = chn.h_s.conj() @ w
    c = chn.g_s.conj() @ (coeffs.v_t * fw)
    sinr = qos.symbol_ratio * np.abs(c) ** 2 / (qos.sic_mu * np.abs(d) ** 2 + 1.0)
    out.append(sinr / max(qos.sinr_min, 1e-300) - 1.0 if qos.sinr_min > 0 else sinr * 0 + np.inf)
    return np.concatenate(out)


def restore_feasibility(chn: ChannelSet, coeffs: StarCoefficients, w: np.ndarray, qos: QosSpec,
                        max_scale: float = 1.0 + 1e-6) -> np.ndarray | None:
    """Scale ``w`` up by the least factor (at most ``max_scale``) that meets every target.

    Solver tolerances can leave an iterate a hair short of the targets.
    """
    def ok(t):
        return bool(np.all(_margins(chn, coeffs, t * w, qos) >= 0))

    if ok(1.0):
        return w
    if not ok(max_scale):
        return None
    lo, hi = 1.0, max_scale
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi * w


@dataclass
class BeamformingResult:
    W: np.ndarray
    w: np.ndarray
    power: float
    rank_ratio: float
    randomized: bool = False
    status: str = "optimal"


def solve_beamforming(channels: ChannelSet, coeffs: StarCoefficients, qos: QosSpec, *,
                      tol: Tolerances = Tolerances(), rank_tol: float = 1e-4,
                      rng: np.random.Generator | None = None, randomizations: int = 100,
                      normalized: bool = False) -> BeamformingResult:
    """Minimum-power broadcast beamformer for fixed coefficients.

    Raises
    ------
    SubproblemInfeasible
        No beamformer meets the QoS for these coefficients.
    SubproblemFailure
        The conic solver stopped without a certificate.
    """
    chn = channels if normalized else normalize_noise(channels, qos)
    n = chn.dims[0]
    prog = ConicProgram()
    W = prog.hermitian_psd("W", n)
    target = 2.0 ** qos.rate_min
    for h, g, v in ((chn.h_p, chn.g_p, coeffs.v_r), (chn.h_s, chn.g_s, coeffs.v_t)):
        for hk, gk in zip(h, g):
            f = _cascade_vector(chn.F, gk, v)
            e1, e2 = hk + f, hk - f
            prog.add_rotated_soc(1.0 + W.inner(np.outer(e1, e1.conj())),
                                 1.0 + W.inner(np.outer(e2, e2.conj())),
                                 Affine.constant(target))
    if qos.sinr_min > 0:
        for hq, gq in zip(chn.h_s, chn.g_s):
            f = _cascade_vector(chn.F, gq, coeffs.v_t)
            R = np.outer(f, f.conj())
            H = np.outer(hq, hq.conj())
            prog.add_nonneg(qos.symbol_ratio * W.inner(R) - qos.sinr_min * qos.sic_mu * W.inner(H)
                            - qos.sinr_min)
    prog.minimize(W.trace())
    sol = prog.solve(tol)
    if sol.status == "infeasible":
        raise SubproblemInfeasible(f"beamforming program infeasible ({sol.solver_status})")
    if not sol.ok:
        raise SubproblemFailure(f"beamforming program: {sol.solver_status}")
    Wv = sol["W"]
    lam, u = np.linalg.eigh(Wv)
    _, ratio = verify_rank_one(Wv, rank_tol)
    w = np.sqrt(max(lam[-1], 0.0)) * u[:, -1]
    randomized = False

    def scale_for(x):
        return bisect_scale(lambda t: bool(np.all(_margins(chn, coeffs, t * x, qos) >= 0)))

    if ratio > rank_tol:
        cand = randomize_rank_one(Wv, scale_for, rng or np.random.default_rng(0), randomizations)
        if cand is not None:
            w, randomized = cand, True
    w = restore_feasibility(chn, coeffs, w, qos)
    if w is None:
        raise SubproblemFailure("could not restore feasibility of the extracted beamformer")
    return BeamformingResult(Wv, w, float(np.vdot(w, w).real), ratio, randomized)


# -- coefficient step ---------------------------------------------------------

def rate_bound_terms(d: complex, row: np.ndarray, v0: np.ndarray):
    """Affine pieces of the two concave log arguments for one receiver.

    With ``a = row @ v`` and ``a0 = row @ v0`` the arguments are
    ``c + 2 Re{u_plus^* a}`` and ``c + 2 Re{u_minus^* a}``.
    """
    a0 = complex(row @ v0)
    return tangent_log_terms(d, a0)


def rate_lower_bound(d: complex, row: np.ndarray, v: np.ndarray, v0: np.ndarray) -> float:
    """Concave minorant of the two-branch rate, in bits, tight at ``v0``."""
    c, up, um = rate_bound_terms(d, row, v0)
    a = complex(row @ v)
    arg1 = c + 2 * np.real(np.conj(up) * a)
    arg2 = c + 2 * np.real(np.conj(um) * a)
    if min(arg1, arg2) <= 0.0:
        return -np.inf  # outside the domain of the concave extension
    return float(0.5 * (np.log2(arg1) + np.log2(arg2)))


def sinr_lower_bound(d: complex, row: np.ndarray, v: np.ndarray, v0: np.ndarray,
                     symbol_ratio: float, mu: float) -> float:
    """Affine minorant of the SINR, tight at ``v0``."""
    a0 = complex(row @ v0)
    a = complex(row @ v)
    return float(symbol_ratio / (mu * abs(d) ** 2 + 1.0)
                 * (2 * np.real(np.conj(a0) * a) - abs(a0) ** 2))


@dataclass
class CoefficientResult:
    coefficients: StarCoefficients
    alpha: np.ndarray
    rounds: int
    objectives: list = field(default_factory=list)
    status: str = "optimal"
    message: str = ""


def _coefficient_round(chn: ChannelSet, w: np.ndarray, qos: QosSpec, v0: StarCoefficients,
                       mode: str, state: PddState | None, aux: AuxCoefficients | None,
                       tol: Tolerances, hold: bool = False):
    n, m, k_pu, q_su = chn.dims
    prog = ConicProgram()
    cv = CoefficientVars(prog, m, mode)
    cv.add_element_constraints()
    n_alpha = k_pu + 2 * q_su
    alpha = prog.variable("alpha", n_alpha)
    if hold:
        prog.add_nonneg(alpha)
    fw = chn.F @ w
    idx = 0
    for side, h, g, v in (("r", chn.h_p, chn.g_p, v0.v_r), ("t", chn.h_s, chn.g_s, v0.v_t)):
        for hk, gk in zip(h, g):
            d = complex(hk.conj() @ w)
            row = gk.conj() * fw
            c, up, um = rate_bound_terms(d, row, v)
            t = prog.variable(f"t{idx}", 2)
            prog.add_exponential_cone(t[0], c + 2.0 * cv.re(side, np.conj(up) * row))
            prog.add_exponential_cone(t[1], c + 2.0 * cv.re(side, np.conj(um) * row))
            prog.add_nonneg(t[0] + t[1] - 2.0 * LN2 * (qos.rate_min + alpha[idx]))
            idx += 1
    for hq, gq in zip(chn.h_s, chn.g_s):
        d = complex(hq.conj() @ w)
        row = gq.conj() * fw
        a0 = complex(row @ v0.v_t)
        scale = qos.symbol_ratio / (qos.sic_mu * abs(d) ** 2 + 1.0)
        if qos.sinr_min > 0:
            prog.add_nonneg(scale * (2.0 * cv.re("t", np.conj(a0) * row) - abs(a0) ** 2)
                            - qos.sinr_min - alpha[idx])
        else:
            prog.add_eq(alpha[idx])
        idx += 1
    objective = -alpha.sum()
    if state is not None:
        s = cv.penalty(aux.v_r + state.rho * state.lam_r, aux.v_t + state.rho * state.lam_t)
        objective = objective + s / (2.0 * state.rho)
    prog.minimize(objective)
    sol = prog.solve(tol)
    if not sol.ok:
        return None, None, None, sol.solver_status
    return cv.extract(sol.values), sol["alpha"], sol.objective, sol.solver_status


def solve_coefficients(channels: ChannelSet, w: np.ndarray, qos: QosSpec,
                       state: PddState | None, v_current: StarCoefficients,
                       aux: AuxCoefficients | None, *, mode: str = COUPLED,
                       max_rounds: int = 30, sca_tol: float = 1e-4,
                       tol: Tolerances = Tolerances(), normalized: bool = False,
                       hold: bool = False) -> CoefficientResult:
    """Successive convex approximation for the coefficients at fixed ``w``.

    The residuals are free in sign.  With ``hold`` they are kept
    nonnegative, so a ``w`` that is feasible at ``v_current`` stays feasible
    at every iterate.  A conic failure returns the last good iterate with
    the solver status in ``message``.
    """
    chn = channels if normalized else normalize_noise(channels, qos)
    v0 = v_current
    objectives = []
    alpha = np.zeros(0)
    for rnd in range(1, max_rounds + 1):
        v_new, a_new, obj, raw = _coefficient_round(chn, w, qos, v0, mode, state, aux, tol, hold)
        if v_new is None:
            return CoefficientResult(v0, alpha, rnd - 1, objectives, "numerical-failure",
                                     f"round {rnd}: {raw}")
        v0, alpha = v_new, a_new
        objectives.append(obj)
        if len(objectives) > 1 and objectives[-2] - obj < sca_tol * (1.0 + abs(obj)):
            return CoefficientResult(v0, alpha, rnd, objectives)
    return CoefficientResult(v0, alpha, max_rounds, objectives, "max-iterations")


# -- full solver ------------------------------------------------------------------

@dataclass
class BroadcastSolution:
    status: str
    w: np.ndarray | None
    coefficients: StarCoefficients
    power: float
    trace: list[TraceRow]
    report: FeasibilityReport | None
    outer_iterations: int
    inner_iterations: int
    delta: float
    rank_ratios: list[float] = field(default_factory=list)
    randomized: int = 0
    message: str = ""
    mode: str = COUPLED

    @property
    def power_dbm(self) -> float:
        return float(watt_to_dbm(self.power)) if self.power > 0 else float("nan")

    @property
    def beamformer(self) -> Beamformer | None:
        return None if self.w is None else Beamformer.broadcast(self.w)

    @property
    def feasible(self) -> bool:
        return self.report is not None and self.report.passed


def solve_p1(channels: ChannelSet, qos: QosSpec, options: SolverOptions | None = None,
             init: StarCoefficients | None = None) -> BroadcastSolution:
    """Minimize broadcast transmit power jointly over ``w`` and the coefficients."""
    options = options or SolverOptions()
    chn = normalize_noise(channels, qos)
    m = chn.dims[1]
    rank_ratios: list[float] = []
    randomized = [0]
    rng = np.random.default_rng([options.seed, 7])

    def beam_step(coeffs, prev):
        res = solve_beamforming(chn, coeffs, qos, tol=options.tolerances, rank_tol=options.rank_tol,
                                rng=rng, randomizations=options.randomizations, normalized=True)
        rank_ratios.append(res.rank_ratio)
        randomized[0] += int(res.randomized)
        # a randomized candidate can be worse than the previous iterate, which
        # the coefficient step kept feasible
        if prev is not None and res.randomized:
            kept = restore_feasibility(chn, coeffs, prev, qos)
            if kept is not None and np.vdot(kept, kept).real < res.power:
                return kept
        return res.w

    def coeff_step(w, coeffs, state, aux, hold=False):
        res = solve_coefficients(chn, w, qos, state, coeffs, aux, mode=options.mode,
                                 max_rounds=options.max_sca, sca_tol=options.sca_tol,
                                 tol=options.tolerances, normalized=True, hold=hold)
        if hold and res.status == "numerical-failure":
            raise SubproblemFailure(res.message)
        return res.coefficients

    def init_coeffs(attempt):
        if init is not None and attempt == 0:
            return init
        return initial_coefficients(m, options.mode, np.random.default_rng([options.seed, attempt]))

    res: BcdResult = run_pdd_bcd(beam_step, coeff_step, init_coeffs,
                                 lambda w: float(np.vdot(w, w).real), options)
    report = None
    if res.beam is not None:
        report = check_feasibility(channels, res.coefficients, Beamformer.broadcast(res.beam), qos,
                                   star=STAR_MODE[options.mode])
    return BroadcastSolution(res.status, res.beam, res.coefficients, res.power, res.trace, report,
                             res.outer_iterations, res.inner_iterations, res.delta, rank_ratios,
                             randomized[0], res.message, options.mode)


__all__ = ["BeamformingResult", "BroadcastSolution", "CoefficientResult", "CONVERGED",
           "rate_lower_bound", "sinr_lower_bound", "solve_beamforming", "solve_coefficients",
           "solve_p1", "verify_rank_one"]
