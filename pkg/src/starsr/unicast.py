"""Transmit-power minimization with one independent stream per primary user.

Beamforming step: successive convex approximation over ``K`` Hermitian PSD
blocks ``W_k``.  The logarithm of each interference term is linearized and
the two retained logarithms go through exponential cones.  When the
expansion point is infeasible a slack phase with an escalating penalty is
run first.

Coefficient step: the quotient-form minorant of ``ln(1 + |x|^2 / b)``
makes every rate constraint a convex quadratic one (a rotated cone), the
SINR constraint is linearized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, watt_to_dbm
from .conic import Affine, ConicProgram, Tolerances
from .engine import (SolverOptions, SubproblemFailure, SubproblemInfeasible, TraceRow,
                     run_pdd_bcd)
from .model import (Beamformer, FeasibilityReport, QosSpec, StarCoefficients,
                    check_feasibility, sic_weights)
from .pdd import AuxCoefficients, PddState
from .sca import (COUPLED, CoefficientVars, initial_coefficients, normalize_noise,
                  quotient_bound)
from .broadcast import STAR_MODE, verify_rank_one

LN2 = np.log(2.0)
SLACK_TOL = 1e-9


def verify_rank_k(blocks, tol: float = 1e-6) -> tuple[bool, list[float]]:
    """Every block passes :func:`verify_rank_one` at ``tol``."""
    ratios = [verify_rank_one(b, tol)[1] for b in blocks]
    return all(r <= tol for r in ratios), ratios


def default_order(num_pu: int, num_su: int) -> tuple:
    return tuple(tuple(range(num_pu)) for _ in range(num_su))


def gain_order(chn: ChannelSet, coeffs: StarCoefficients, beams: np.ndarray) -> tuple:
    """Per-SU decoding order by descending composite gain, ties by index."""
    fw = beams @ chn.F.T  # (K, M)
    out = []
    for hq, gq in zip(chn.h_s, chn.g_s):
        gains = np.abs(beams @ hq.conj()) ** 2 + np.abs(fw @ (gq.conj() * coeffs.v_t)) ** 2
        out.append(tuple(int(i) for i in sorted(range(len(gains)), key=lambda i: (-gains[i], i))))
    return tuple(out)


# -- exact margins on normalized channels ---------------------------------------

def _branch_terms(h, g, v, beams, fw):
    """Direct and cascaded scalars of every stream at one receiver."""
    d = beams @ h.conj()
    c = fw @ (g.conj() * v)
    return d, c


def unicast_margins(chn: ChannelSet, coeffs: StarCoefficients, beams: np.ndarray,
                    qos: QosSpec, order) -> np.ndarray:
    """``[C13 (K), C14 (Q*K, row-major by SU), C15 (Q, relative)]`` margins."""
    beams = np.atleast_2d(beams)
    K = beams.shape[0]
    fw = beams @ chn.F.T
    out = []

    def rate(d, c, interference, k):
        return 0.5 * (np.log2(1 + abs(d[k] + c[k]) ** 2 / (1 + interference))
                      + np.log2(1 + abs(d[k] - c[k]) ** 2 / (1 + interference)))

    for k, (h, g) in enumerate(zip(chn.h_p, chn.g_p)):
        d, c = _branch_terms(h, g, coeffs.v_r, beams, fw)
        p = np.abs(d) ** 2 + np.abs(c) ** 2
        out.append(rate(d, c, p.sum() - p[k], k) - qos.rate_min)
    for q, (h, g) in enumerate(zip(chn.h_s, chn.g_s)):
        d, c = _branch_terms(h, g, coeffs.v_t, beams, fw)
        for k in range(K):
            mu_hat = sic_weights(order[q], k, qos.sic_mu_users)
            p = mu_hat * np.abs(d) ** 2 + np.abs(c) ** 2
            out.append(rate(d, c, p.sum() - p[k], k) - qos.rate_min)
    for h, g in zip(chn.h_s, chn.g_s):
        d, c = _branch_terms(h, g, coeffs.v_t, beams, fw)
        sinr = qos.symbol_ratio * np.sum(np.abs(c) ** 2) / (np.sum(qos.sic_mu_users * np.abs(d) ** 2) + 1)
        out.append(sinr / qos.sinr_min - 1.0 if qos.sinr_min > 0 else np.inf)
    return np.array(out, dtype=float)


# largest common amplitude scaling tried on an infeasible warm start
WARM_SCALE = 100.0


def _restore(chn, coeffs, beams, qos, order, max_scale=1.0 + 1e-6):
    """Common up-scaling of all beams by the least factor meeting every target."""
    def ok(t):
        return bool(np.all(unicast_margins(chn, coeffs, t * beams, qos, order) >= 0))

    if ok(1.0):
        return beams
    if not ok(max_scale):
        return None
    lo, hi = 1.0, max_scale
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi * beams


# -- beamforming step ----------------------------------------------------------

@dataclass
class UnicastBeamResult:
    blocks: np.ndarray  # (K, N, N)
    beams: np.ndarray  # (K, N)
    power: float
    rank_ratios: list
    rounds: int
    slack_rounds: int
    objectives: list = field(default_factory=list)
    randomized: bool = False


def _outer(x):
    return np.outer(x, x.conj())


def _receiver_mats(h, g, F, v):
    f = F.conj().T @ (g * v.conj())
    return _outer(h), _outer(f), _outer(h + f), _outer(h - f)


def beam_rate_bound(h, g, F, v, blocks, Wx, k, weights) -> float:
    """Minorant of stream ``k``'s two-branch rate in bits as a function of the blocks.

    The interference log is linearized at ``Wx``; ``weights[i]`` scales the
    direct interference of stream ``i``.  Tight when ``blocks == Wx``.
    """
    H, Fm, E1, E2 = _receiver_mats(h, g, F, v)
    others = [i for i in range(len(blocks)) if i != k]
    interf = sum(np.real(np.trace((weights[i] * H + Fm) @ blocks[i])) for i in others)
    interf_x = sum(np.real(np.trace((weights[i] * H + Fm) @ Wx[i])) for i in others)
    keep = 0.5 * (np.log1p(np.real(np.trace(E1 @ blocks[k])) + interf)
                  + np.log1p(np.real(np.trace(E2 @ blocks[k])) + interf))
    lin = np.log1p(interf_x) + (interf - interf_x) / (1.0 + interf_x)
    return float((keep - lin) / LN2)


def _beam_round(chn, coeffs, qos, order, Wx, penalty, tol):
    n, m, K, Q = chn.dims
    prog = ConicProgram()
    Ws = [prog.hermitian_psd(f"W{k}", n) for k in range(K)]
    n_cons = K + K * Q
    slack = prog.variable("slack", n_cons) if penalty is not None else None
    if slack is not None:
        prog.add_nonneg(slack)

    def tr(W, A, Ax):
        return W.inner(A), float(np.real(np.trace(A @ Ax)))

    idx = 0
    receivers = [(chn.h_p[k], chn.g_p[k], coeffs.v_r, k, None) for k in range(K)]
    receivers += [(chn.h_s[q], chn.g_s[q], coeffs.v_t, k, q) for q in range(Q) for k in range(K)]
    for h, g, v, k, q in receivers:
        H, Fm, E1, E2 = _receiver_mats(h, g, chn.F, v)
        mu_hat = np.ones(K) if q is None else sic_weights(order[q], k, qos.sic_mu_users)
        interf = Affine.constant(0.0)
        interf_x = 0.0
        for i in range(K):
            if i == k:
                continue
            A = mu_hat[i] * H + Fm
            expr, val = tr(Ws[i], A, Wx[i])
            interf = interf + expr
            interf_x += val
        t = prog.variable(f"t{idx}", 2)
        prog.add_exponential_cone(t[0], 1.0 + Ws[k].inner(E1) + interf)
        prog.add_exponential_cone(t[1], 1.0 + Ws[k].inner(E2) + interf)
        lin = np.log1p(interf_x) + (interf - interf_x) / (1.0 + interf_x)
        lhs = 0.5 * (t[0] + t[1]) - lin - LN2 * qos.rate_min
        if slack is not None:
            lhs = lhs + slack[idx]
        prog.add_nonneg(lhs)
        idx += 1
    if qos.sinr_min > 0:
        for hq, gq in zip(chn.h_s, chn.g_s):
            H, Fm, _, _ = _receiver_mats(hq, gq, chn.F, coeffs.v_t)
            lhs = Affine.constant(-qos.sinr_min)
            for k in range(K):
                lhs = lhs + Ws[k].inner(qos.symbol_ratio * Fm - qos.sinr_min * qos.sic_mu_users[k] * H)
            # linear in the blocks, so it never needs a slack
            prog.add_nonneg(lhs)
    power = Affine.stack([W.trace() for W in Ws]).sum()
    prog.minimize(power if slack is None else power + penalty * slack.sum())
    sol = prog.solve(tol)
    if sol.status == "infeasible":
        raise SubproblemInfeasible(f"unicast beamforming round infeasible ({sol.solver_status})")
    if not sol.ok:
        raise SubproblemFailure(f"unicast beamforming round: {sol.solver_status}")
    blocks = np.array([sol[f"W{k}"] for k in range(K)])
    slack_val = sol["slack"] if slack is not None else np.zeros(0)
    return blocks, float(sum(np.trace(b).real for b in blocks)), slack_val


def _rank_one_beams(blocks):
    beams, ratios = [], []
    for b in blocks:
        lam, u = np.linalg.eigh(b)
        beams.append(np.sqrt(max(lam[-1], 0.0)) * u[:, -1])
        ratios.append(verify_rank_one(b, np.inf)[1])
    return np.array(beams), ratios


def _randomize(chn, coeffs, qos, order, blocks, rng, count):
    roots = []
    for b in blocks:
        lam, u = np.linalg.eigh(b)
        roots.append(u * np.sqrt(np.clip(lam, 0.0, None)))
    best, best_pow = None, np.inf
    n = blocks.shape[1]
    for _ in range(count):
        beams = np.array([r @ ((rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2))
                          for r in roots])
        hi = 1.0
        ok = lambda t: bool(np.all(unicast_margins(chn, coeffs, t * beams, qos, order) >= 0))
        grow = 0
        while not ok(hi) and grow < 40:
            hi *= 2.0
            grow += 1
        if not ok(hi):
            continue
        lo = 0.0
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            lo, hi = (lo, mid) if ok(mid) else (mid, hi)
        p = hi * hi * float(np.sum(np.abs(beams) ** 2))
        if p < best_pow:
            best, best_pow = hi * beams, p
    return best


def solve_beamforming_unicast(channels: ChannelSet, coeffs: StarCoefficients, qos: QosSpec,
                              order, W_init=None, *, max_rounds: int = 30, sca_tol: float = 1e-4,
                              tol: Tolerances = Tolerances(), rank_tol: float = 1e-4,
                              rng: np.random.Generator | None = None, randomizations: int = 100,
                              normalized: bool = False, penalty0: float = 10.0) -> UnicastBeamResult:
    """SCA over per-user PSD blocks for fixed coefficients and decoding order.

    ``W_init`` is a ``(K, N)`` array of beams used as the first expansion
    point; ``None`` starts from zero.  An infeasible start triggers the
    slack phase: the penalty on the slacks grows tenfold per round until
    they vanish, then plain power minimization resumes.
    """
    chn = channels if normalized else normalize_noise(channels, qos)
    n, m, K, Q = chn.dims
    if order is None:
        order = default_order(K, Q)
    beams = np.zeros((K, n), complex) if W_init is None else np.atleast_2d(np.asarray(W_init, complex))
    feasible = False
    if W_init is not None:
        # every rate and SINR grows under a common up-scaling, so a warm start
        # that is only a little short is repaired without the slack phase
        start = _restore(chn, coeffs, beams, qos, order, max_scale=WARM_SCALE)
        feasible = start is not None
        if feasible:
            beams = start
    penalty = None if feasible else penalty0
    objectives: list = []
    slack_rounds = 0
    # relaxation blocks, rank ratios and randomization flag behind ``beams``
    kept = (np.array([_outer(b) for b in beams]), [0.0] * K, False)
    for rnd in range(1, max_rounds + 1):
        Wx = np.array([_outer(b) for b in beams])
        blocks, power, slack = _beam_round(chn, coeffs, qos, order, Wx, penalty, tol)
        new_beams, ratios = _rank_one_beams(blocks)
        randomized = False
        if max(ratios) > rank_tol:
            cand = _randomize(chn, coeffs, qos, order, blocks, rng or np.random.default_rng(0),
                              randomizations)
            if cand is not None:
                new_beams, randomized = cand, True
        if penalty is not None:
            slack_rounds += 1
            beams = new_beams
            if np.max(slack, initial=0.0) <= SLACK_TOL:
                restored = _restore(chn, coeffs, beams, qos, order)
                if restored is not None:
                    beams = restored
                    kept = (blocks, ratios, randomized)
                    penalty = None
                    objectives.append(float(np.sum(np.abs(beams) ** 2)))
                    continue
            penalty *= 10.0
            if penalty > 1e12:
                raise SubproblemInfeasible("slack phase could not reach a feasible beamformer")
            continue
        restored = _restore(chn, coeffs, new_beams, qos, order)
        if restored is None:
            break
        p_new = float(np.sum(np.abs(restored) ** 2))
        p_old = float(np.sum(np.abs(beams) ** 2))
        if p_new > p_old:
            # the expansion point is feasible, keep it
            break
        beams = restored
        kept = (blocks, ratios, randomized)
        objectives.append(p_new)
        if p_old - p_new < sca_tol * p_old:
            break
    else:
        rnd = max_rounds
    if penalty is not None:
        raise SubproblemInfeasible("no feasible beamformer within the round budget")
    blocks, ratios, randomized = kept
    return UnicastBeamResult(blocks, beams, float(np.sum(np.abs(beams) ** 2)), ratios, rnd,
                             slack_rounds, objectives, randomized)


# -- coefficient step -------------------------------------------------------------

def _stream_terms(h, g, v, beams, fw):
    d = beams @ h.conj()  # (K,)
    rows = g.conj()[None, :] * fw  # (K, M): row_i @ v = cascade of stream i
    return d, rows


def rate_quotient_bound(d, rows, k, weights, v, v0) -> float:
    """Minorant of the two-branch rate of stream ``k`` in bits, tight at ``v0``.

    ``weights[i]`` multiplies the direct interference of stream ``i``.
    """
    a = rows @ v
    a0 = rows @ v0
    others = [i for i in range(len(d)) if i != k]
    b = 1.0 + sum(weights[i] * abs(d[i]) ** 2 + abs(a[i]) ** 2 for i in others)
    b0 = 1.0 + sum(weights[i] * abs(d[i]) ** 2 + abs(a0[i]) ** 2 for i in others)
    total = 0.0
    for sgn in (1.0, -1.0):
        total += quotient_bound(d[k] + sgn * a[k], b, d[k] + sgn * a0[k], b0)
    return float(0.5 * total / LN2)


def sinr_unicast_bound(d, rows, v, v0, symbol_ratio, mu_users) -> float:
    a = rows @ v
    a0 = rows @ v0
    num = np.sum(2 * np.real(np.conj(a0) * a) - np.abs(a0) ** 2)
    return float(symbol_ratio * num / (np.sum(mu_users * np.abs(d) ** 2) + 1.0))


@dataclass
class UnicastCoefficientResult:
    coefficients: StarCoefficients
    alpha: np.ndarray
    rounds: int
    objectives: list = field(default_factory=list)
    status: str = "optimal"
    message: str = ""


def _cplx_pair(cv, side, row, const=0j):
    re, im = cv.cplx(side, row)
    return re + const.real, im + const.imag


def _coefficient_round(chn, beams, qos, order, v0: StarCoefficients, mode, state, aux, tol,
                       hold=False):
    n, m, K, Q = chn.dims
    prog = ConicProgram()
    cv = CoefficientVars(prog, m, mode)
    cv.add_element_constraints()
    alpha = prog.variable("alpha", K + K * Q + Q)
    if hold:
        prog.add_nonneg(alpha)
    fw = beams @ chn.F.T
    receivers = [(chn.h_p[k], chn.g_p[k], "r", v0.v_r, k, None) for k in range(K)]
    receivers += [(chn.h_s[q], chn.g_s[q], "t", v0.v_t, k, q) for q in range(Q) for k in range(K)]
    for idx, (h, g, side, v_side, k, q) in enumerate(receivers):
        d, rows = _stream_terms(h, g, v_side, beams, fw)
        weights = np.ones(K) if q is None else sic_weights(order[q], k, qos.sic_mu_users)
        a0 = rows @ v_side
        others = [i for i in range(K) if i != k]
        b0 = 1.0 + sum(weights[i] * abs(d[i]) ** 2 + abs(a0[i]) ** 2 for i in others)
        direct_const = 1.0 + sum(weights[i] * abs(d[i]) ** 2 for i in others)
        const = 0.0
        lin = Affine.constant(0.0)
        quad_parts = []
        c_sum = 0.0
        for sgn in (1.0, -1.0):
            x0 = d[k] + sgn * a0[k]
            z0 = abs(x0) ** 2 / b0
            c = abs(x0) ** 2 / (b0 * (b0 + abs(x0) ** 2))
            c_sum += c
            # 2 Re{x0^* x} / b0 with x = d + sgn * row v
            const += np.log1p(z0) - z0 + 2.0 * np.real(np.conj(x0) * d[k]) / b0
            lin = lin + (2.0 * sgn / b0) * cv.re(side, np.conj(x0) * rows[k])
            re, im = _cplx_pair(cv, side, sgn * rows[k], complex(d[k]))
            quad_parts += [np.sqrt(c) * re, np.sqrt(c) * im]
        for i in others:
            re, im = cv.cplx(side, rows[i])
            quad_parts += [np.sqrt(c_sum) * re, np.sqrt(c_sum) * im]
        rhs = const + lin - c_sum * direct_const - 2.0 * LN2 * (qos.rate_min + alpha[idx])
        prog.add_rotated_soc(rhs, Affine.constant(1.0), Affine.stack(quad_parts))
    base = K + K * Q
    for q, (h, g) in enumerate(zip(chn.h_s, chn.g_s)):
        idx = base + q
        d, rows = _stream_terms(h, g, v0.v_t, beams, fw)
        if qos.sinr_min <= 0:
            prog.add_eq(alpha[idx])
            continue
        a0 = rows @ v0.v_t
        scale = qos.symbol_ratio / (np.sum(qos.sic_mu_users * np.abs(d) ** 2) + 1.0)
        expr = Affine.constant(-scale * float(np.sum(np.abs(a0) ** 2)))
        for k in range(K):
            expr = expr + 2.0 * scale * cv.re("t", np.conj(a0[k]) * rows[k])
        prog.add_nonneg(expr - qos.sinr_min - alpha[idx])
    objective = -alpha.sum()
    if state is not None:
        s = cv.penalty(aux.v_r + state.rho * state.lam_r, aux.v_t + state.rho * state.lam_t)
        objective = objective + s / (2.0 * state.rho)
    prog.minimize(objective)
    sol = prog.solve(tol)
    if not sol.ok:
        return None, None, None, sol.solver_status
    return cv.extract(sol.values), sol["alpha"], sol.objective, sol.solver_status


def solve_coefficients_unicast(channels: ChannelSet, beams: np.ndarray, qos: QosSpec, order,
                               state: PddState | None, v_current: StarCoefficients,
                               aux: AuxCoefficients | None, *, mode: str = COUPLED,
                               max_rounds: int = 30, sca_tol: float = 1e-4,
                               tol: Tolerances = Tolerances(),
                               normalized: bool = False,
                               hold: bool = False) -> UnicastCoefficientResult:
    """SCA for the coefficients at fixed beams.

    Residuals are free in sign unless ``hold`` keeps them nonnegative, which
    preserves feasibility of beams that are feasible at ``v_current``.
    """
    chn = channels if normalized else normalize_noise(channels, qos)
    beams = np.atleast_2d(beams)
    v0 = v_current
    objectives: list = []
    alpha = np.zeros(0)
    for rnd in range(1, max_rounds + 1):
        v_new, a_new, obj, raw = _coefficient_round(chn, beams, qos, order, v0, mode, state, aux, tol,
                                                     hold)
        if v_new is None:
            return UnicastCoefficientResult(v0, alpha, rnd - 1, objectives, "numerical-failure",
                                            f"round {rnd}: {raw}")
        v0, alpha = v_new, a_new
        objectives.append(obj)
        if len(objectives) > 1 and objectives[-2] - obj < sca_tol * (1.0 + abs(obj)):
            return UnicastCoefficientResult(v0, alpha, rnd, objectives)
    return UnicastCoefficientResult(v0, alpha, max_rounds, objectives, "max-iterations")


# -- full solver ------------------------------------------------------------------

@dataclass
class UnicastSolution:
    status: str
    beams: np.ndarray | None
    coefficients: StarCoefficients
    power: float
    trace: list[TraceRow]
    report: FeasibilityReport | None
    order: tuple
    outer_iterations: int
    inner_iterations: int
    delta: float
    rank_ratios: list = field(default_factory=list)
    randomized: int = 0
    message: str = ""
    mode: str = COUPLED

    @property
    def power_dbm(self) -> float:
        return float(watt_to_dbm(self.power)) if self.power > 0 else float("nan")

    @property
    def beamformer(self) -> Beamformer | None:
        return None if self.beams is None else Beamformer.unicast(self.beams)

    @property
    def feasible(self) -> bool:
        return self.report is not None and self.report.passed


def solve_p4(channels: ChannelSet, qos: QosSpec, options: SolverOptions | None = None,
             init: StarCoefficients | None = None) -> UnicastSolution:
    """Minimize the sum power of the per-user beams jointly with the coefficients."""
    options = options or SolverOptions()
    chn = normalize_noise(channels, qos)
    n, m, K, Q = chn.dims
    rank_ratios: list = []
    randomized = [0]
    rng = np.random.default_rng([options.seed, 7])
    current = {"order": default_order(K, Q)}

    def beam_step(coeffs, prev):
        res = solve_beamforming_unicast(chn, coeffs, qos, current["order"], prev,
                                        max_rounds=options.max_beam_sca, sca_tol=options.eps,
                                        tol=options.tolerances, rank_tol=options.rank_tol,
                                        rng=rng, randomizations=options.randomizations,
                                        normalized=True)
        rank_ratios.append(max(res.rank_ratios))
        randomized[0] += int(res.randomized)
        return res.beams

    def coeff_step(beams, coeffs, state, aux, hold=False):
        res = solve_coefficients_unicast(chn, beams, qos, current["order"], state, coeffs, aux,
                                         mode=options.mode, max_rounds=options.max_sca,
                                         sca_tol=options.sca_tol, tol=options.tolerances,
                                         normalized=True, hold=hold)
        if hold and res.status == "numerical-failure":
            raise SubproblemFailure(res.message)
        return res.coefficients

    def init_coeffs(attempt):
        if init is not None and attempt == 0:
            return init
        return initial_coefficients(m, options.mode, np.random.default_rng([options.seed, attempt]))

    def on_pass_start(beams, coeffs):
        if beams is None:
            return False
        new = gain_order(chn, coeffs, beams)
        changed = new != current["order"]
        current["order"] = new
        return changed

    res = run_pdd_bcd(beam_step, coeff_step, init_coeffs,
                      lambda b: float(np.sum(np.abs(b) ** 2)), options, on_pass_start)
    report = None
    if res.beam is not None:
        report = check_feasibility(channels, res.coefficients, Beamformer.unicast(res.beam), qos,
                                   star=STAR_MODE[options.mode], order=current["order"])
    return UnicastSolution(res.status, res.beam, res.coefficients, res.power, res.trace, report,
                           current["order"], res.outer_iterations, res.inner_iterations, res.delta,
                           rank_ratios, randomized[0], res.message, options.mode)
