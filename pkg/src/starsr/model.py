"""System-model types and exact rate / SINR evaluators.

These evaluators are written directly from the received-signal model and
are deliberately independent of the matrices the solvers build, so they
can be used to verify solver output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, ScenarioConfig, db_to_linear

BROADCAST = "broadcast"
UNICAST = "unicast"
MODELS = (BROADCAST, UNICAST)

TWO_PI = 2.0 * np.pi


@dataclass
class StarCoefficients:
    """Reflection (``v_r``) and transmission (``v_t``) coefficient vectors.

    ``phase_r`` / ``phase_t`` optionally pin the phase settings; they matter
    only for elements whose amplitude on that side is exactly zero, where
    ``arg(v)`` carries no information.
    """

    v_r: np.ndarray
    v_t: np.ndarray
    phase_r: np.ndarray | None = None
    phase_t: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.v_r = np.atleast_1d(np.asarray(self.v_r, dtype=complex))
        self.v_t = np.atleast_1d(np.asarray(self.v_t, dtype=complex))
        if self.v_r.shape != self.v_t.shape:
            raise ValueError("v_r and v_t must have the same length")

    @classmethod
    def from_polar(cls, beta_r, theta_r, beta_t, theta_t) -> StarCoefficients:
        shape = np.broadcast(beta_r, theta_r, beta_t, theta_t).shape
        theta_r = np.broadcast_to(np.asarray(theta_r, dtype=float), shape).copy()
        theta_t = np.broadcast_to(np.asarray(theta_t, dtype=float), shape).copy()
        return cls(np.sqrt(beta_r) * np.exp(1j * theta_r), np.sqrt(beta_t) * np.exp(1j * theta_t),
                   theta_r, theta_t)

    @property
    def size(self) -> int:
        return self.v_r.shape[0]

    @property
    def beta_r(self) -> np.ndarray:
        return np.abs(self.v_r) ** 2

    @property
    def beta_t(self) -> np.ndarray:
        return np.abs(self.v_t) ** 2

    @property
    def theta_r(self) -> np.ndarray:
        raw = np.angle(self.v_r) if self.phase_r is None else self.phase_r
        return np.mod(raw, TWO_PI)

    @property
    def theta_t(self) -> np.ndarray:
        raw = np.angle(self.v_t) if self.phase_t is None else self.phase_t
        return np.mod(raw, TWO_PI)

    def phase_gap(self) -> np.ndarray:
        """``|theta_r - theta_t|`` with both phases taken in ``[0, 2 pi)``."""
        return np.abs(self.theta_r - self.theta_t)

    def copy(self) -> StarCoefficients:
        return StarCoefficients(self.v_r.copy(), self.v_t.copy(),
                                None if self.phase_r is None else self.phase_r.copy(),
                                None if self.phase_t is None else self.phase_t.copy())


@dataclass
class Beamformer:
    """Broadcast: one row.  Unicast: one row per primary user."""

    mode: str
    vectors: np.ndarray

    def __post_init__(self) -> None:
        if self.mode not in MODELS:
            raise ValueError(f"unknown mode {self.mode!r}")
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=complex))
        if self.mode == BROADCAST and self.vectors.shape[0] != 1:
            raise ValueError("broadcast beamformer is a single vector")

    @classmethod
    def broadcast(cls, w) -> Beamformer:
        return cls(BROADCAST, np.asarray(w)[None, :])

    @classmethod
    def unicast(cls, ws) -> Beamformer:
        return cls(UNICAST, ws)

    @property
    def w(self) -> np.ndarray:
        return self.vectors[0]

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.vectors) ** 2))


@dataclass
class QosSpec:
    """QoS targets and receiver parameters (linear units, powers in W)."""

    rate_min: float
    sinr_min: float
    symbol_ratio: float
    sic_mu: float
    noise_pu: np.ndarray
    noise_su: np.ndarray
    sic_mu_users: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.noise_pu = np.atleast_1d(np.asarray(self.noise_pu, dtype=float))
        self.noise_su = np.atleast_1d(np.asarray(self.noise_su, dtype=float))
        if self.sic_mu_users is None:
            self.sic_mu_users = np.full(self.noise_pu.shape[0], float(self.sic_mu))
        self.sic_mu_users = np.atleast_1d(np.asarray(self.sic_mu_users, dtype=float))
        if self.symbol_ratio < 1:
            raise ValueError("symbol ratio L must be >= 1")
        if self.rate_min < 0 or self.sinr_min < 0:
            raise ValueError("QoS targets must be nonnegative")
        mus = np.append(self.sic_mu_users, self.sic_mu)
        if np.any(mus < 0) or np.any(mus > 1):
            raise ValueError("SIC coefficients must lie in [0, 1]")
        if np.any(self.noise_pu <= 0) or np.any(self.noise_su <= 0):
            raise ValueError("noise powers must be positive")

    @classmethod
    def from_config(cls, cfg: ScenarioConfig, model: str) -> QosSpec:
        if model == BROADCAST:
            rate, gamma_db = cfg.rate_b_min, cfg.gamma_b_min_db
        elif model == UNICAST:
            rate, gamma_db = cfg.rate_u_min, cfg.gamma_u_min_db
        else:
            raise ValueError(f"unknown model {model!r}")
        return cls(
            rate_min=rate,
            sinr_min=float(db_to_linear(gamma_db)),
            symbol_ratio=cfg.symbol_ratio,
            sic_mu=cfg.sic_mu,
            noise_pu=np.full(cfg.num_pu, cfg.noise_pu),
            noise_su=np.full(cfg.num_su, cfg.noise_su),
        )

    def subset_users(self, pu=None, su=None) -> QosSpec:
        pu = slice(None) if pu is None else np.atleast_1d(pu)
        su = slice(None) if su is None else np.atleast_1d(su)
        return QosSpec(self.rate_min, self.sinr_min, self.symbol_ratio, self.sic_mu,
                       self.noise_pu[pu], self.noise_su[su], self.sic_mu_users[pu])


@dataclass
class EffectiveChannels:
    """Direct scalars and cascaded rows for a stack of beamformers.

    ``d_p[k, i] = h_{p,k}^H w_i`` and ``r_p[k, i] @ v = g_{p,k}^H diag(F w_i) v``
    (likewise ``d_s`` / ``r_s`` for the secondary users).
    """

    d_p: np.ndarray  # (K, B)
    r_p: np.ndarray  # (K, B, M)
    d_s: np.ndarray  # (Q, B)
    r_s: np.ndarray  # (Q, B, M)


def effective_channels(channels: ChannelSet, beams) -> EffectiveChannels:
    beams = np.atleast_2d(np.asarray(beams, dtype=complex))
    n, m, _, _ = channels.dims
    if beams.shape[1] != n:
        raise ValueError(f"beamformer length {beams.shape[1]} != N={n}")
    fw = beams @ channels.F.T  # (B, M): F w_i
    return EffectiveChannels(
        d_p=channels.h_p.conj() @ beams.T,
        r_p=channels.g_p.conj()[:, None, :] * fw[None, :, :],
        d_s=channels.h_s.conj() @ beams.T,
        r_s=channels.g_s.conj()[:, None, :] * fw[None, :, :],
    )


def _cascade(channels: ChannelSet, g: np.ndarray, v: np.ndarray, w: np.ndarray) -> complex:
    """``g^H diag(v) F w`` computed with the explicit diagonal matrix."""
    return complex(g.conj() @ np.diag(v) @ channels.F @ w)


def _two_branch_rate(direct, cascade, interference, noise) -> float:
    plus = np.abs(direct + cascade) ** 2 / (interference + noise)
    minus = np.abs(direct - cascade) ** 2 / (interference + noise)
    return float(0.5 * np.log2(1.0 + plus) + 0.5 * np.log2(1.0 + minus))


# -- broadcast --------------------------------------------------------------

def rate_primary_broadcast(k: int, channels: ChannelSet, coeffs: StarCoefficients,
                           w: np.ndarray, qos: QosSpec) -> float:
    d = complex(channels.h_p[k].conj() @ w)
    c = _cascade(channels, channels.g_p[k], coeffs.v_r, w)
    return _two_branch_rate(d, c, 0.0, qos.noise_pu[k])


def rate_secondary_broadcast(q: int, channels: ChannelSet, coeffs: StarCoefficients,
                             w: np.ndarray, qos: QosSpec) -> float:
    d = complex(channels.h_s[q].conj() @ w)
    c = _cascade(channels, channels.g_s[q], coeffs.v_t, w)
    return _two_branch_rate(d, c, 0.0, qos.noise_su[q])


def sinr_secondary_broadcast(q: int, channels: ChannelSet, coeffs: StarCoefficients,
                             w: np.ndarray, qos: QosSpec) -> float:
    d = complex(channels.h_s[q].conj() @ w)
    c = _cascade(channels, channels.g_s[q], coeffs.v_t, w)
    return float(qos.symbol_ratio * abs(c) ** 2 / (qos.sic_mu * abs(d) ** 2 + qos.noise_su[q]))


# -- unicast ----------------------------------------------------------------

def rate_primary_unicast(k: int, channels: ChannelSet, coeffs: StarCoefficients,
                         beams: np.ndarray, qos: QosSpec) -> float:
    beams = np.atleast_2d(beams)
    h, g = channels.h_p[k], channels.g_p[k]
    interference = 0.0
    for i, wi in enumerate(beams):
        if i != k:
            interference += abs(h.conj() @ wi) ** 2 + abs(_cascade(channels, g, coeffs.v_r, wi)) ** 2
    d = complex(h.conj() @ beams[k])
    c = _cascade(channels, g, coeffs.v_r, beams[k])
    return _two_branch_rate(d, c, interference, qos.noise_pu[k])


def sic_weights(order, k: int, mu_users) -> np.ndarray:
    """Residual factors: ``mu_i`` for users decoded before ``k``, 1 otherwise."""
    order = list(order)
    pos = {u: p for p, u in enumerate(order)}
    mu_users = np.asarray(mu_users, dtype=float)
    return np.array([mu_users[i] if pos[i] < pos[k] else 1.0 for i in range(len(order))])


def rate_sic_unicast(q: int, k: int, channels: ChannelSet, coeffs: StarCoefficients,
                     beams: np.ndarray, qos: QosSpec, order) -> float:
    """Rate of decoding ``s_k`` at secondary user ``q`` under the SIC ``order``."""
    beams = np.atleast_2d(beams)
    h, g = channels.h_s[q], channels.g_s[q]
    mu_hat = sic_weights(order, k, qos.sic_mu_users)
    interference = 0.0
    for i, wi in enumerate(beams):
        if i != k:
            interference += (mu_hat[i] * abs(h.conj() @ wi) ** 2
                             + abs(_cascade(channels, g, coeffs.v_t, wi)) ** 2)
    d = complex(h.conj() @ beams[k])
    c = _cascade(channels, g, coeffs.v_t, beams[k])
    return _two_branch_rate(d, c, interference, qos.noise_su[q])


def sinr_secondary_unicast(q: int, channels: ChannelSet, coeffs: StarCoefficients,
                           beams: np.ndarray, qos: QosSpec) -> float:
    beams = np.atleast_2d(beams)
    h, g = channels.h_s[q], channels.g_s[q]
    signal = sum(abs(_cascade(channels, g, coeffs.v_t, wi)) ** 2 for wi in beams)
    residual = sum(qos.sic_mu_users[i] * abs(h.conj() @ wi) ** 2 for i, wi in enumerate(beams))
    return float(qos.symbol_ratio * signal / (residual + qos.noise_su[q]))


def sic_order(channels: ChannelSet, coeffs: StarCoefficients, beams: np.ndarray, q: int) -> tuple:
    """Decode order at SU ``q``: descending ``|h^H w_k|^2 + |g^H Theta_t F w_k|^2``.

    Ties keep the user index order.
    """
    beams = np.atleast_2d(beams)
    gains = [abs(channels.h_s[q].conj() @ wk) ** 2
             + abs(_cascade(channels, channels.g_s[q], coeffs.v_t, wk)) ** 2 for wk in beams]
    return tuple(int(i) for i in sorted(range(len(gains)), key=lambda i: (-gains[i], i)))


# -- feasibility --------------------------------------------------------------

RATE_TOL = 1e-6
SINR_RTOL = 1e-4
STAR_TOL = 1e-6

STAR_COUPLED = "coupled"  # C4, C6, C7
STAR_ENERGY = "energy"  # C4, C6
STAR_FIXED = "fixed"  # beta_r = beta_t = 1/2
STAR_UNIT = "unit"  # single element, |v| <= 1


@dataclass
class ConstraintCheck:
    cid: str
    required: float
    achieved: float
    margin: float
    passed: bool


@dataclass
class FeasibilityReport:
    checks: list[ConstraintCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def worst_margin(self, prefix: str = "") -> float:
        vals = [c.margin for c in self.checks if c.cid.startswith(prefix)]
        return float(min(vals)) if vals else float("inf")

    def by_id(self) -> dict[str, ConstraintCheck]:
        return {c.cid: c for c in self.checks}

    def to_text(self) -> str:
        rows = ["constraint required achieved margin pass"]
        for c in self.checks:
            rows.append(f"{c.cid} {c.required:.12g} {c.achieved:.12g} {c.margin:.6e} {int(c.passed)}")
        return "\n".join(rows) + "\n"

    def to_records(self) -> list[dict]:
        return [dict(id=c.cid, required=c.required, achieved=c.achieved,
                     margin=c.margin, passed=c.passed) for c in self.checks]


def _rate_check(cid, achieved, required, tol) -> ConstraintCheck:
    margin = achieved - required
    return ConstraintCheck(cid, required, achieved, margin, bool(margin >= -tol))


def _sinr_check(cid, achieved, required, rtol) -> ConstraintCheck:
    margin = achieved - required
    return ConstraintCheck(cid, required, achieved, margin, bool(margin >= -rtol * max(required, 1e-300)))


def star_checks(coeffs: StarCoefficients, star: str = STAR_COUPLED, tol: float = STAR_TOL):
    out = []
    br, bt = coeffs.beta_r, coeffs.beta_t
    if star == STAR_UNIT:
        excess = float(np.max(np.abs(coeffs.v_r) ** 2 - 1.0))
        out.append(ConstraintCheck("C4", 1.0, 1.0 + excess, -excess, bool(excess <= tol)))
        same = float(np.max(np.abs(coeffs.v_r - coeffs.v_t)))
        out.append(ConstraintCheck("shared", 0.0, same, -same, bool(same <= tol)))
        return out
    low = float(min(br.min(), bt.min()))
    high = float(max(br.max(), bt.max()))
    c4 = min(low, 1.0 - high)
    out.append(ConstraintCheck("C4", 0.0, c4, c4, bool(c4 >= -tol)))
    c6 = float(np.max(np.abs(br + bt - 1.0)))
    out.append(ConstraintCheck("C6", 0.0, c6, -c6, bool(c6 <= tol)))
    if star == STAR_FIXED:
        dev = float(max(np.max(np.abs(br - 0.5)), np.max(np.abs(bt - 0.5))))
        out.append(ConstraintCheck("fixed-amplitude", 0.0, dev, -dev, bool(dev <= tol)))
    if star == STAR_COUPLED:
        c7 = float(np.max(np.abs(np.cos(coeffs.theta_r - coeffs.theta_t))))
        out.append(ConstraintCheck("C7", 0.0, c7, -c7, bool(c7 <= 1e-3)))
    return out


def check_feasibility(channels: ChannelSet, coeffs: StarCoefficients, beamformer: Beamformer,
                      qos: QosSpec, *, star: str = STAR_COUPLED, order=None,
                      rate_tol: float = RATE_TOL, sinr_rtol: float = SINR_RTOL) -> FeasibilityReport:
    """Per-constraint margins using the exact evaluators; never raises on violation."""
    _, _, K, Q = channels.dims
    report = FeasibilityReport()
    if beamformer.mode == BROADCAST:
        w = beamformer.w
        for k in range(K):
            r = rate_primary_broadcast(k, channels, coeffs, w, qos)
            report.checks.append(_rate_check(f"C1[{k}]", r, qos.rate_min, rate_tol))
        for q in range(Q):
            r = rate_secondary_broadcast(q, channels, coeffs, w, qos)
            report.checks.append(_rate_check(f"C2[{q}]", r, qos.rate_min, rate_tol))
        for q in range(Q):
            s = sinr_secondary_broadcast(q, channels, coeffs, w, qos)
            report.checks.append(_sinr_check(f"C3[{q}]", s, qos.sinr_min, sinr_rtol))
    else:
        beams = beamformer.vectors
        for k in range(K):
            r = rate_primary_unicast(k, channels, coeffs, beams, qos)
            report.checks.append(_rate_check(f"C13[{k}]", r, qos.rate_min, rate_tol))
        for q in range(Q):
            oq = order[q] if order is not None else sic_order(channels, coeffs, beams, q)
            for k in range(K):
                r = rate_sic_unicast(q, k, channels, coeffs, beams, qos, oq)
                report.checks.append(_rate_check(f"C14[{q},{k}]", r, qos.rate_min, rate_tol))
        for q in range(Q):
            s = sinr_secondary_unicast(q, channels, coeffs, beams, qos)
            report.checks.append(_sinr_check(f"C15[{q}]", s, qos.sinr_min, sinr_rtol))
    report.checks.extend(star_checks(coeffs, star))
    return report
