"""Penalty dual decomposition machinery for the coupled STAR coefficients.

The auxiliary copy ``v~`` always lives exactly on the coupled STAR set
(``beta_r + beta_t = 1`` and ``theta_r - theta_t = +-pi/2``).  The actual
coefficients ``v`` are pulled towards it by an augmented-Lagrangian term.
With ``phi = rho * lam - v`` the auxiliary problem is

    min  sum_i Re{ phi_i^H v~_i }

which is solved by alternating the closed-form phase and amplitude updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import StarCoefficients

TWO_PI = 2.0 * np.pi
HALF_PI = 0.5 * np.pi


@dataclass
class PddState:
    """Dual vectors, penalty and violation bookkeeping of the outer loop."""

    lam_r: np.ndarray
    lam_t: np.ndarray
    rho: float = 1.0
    eta: float = 10.0
    delta: float = float("inf")
    c_bar: float = 0.1
    eps: float = 1e-4

    def __post_init__(self) -> None:
        self.lam_r = np.asarray(self.lam_r, dtype=complex)
        self.lam_t = np.asarray(self.lam_t, dtype=complex)
        if self.rho <= 0:
            raise ValueError("penalty rho must be positive")
        if not 0 < self.c_bar < 1:
            raise ValueError("shrink factor must lie in (0, 1)")

    @classmethod
    def initial(cls, size: int, **kw) -> PddState:
        return cls(np.zeros(size, complex), np.zeros(size, complex), **kw)

    @property
    def converged(self) -> bool:
        return self.delta < self.eps

    def phi(self, coeffs: StarCoefficients) -> tuple[np.ndarray, np.ndarray]:
        return self.rho * self.lam_r - coeffs.v_r, self.rho * self.lam_t - coeffs.v_t


@dataclass
class AuxCoefficients:
    """Auxiliary coefficients on the coupled STAR set."""

    beta_r: np.ndarray
    beta_t: np.ndarray
    theta_r: np.ndarray
    theta_t: np.ndarray
    objective_trace: list = field(default_factory=list)

    @property
    def v_r(self) -> np.ndarray:
        return np.sqrt(self.beta_r) * np.exp(1j * self.theta_r)

    @property
    def v_t(self) -> np.ndarray:
        return np.sqrt(self.beta_t) * np.exp(1j * self.theta_t)

    def to_coefficients(self) -> StarCoefficients:
        return StarCoefficients(self.v_r, self.v_t, self.theta_r.copy(), self.theta_t.copy())


def aux_objective(phi_r, phi_t, v_r, v_t) -> float:
    """``sum_i Re{phi_i^H v_i}`` (the part of the projection that depends on ``v~``)."""
    return float(np.real(np.vdot(phi_r, v_r) + np.vdot(phi_t, v_t)))


def _wrap(x):
    return np.mod(x, TWO_PI)


def optimal_phases(psi_r, psi_t) -> tuple[np.ndarray, np.ndarray]:
    """Coupled phases minimizing ``Re{psi_r e^{j theta_r} + psi_t e^{j theta_t}}``.

    ``psi_m = sqrt(beta_m) * conj(phi_m)``.  Two coupled candidates are
    formed per element (``theta_t = theta_r +- pi/2``) and the one with the
    smaller objective is kept, the ``+`` branch on ties.  Elements with
    ``psi_r = psi_t = 0`` get ``(0, pi/2)``.
    """
    psi_r = np.atleast_1d(np.asarray(psi_r, dtype=complex))
    psi_t = np.atleast_1d(np.asarray(psi_t, dtype=complex))
    th1 = _wrap(np.pi - np.angle(psi_r + 1j * psi_t))
    th2 = _wrap(np.pi - np.angle(psi_r - 1j * psi_t))
    cand1 = (th1, _wrap(th1 + HALF_PI))
    cand2 = (th2, _wrap(th2 - HALF_PI))

    def obj(th_r, th_t):
        return np.real(psi_r * np.exp(1j * th_r) + psi_t * np.exp(1j * th_t))

    pick2 = obj(*cand2) < obj(*cand1)
    theta_r = np.where(pick2, cand2[0], cand1[0])
    theta_t = np.where(pick2, cand2[1], cand1[1])
    flat = (psi_r == 0) & (psi_t == 0)
    theta_r = np.where(flat, 0.0, theta_r)
    theta_t = np.where(flat, HALF_PI, theta_t)
    return theta_r, theta_t


def amplitude_angle(xi) -> np.ndarray:
    """Piecewise optimal ``omega`` in ``[0, pi/2]`` for the angle ``xi``.

    ``sqrt(beta_r) = sin(omega)`` and ``sqrt(beta_t) = cos(omega)``.
    """
    xi = np.asarray(xi, dtype=float)
    return np.where(xi < -HALF_PI, -HALF_PI - xi, np.where(xi < 0.25 * np.pi, 0.0, HALF_PI))


def optimal_amplitudes(psibar_r, psibar_t) -> tuple[np.ndarray, np.ndarray]:
    """Energy split minimizing ``a_r sqrt(beta_r) + a_t sqrt(beta_t)``.

    ``psibar_m = e^{j theta_m} conj(phi_m)`` and ``a = Re(psibar)``.  The
    angle ``xi`` is computed with ``arctan2`` which equals
    ``sgn(a_t) arccos(a_r / |a|)`` except on the half-line ``a_t = 0, a_r < 0``
    where ``sgn`` would give 0 instead of ``pi``.  ``a = 0`` gives
    ``omega = 0``.
    """
    a_r = np.real(np.atleast_1d(np.asarray(psibar_r, dtype=complex)))
    a_t = np.real(np.atleast_1d(np.asarray(psibar_t, dtype=complex)))
    xi = np.arctan2(a_t, a_r)
    omega = np.where((a_r == 0) & (a_t == 0), 0.0, amplitude_angle(xi))
    beta_r = np.sin(omega) ** 2
    beta_t = 1.0 - beta_r
    return beta_r, beta_t


def solve_aux(phi_r, phi_t, *, tol: float = 1e-8, max_rounds: int = 100,
              start: AuxCoefficients | None = None) -> AuxCoefficients:
    """Alternate the phase and amplitude closed forms.

    Starts from an even split unless ``start`` is given, because starting at
    a corner (``beta = 0``) leaves the phases of the idle side undetermined.
    Stops once the objective drops by less than ``tol``.
    """
    phi_r = np.atleast_1d(np.asarray(phi_r, dtype=complex))
    phi_t = np.atleast_1d(np.asarray(phi_t, dtype=complex))
    if start is None:
        beta_r = np.full(phi_r.shape, 0.5)
        beta_t = np.full(phi_r.shape, 0.5)
    else:
        beta_r, beta_t = start.beta_r.copy(), start.beta_t.copy()
    trace = []
    prev = np.inf
    theta_r = theta_t = None
    for _ in range(max_rounds):
        theta_r, theta_t = optimal_phases(np.sqrt(beta_r) * phi_r.conj(),
                                          np.sqrt(beta_t) * phi_t.conj())
        new_r, new_t = optimal_amplitudes(np.exp(1j * theta_r) * phi_r.conj(),
                                          np.exp(1j * theta_t) * phi_t.conj())
        obj_new = aux_objective(phi_r, phi_t, np.sqrt(new_r) * np.exp(1j * theta_r),
                                np.sqrt(new_t) * np.exp(1j * theta_t))
        obj_old = aux_objective(phi_r, phi_t, np.sqrt(beta_r) * np.exp(1j * theta_r),
                                np.sqrt(beta_t) * np.exp(1j * theta_t))
        # the amplitude step is exact, so this only guards against rounding
        if obj_new <= obj_old:
            beta_r, beta_t = new_r, new_t
            obj = obj_new
        else:
            obj = obj_old
        trace.append(obj)
        if prev - obj < tol:
            break
        prev = obj
    return AuxCoefficients(beta_r, beta_t, theta_r, theta_t, trace)


def project_uncoupled(phi_r, phi_t) -> AuxCoefficients:
    """Projection onto ``|v_r,m|^2 + |v_t,m|^2 = 1`` with free phases.

    Minimizing ``Re{phi^H v~}`` over the unit sphere per element gives
    ``v~_m = -phi_m / ||phi_m||``.  Zero ``phi_m`` gives the canonical
    ``(0, 1)`` split with zero phases.
    """
    phi_r = np.atleast_1d(np.asarray(phi_r, dtype=complex))
    phi_t = np.atleast_1d(np.asarray(phi_t, dtype=complex))
    norm = np.sqrt(np.abs(phi_r) ** 2 + np.abs(phi_t) ** 2)
    safe = np.where(norm > 0, norm, 1.0)
    v_r = np.where(norm > 0, -phi_r / safe, 0.0)
    v_t = np.where(norm > 0, -phi_t / safe, 1.0)
    beta_r = np.abs(v_r) ** 2
    return AuxCoefficients(beta_r, 1.0 - beta_r, _wrap(np.angle(v_r)), _wrap(np.angle(v_t)))


def project_fixed_split(phi_r, phi_t) -> AuxCoefficients:
    """Projection onto ``|v_r,m|^2 = |v_t,m|^2 = 1/2`` with free phases."""
    phi_r = np.atleast_1d(np.asarray(phi_r, dtype=complex))
    phi_t = np.atleast_1d(np.asarray(phi_t, dtype=complex))
    half = np.full(phi_r.shape, 0.5)
    return AuxCoefficients(half, half.copy(), _wrap(np.angle(-phi_r)), _wrap(np.angle(-phi_t)))


def violation(coeffs: StarCoefficients, aux: AuxCoefficients) -> float:
    return float(max(np.max(np.abs(aux.v_r - coeffs.v_r)), np.max(np.abs(aux.v_t - coeffs.v_t))))


def update_duals(state: PddState, coeffs: StarCoefficients, aux_v: StarCoefficients) -> PddState:
    """``lam <- lam + (v~ - v) / rho``."""
    return replace(state,
                   lam_r=state.lam_r + (aux_v.v_r - coeffs.v_r) / state.rho,
                   lam_t=state.lam_t + (aux_v.v_t - coeffs.v_t) / state.rho)


def update_penalty(state: PddState) -> PddState:
    """``rho <- c_bar * rho``."""
    return replace(state, rho=state.c_bar * state.rho)


def pdd_outer_step(state: PddState, coeffs: StarCoefficients, aux_v: StarCoefficients) -> PddState:
    """Measure the violation, then take a dual step or shrink the penalty."""
    delta = float(max(np.max(np.abs(aux_v.v_r - coeffs.v_r), initial=0.0),
                      np.max(np.abs(aux_v.v_t - coeffs.v_t), initial=0.0)))
    if delta <= state.eta:
        new = update_duals(state, coeffs, aux_v)
    else:
        new = update_penalty(state)
    return replace(new, delta=delta, eta=0.9 * delta)
