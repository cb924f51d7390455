"""Shared pieces of the coefficient subproblems.

The complex coefficients enter the conic programs as stacked real vectors
``x = [Re v; Im v]``.  Every helper here maps complex linear forms of ``v``
onto affine expressions in ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet
from .conic import Affine, ConicProgram
from .model import QosSpec, StarCoefficients

COUPLED = "coupled"  # C10/C11 through the closed-form auxiliary update
UNCOUPLED = "uncoupled"  # energy split only, no phase correlation
FIXED_SPLIT = "fixed"  # beta_r = beta_t = 1/2, free phases
SHARED = "shared"  # one coefficient for both sides, |v| <= 1
MODES = (COUPLED, UNCOUPLED, FIXED_SPLIT, SHARED)


def normalize_noise(channels: ChannelSet, qos: QosSpec) -> ChannelSet:
    """Rescale every receiver's channels so its noise power becomes 1."""
    sp = np.sqrt(qos.noise_pu)[:, None]
    ss = np.sqrt(qos.noise_su)[:, None]
    return ChannelSet(channels.h_p / sp, channels.h_s / ss, channels.F,
                      channels.g_p / sp, channels.g_s / ss)


def realify(v: np.ndarray) -> np.ndarray:
    return np.concatenate([v.real, v.imag])


def complexify(x: np.ndarray) -> np.ndarray:
    m = x.shape[0] // 2
    return x[:m] + 1j * x[m:]


def re_row(u: np.ndarray) -> np.ndarray:
    """Real row ``a`` with ``a @ [Re v; Im v] = Re{u @ v}``."""
    return np.concatenate([u.real, -u.imag])


def im_row(u: np.ndarray) -> np.ndarray:
    """Real row ``a`` with ``a @ [Re v; Im v] = Im{u @ v}``."""
    return np.concatenate([u.imag, u.real])


@dataclass
class CoefficientVars:
    """Real-ified coefficient variables of one conic program."""

    prog: ConicProgram
    size: int
    mode: str

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown coefficient mode {self.mode!r}")
        self.x_r = self.prog.variable("v_r", 2 * self.size)
        self.x_t = self.x_r if self.mode == SHARED else self.prog.variable("v_t", 2 * self.size)

    def side(self, which: str) -> Affine:
        return self.x_r if which == "r" else self.x_t

    def re(self, which: str, u: np.ndarray) -> Affine:
        """``Re{u @ v_which}``."""
        return re_row(u)[None, :] @ self.side(which)

    def cplx(self, which: str, u: np.ndarray) -> tuple[Affine, Affine]:
        """Real and imaginary parts of ``u @ v_which``."""
        x = self.side(which)
        return re_row(u)[None, :] @ x, im_row(u)[None, :] @ x

    def add_element_constraints(self) -> None:
        """Convex relaxation of the unit-power element constraint."""
        m = self.size
        one = Affine.constant(1.0)
        half = Affine.constant(np.sqrt(0.5))
        for i in range(m):
            if self.mode == SHARED:
                self.prog.add_soc(one, Affine.stack([self.x_r[i], self.x_r[m + i]]))
            elif self.mode == FIXED_SPLIT:
                self.prog.add_soc(half, Affine.stack([self.x_r[i], self.x_r[m + i]]))
                self.prog.add_soc(half, Affine.stack([self.x_t[i], self.x_t[m + i]]))
            else:
                self.prog.add_soc(one, Affine.stack([self.x_r[i], self.x_r[m + i],
                                                     self.x_t[i], self.x_t[m + i]]))

    def penalty(self, center_r: np.ndarray, center_t: np.ndarray) -> Affine:
        """Epigraph ``s >= ||v_r - c_r||^2 + ||v_t - c_t||^2``; returns ``s``."""
        s = self.prog.variable("penalty")
        diff = Affine.stack([self.x_r - realify(center_r), self.x_t - realify(center_t)])
        self.prog.add_rotated_soc(s, Affine.constant(1.0), diff)
        return s

    def extract(self, values) -> StarCoefficients:
        v_r = complexify(values["v_r"])
        v_t = v_r if self.mode == SHARED else complexify(values["v_t"])
        return StarCoefficients(v_r, v_t.copy())


def tangent_log_terms(d: complex, a0: complex):
    """Linearization data of ``1 + |d +- a|^2`` around ``a = a0``.

    Returns ``(const, u_plus, u_minus)`` such that the lower bounds are
    ``const + 2 Re{u_plus^* a}`` and ``const + 2 Re{u_minus^* a}``.
    """
    const = 1.0 + abs(d) ** 2 - abs(a0) ** 2
    return const, d + a0, a0 - d


def quotient_bound(x, b, x0, b0):
    """Concave lower bound of ``ln(1 + |x|^2 / b)`` tight at ``(x0, b0)``."""
    z0 = abs(x0) ** 2 / b0
    return (np.log1p(z0) - z0 + 2.0 * np.real(np.conj(x0) * x) / b0
            - abs(x0) ** 2 * (b + abs(x) ** 2) / (b0 * (b0 + abs(x0) ** 2)))


def initial_coefficients(size: int, mode: str, rng: np.random.Generator) -> StarCoefficients:
    """Even split with coupled random phases; one unit coefficient when shared."""
    theta_r = rng.uniform(0.0, 2.0 * np.pi, size)
    if mode == SHARED:
        v = np.exp(1j * theta_r)
        return StarCoefficients(v, v.copy())
    return StarCoefficients.from_polar(0.5, theta_r, 0.5, theta_r + 0.5 * np.pi)
