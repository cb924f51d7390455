"""Seeded channel realizations for the 2-D BS / STAR-RIS / user-cluster geometry."""

from __future__ import annotations

import configparser
import re
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
PURE_LOS_KAPPA = 1e12


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(np.asarray(watt, dtype=float)) + 30.0


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass
class ScenarioConfig:
    """Geometry, propagation and QoS parameters of one simulated system.

    Noise powers are stored in W; the config file carries them in dBm.
    """

    num_antennas: int = 4
    num_elements: int = 20
    num_pu: int = 4
    num_su: int = 1
    carrier_hz: float = 750e6
    bs_pos: tuple[float, float] = (0.0, 0.0)
    ris_pos: tuple[float, float] = (100.0, 0.0)
    pu_center: tuple[float, float] = (100.0, 20.0)
    pu_radius: float = 5.0
    su_center: tuple[float, float] = (100.0, -20.0)
    su_radius: float = 5.0
    ple_bs_user: float = 3.8
    ple_ris_user: float = 2.0
    ple_bs_ris: float = 2.4
    kappa_bs_ris: float = 3.0
    kappa_ris_pu: float = 3.0
    kappa_ris_su: float = 3.0
    noise_pu: float = field(default_factory=lambda: float(dbm_to_watt(-90.0)))
    noise_su: float = field(default_factory=lambda: float(dbm_to_watt(-90.0)))
    symbol_ratio: int = 50
    rate_b_min: float = 2.0
    rate_u_min: float = 0.42
    gamma_b_min_db: float = 30.0
    gamma_u_min_db: float = 30.0
    sic_mu: float = 0.01
    seed: int = 1

    def __post_init__(self) -> None:
        for name in ("num_antennas", "num_elements", "num_pu", "num_su"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("ple_bs_user", "ple_ris_user", "ple_bs_ris", "noise_pu", "noise_su", "carrier_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("pu_radius", "su_radius", "kappa_bs_ris", "kappa_ris_pu", "kappa_ris_su"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.symbol_ratio < 1:
            raise ValueError("symbol_ratio must be >= 1")
        if not 0.0 <= self.sic_mu <= 1.0:
            raise ValueError("sic_mu must lie in [0, 1]")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    def replace(self, **changes) -> ScenarioConfig:
        return dataclasses.replace(self, **changes)


_DBM_KEYS = {"noise_pu", "noise_su"}
_SECTION = "scenario"


def _parse_value(name: str, raw: str, kind):
    raw = raw.strip()
    if name in _DBM_KEYS:
        return float(dbm_to_watt(float(raw)))
    if name.endswith(("_pos", "_center")):
        parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
        if len(parts) != 2:
            raise ValueError(f"{name}: expected 'x, y', got {raw!r}")
        return (float(parts[0]), float(parts[1]))
    if kind is int or name in {"num_antennas", "num_elements", "num_pu", "num_su", "symbol_ratio", "seed"}:
        return int(raw)
    return float(raw)


def load_config(path: str | Path) -> ScenarioConfig:
    """Read a flat ``key = value`` file whose keys are ScenarioConfig field names.

    A ``[scenario]`` header is optional.  Unknown keys raise ``KeyError``
    naming the offending key.
    """
    text = Path(path).read_text()
    if not re.search(r"^\s*\[", text, flags=re.MULTILINE):
        text = f"[{_SECTION}]\n" + text
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string(text)
    known = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in known:
                raise KeyError(key)
            try:
                values[key] = _parse_value(key, raw, known[key])
            except ValueError as exc:
                raise ValueError(f"bad value for {key!r}: {exc}") from exc
    return ScenarioConfig(**values)


def dump_config(cfg: ScenarioConfig) -> str:
    lines = [f"[{_SECTION}]"]
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _DBM_KEYS:
            value = f"{float(watt_to_dbm(value)):.6g}"
        elif isinstance(value, tuple):
            value = ", ".join(f"{v:g}" for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


@dataclass
class ChannelSet:
    """Complex baseband channels of one realization.

    Vectors are stored so that ``h.conj() @ w`` is ``h^H w`` and the cascaded
    term ``g^H diag(v) F w`` is ``g.conj() @ (v * (F @ w))``.
    """

    h_p: np.ndarray  # (K, N)
    h_s: np.ndarray  # (Q, N)
    F: np.ndarray  # (M, N)
    g_p: np.ndarray  # (K, M)
    g_s: np.ndarray  # (Q, M)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(N, M, K, Q)."""
        return self.F.shape[1], self.F.shape[0], self.h_p.shape[0], self.h_s.shape[0]

    def subset_elements(self, idx) -> ChannelSet:
        idx = np.atleast_1d(idx)
        return ChannelSet(self.h_p, self.h_s, self.F[idx], self.g_p[:, idx], self.g_s[:, idx])

    def subset_users(self, pu=None, su=None) -> ChannelSet:
        pu = slice(None) if pu is None else np.atleast_1d(pu)
        su = slice(None) if su is None else np.atleast_1d(su)
        return ChannelSet(self.h_p[pu], self.h_s[su], self.F, self.g_p[pu], self.g_s[su])

    def scaled(self, factor: float) -> ChannelSet:
        """Scale direct and cascaded end-to-end gains by ``factor``."""
        s = np.sqrt(factor)
        return ChannelSet(self.h_p * factor, self.h_s * factor, self.F * s, self.g_p * s, self.g_s * s)

    def validate(self) -> None:
        n, m, k, q = self.dims
        shapes = {"h_p": (k, n), "h_s": (q, n), "F": (m, n), "g_p": (k, m), "g_s": (q, m)}
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")


def path_loss(d, exponent: float, wavelength: float):
    """Large-scale gain ``(wavelength / 4 pi)^2 d^-exponent``."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return (wavelength / (4.0 * np.pi)) ** 2 * d ** (-exponent)


def steering_vector(size: int, angle: float) -> np.ndarray:
    """Half-wavelength ULA response ``[1, e^{j pi sin a}, ..., e^{j pi (X-1) sin a}]``."""
    return np.exp(1j * np.pi * np.arange(size) * np.sin(angle))


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """i.i.d. CN(0, 1) entries."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def rician_channel(dim_out: int, dim_in: int, gain: float, kappa: float,
                   aoa: float, aod: float, rng: np.random.Generator) -> np.ndarray:
    """``sqrt(D k/(k+1)) a(aoa) b(aod)^H + sqrt(D/(k+1)) NLoS`` of shape (dim_out, dim_in)."""
    if kappa < 0 or gain <= 0:
        raise ValueError("need kappa >= 0 and gain > 0")
    los = np.outer(steering_vector(dim_out, aoa), steering_vector(dim_in, aod).conj())
    nlos = complex_gaussian(rng, (dim_out, dim_in))
    if kappa >= PURE_LOS_KAPPA:
        return np.sqrt(gain) * los
    return np.sqrt(gain * kappa / (kappa + 1.0)) * los + np.sqrt(gain / (kappa + 1.0)) * nlos


def sample_disk(rng: np.random.Generator, center, radius: float, count: int) -> np.ndarray:
    r = radius * np.sqrt(rng.random(count))
    phi = 2.0 * np.pi * rng.random(count)
    return np.asarray(center, dtype=float) + np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)


def _angle(src, dst) -> float:
    dx, dy = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    return float(np.arctan2(dy, dx))


@dataclass
class Geometry:
    pu_pos: np.ndarray
    su_pos: np.ndarray
    d_bs_ris: float
    d_bs_pu: np.ndarray
    d_bs_su: np.ndarray
    d_ris_pu: np.ndarray
    d_ris_su: np.ndarray


def generate_geometry(cfg: ScenarioConfig, rng: np.random.Generator) -> Geometry:
    pu = sample_disk(rng, cfg.pu_center, cfg.pu_radius, cfg.num_pu)
    su = sample_disk(rng, cfg.su_center, cfg.su_radius, cfg.num_su)
    bs, ris = np.asarray(cfg.bs_pos, float), np.asarray(cfg.ris_pos, float)
    return Geometry(
        pu_pos=pu,
        su_pos=su,
        d_bs_ris=float(np.linalg.norm(ris - bs)),
        d_bs_pu=np.linalg.norm(pu - bs, axis=1),
        d_bs_su=np.linalg.norm(su - bs, axis=1),
        d_ris_pu=np.linalg.norm(pu - ris, axis=1),
        d_ris_su=np.linalg.norm(su - ris, axis=1),
    )


def generate_scenario(cfg: ScenarioConfig, seed: int | None = None) -> ChannelSet:
    """Draw one channel realization; identical ``(cfg, seed)`` gives identical bytes."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    n, m = cfg.num_antennas, cfg.num_elements
    lam = cfg.wavelength
    geo = generate_geometry(cfg, rng)

    bs_ris_angle = _angle(cfg.bs_pos, cfg.ris_pos)
    pu_angle = _angle(cfg.ris_pos, cfg.pu_center)
    su_angle = _angle(cfg.ris_pos, cfg.su_center)

    F = rician_channel(m, n, float(path_loss(geo.d_bs_ris, cfg.ple_bs_ris, lam)),
                       cfg.kappa_bs_ris, bs_ris_angle, bs_ris_angle, rng)
    # rows of g^H: single-antenna receiver, RIS is the transmitting array
    g_p = np.stack([
        rician_channel(1, m, float(path_loss(d, cfg.ple_ris_user, lam)), cfg.kappa_ris_pu,
                       0.0, pu_angle, rng)[0].conj()
        for d in geo.d_ris_pu
    ])
    g_s = np.stack([
        rician_channel(1, m, float(path_loss(d, cfg.ple_ris_user, lam)), cfg.kappa_ris_su,
                       0.0, su_angle, rng)[0].conj()
        for d in geo.d_ris_su
    ])
    gain_p = path_loss(geo.d_bs_pu, cfg.ple_bs_user, lam)
    gain_s = path_loss(geo.d_bs_su, cfg.ple_bs_user, lam)
    h_p = np.sqrt(gain_p)[:, None] * complex_gaussian(rng, (cfg.num_pu, n))
    h_s = np.sqrt(gain_s)[:, None] * complex_gaussian(rng, (cfg.num_su, n))
    channels = ChannelSet(h_p=h_p, h_s=h_s, F=F, g_p=g_p, g_s=g_s)
    channels.validate()
    return channels
