"""Comparison schemes."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import cgauss, random_channels, unit_qos
from starsr.baselines import (SCHEMES, SchemeTag, random_coefficients, run_baseline1,
                              run_baseline2, run_baseline3, run_scheme)
from starsr.channel import ScenarioConfig, generate_scenario
from starsr.engine import SolverOptions
from starsr.model import (BROADCAST, MODELS, QosSpec, StarCoefficients, rate_primary_broadcast,
                          rate_secondary_broadcast, sinr_secondary_broadcast)

SMALL = ScenarioConfig(num_elements=6, num_pu=2)


def small(model, seed=1):
    return generate_scenario(SMALL, seed), QosSpec.from_config(SMALL, model)


def test_tags_are_exhaustive_and_parse():
    assert SCHEMES == ("proposed", "proposed-no-phase-corr", "baseline1", "baseline2", "baseline3")
    for tag in SCHEMES:
        assert SchemeTag.parse(tag).value == tag
    with pytest.raises(ValueError, match="valid: proposed, proposed-no-phase-corr"):
        SchemeTag.parse("baseline4")


@pytest.mark.parametrize("model", MODELS)
def test_baseline1_amplitudes_frozen(model):
    ch, qos = small(model)
    sol = run_baseline1(ch, qos, model, SolverOptions(seed=1))
    assert sol.feasible, sol.report.to_text()
    assert np.allclose(np.abs(sol.coefficients.v_r) ** 2, 0.5, atol=1e-9)
    assert np.allclose(np.abs(sol.coefficients.v_t) ** 2, 0.5, atol=1e-9)


@pytest.mark.parametrize("model", MODELS)
def test_baseline2_uses_the_draw_and_is_deterministic(model):
    ch, qos = small(model, seed=3)
    a = run_baseline2(ch, qos, model, SolverOptions(seed=3))
    b = run_baseline2(ch, qos, model, SolverOptions(seed=3))
    draw = random_coefficients(SMALL.num_elements, 3)
    assert np.array_equal(a.coefficients.v_r, draw.v_r)
    assert np.array_equal(a.coefficients.v_t, draw.v_t)
    assert a.power == b.power
    if a.feasible:
        assert a.outer_iterations == 0


@given(st.integers(0, 2**31 - 1), st.integers(1, 40))
def test_random_draw_is_an_even_split(seed, m):
    v = random_coefficients(m, seed)
    assert np.allclose(np.abs(v.v_r) ** 2, 0.5) and np.allclose(np.abs(v.v_t) ** 2, 0.5)
    assert np.array_equal(random_coefficients(m, seed).v_r, v.v_r)


@pytest.mark.parametrize("model", MODELS)
def test_baseline3_single_shared_coefficient(model):
    ch, qos = small(model)
    sol = run_baseline3(ch, qos, model, SolverOptions(seed=1))
    assert sol.feasible, sol.report.to_text()
    v = sol.coefficients
    assert v.size == 1
    assert np.array_equal(v.v_r, v.v_t)
    assert abs(v.v_r[0]) <= 1 + 1e-9


def scalar_rate(d, c, noise):
    return 0.5 * (np.log2(1 + abs(d + c) ** 2 / noise) + np.log2(1 + abs(d - c) ** 2 / noise))


@given(st.integers(0, 2**32 - 1))
def test_single_element_path_matches_scalar_formulas(seed):
    rng = np.random.default_rng(seed)
    ch = random_channels(rng, n=3, m=5, k=2, q=1).subset_elements(0)
    qos = unit_qos(k=2, q=1)
    v = cgauss(rng, 1)
    v /= max(1.0, abs(v[0]))
    coeffs = StarCoefficients(v, v.copy())
    w = cgauss(rng, 3)
    fw = complex(ch.F[0] @ w)
    for k in range(2):
        d, c = ch.h_p[k].conj() @ w, np.conj(ch.g_p[k, 0]) * v[0] * fw
        assert rate_primary_broadcast(k, ch, coeffs, w, qos) == pytest.approx(
            scalar_rate(d, c, qos.noise_pu[k]), rel=1e-12, abs=1e-12)
    d, c = ch.h_s[0].conj() @ w, np.conj(ch.g_s[0, 0]) * v[0] * fw
    assert rate_secondary_broadcast(0, ch, coeffs, w, qos) == pytest.approx(
        scalar_rate(d, c, qos.noise_su[0]), rel=1e-12, abs=1e-12)
    sinr = qos.symbol_ratio * abs(c) ** 2 / (qos.sic_mu * abs(d) ** 2 + qos.noise_su[0])
    assert sinr_secondary_broadcast(0, ch, coeffs, w, qos) == pytest.approx(sinr, rel=1e-12)


def test_run_scheme_dispatch():
    ch, qos = small(BROADCAST)
    direct = run_baseline3(ch, qos, BROADCAST, SolverOptions(seed=1))
    via = run_scheme("baseline3", ch, qos, BROADCAST, SolverOptions(seed=1))
    assert via.power == direct.power
    with pytest.raises(ValueError, match="unknown scheme"):
        run_scheme("nope", ch, qos, BROADCAST)
    with pytest.raises(ValueError, match="unknown model"):
        run_scheme("baseline2", ch, qos, "multicast")


def test_no_phase_corr_never_above_proposed():
    ch, qos = small(BROADCAST, seed=2)
    opts = SolverOptions(seed=2)
    proposed = run_scheme("proposed", ch, qos, BROADCAST, opts)
    relaxed = run_scheme("proposed-no-phase-corr", ch, qos, BROADCAST, opts)
    assert relaxed.feasible and relaxed.power <= proposed.power
