import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from starsr.conic import (Affine, ConicProgram, DeclarationError, Tolerances, embed_hermitian,
                          extract_hermitian)


def random_hermitian_psd(rng, n):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    h = a @ a.conj().T
    return 0.5 * (h + h.conj().T)


def fixed(prog, name, value):
    x = prog.variable(name)
    prog.add_eq(x - value)
    return x


# -- embedding ----------------------------------------------------------------

def test_embed_scalar_one():
    np.testing.assert_array_equal(embed_hermitian(np.array([[1.0 + 0j]])), np.eye(2))


def test_outer_product_trace_and_rank():
    w = np.array([1, 1j])
    W = np.outer(w, w.conj())
    back = extract_hermitian(embed_hermitian(W))
    assert np.trace(back).real == pytest.approx(2.0)
    assert np.linalg.matrix_rank(back, tol=1e-10) == 1


@given(st.integers(1, 16), st.integers(0, 2**32 - 1))
def test_embedding_round_trip(n, seed):
    a = random_hermitian_psd(np.random.default_rng(seed), n)
    e = embed_hermitian(a)
    np.testing.assert_allclose(extract_hermitian(e), a, atol=1e-12 * max(1.0, np.abs(a).max()))
    assert np.trace(e) == pytest.approx(2 * np.trace(a).real)
    np.testing.assert_allclose(e, e.T)


# -- declarations -------------------------------------------------------------

def test_duplicate_name_rejected():
    prog = ConicProgram()
    prog.hermitian_psd("W", 2)
    with pytest.raises(DeclarationError):
        prog.hermitian_psd("W", 2)
    with pytest.raises(DeclarationError):
        prog.hermitian_psd("V", 0)


def test_undeclared_block_rejected():
    prog = ConicProgram()
    other = ConicProgram().variable("x")
    with pytest.raises(DeclarationError):
        prog.add_nonneg(other)


# -- cone examples ------------------------------------------------------------

@pytest.mark.parametrize("x, y, z, feasible", [
    (4.0, 1.0, [2.0], True),
    (1.0, 1.0, [1.1], False),
    (3.0, 27.0, [9.0], True),
])
def test_rotated_soc_examples(x, y, z, feasible):
    prog = ConicProgram()
    xv, yv, zv = fixed(prog, "x", x), fixed(prog, "y", y), fixed(prog, "z", z[0])
    prog.add_rotated_soc(xv, yv, zv)
    prog.minimize(Affine.constant(0.0) + 0.0 * xv)
    assert prog.solve().ok is feasible


@pytest.mark.parametrize("t, x, feasible", [
    (0.0, 1.0, True),
    (1.0, np.e, True),
    (0.5, 1.2, False),
])
def test_exponential_cone_examples(t, x, feasible):
    prog = ConicProgram()
    tv, xv = fixed(prog, "t", t), fixed(prog, "x", x)
    prog.add_exponential_cone(tv, xv)
    prog.minimize(0.0 * tv)
    assert prog.solve().ok is feasible


def test_linear_minimum():
    prog = ConicProgram()
    t = prog.variable("t")
    prog.add_nonneg(t - 3.0)
    prog.minimize(t)
    sol = prog.solve()
    assert sol.ok and sol["t"][0] == pytest.approx(3.0, abs=1e-7)


def test_trace_minimum_is_rank_one():
    prog = ConicProgram()
    W = prog.hermitian_psd("W", 2)
    prog.add_nonneg(W.inner(np.diag([1.0, 0.0])) - 1.0)
    prog.minimize(W.trace())
    sol = prog.solve()
    assert sol.objective == pytest.approx(1.0, abs=1e-7)
    np.testing.assert_allclose(sol["W"], np.diag([1.0, 0.0]), atol=1e-6)


def test_rotated_soc_trace_product():
    prog = ConicProgram()
    W = prog.hermitian_psd("W", 2)
    eye = np.eye(2)
    prog.add_rotated_soc(W.inner(eye), W.inner(eye), Affine.constant(2.0))
    prog.minimize(W.trace())
    assert prog.solve().objective == pytest.approx(2.0, abs=1e-7)


def test_infeasible_status():
    prog = ConicProgram()
    t = prog.variable("t")
    prog.add_nonneg(t - 1.0)
    prog.add_nonneg(-t)
    prog.minimize(t)
    sol = prog.solve()
    assert sol.status == "infeasible" and not sol.ok


def test_determinism_and_dump():
    def build():
        prog = ConicProgram()
        W = prog.hermitian_psd("W", 3)
        rng = np.random.default_rng(3)
        prog.add_nonneg(W.inner(random_hermitian_psd(rng, 3)) - 1.0)
        prog.minimize(W.trace())
        return prog
    a, b = build(), build()
    assert a.dump() == b.dump()
    sa, sb = a.solve(), b.solve()
    assert sa.status == sb.status
    assert abs(sa.objective - sb.objective) <= 1e-9


# -- cross-check against an independent modeling layer --------------------------

@pytest.mark.parametrize("seed", range(5))
def test_matches_cvxpy(seed):
    rng = np.random.default_rng(seed)
    n = 3
    A = random_hermitian_psd(rng, n)
    B = random_hermitian_psd(rng, n)
    c = rng.uniform(0.5, 2.0)

    prog = ConicProgram()
    W = prog.hermitian_psd("W", n)
    x = prog.variable("x", 2)
    # x0 <= ln(1 + Tr A W), x0 >= c, (1 + Tr B W) * x1 >= 1, objective Tr W + x1
    prog.add_exponential_cone(x[0], 1.0 + W.inner(A))
    prog.add_nonneg(x[0] - c)
    prog.add_rotated_soc(1.0 + W.inner(B), x[1], Affine.constant(1.0))
    prog.minimize(W.trace() + x[1])
    ours = prog.solve(Tolerances())

    Wc = cp.Variable((n, n), hermitian=True)
    xc = cp.Variable(2)
    cons = [Wc >> 0, xc[0] <= cp.log(1 + cp.real(cp.trace(A @ Wc))), xc[0] >= c,
            cp.quad_over_lin(1.0, 1 + cp.real(cp.trace(B @ Wc))) <= xc[1]]
    ref = cp.Problem(cp.Minimize(cp.real(cp.trace(Wc)) + xc[1]), cons)
    ref.solve(solver=cp.SCS, eps=1e-9, max_iters=200000)
    assert ours.ok
    assert ours.objective == pytest.approx(ref.value, rel=1e-5, abs=1e-6)
