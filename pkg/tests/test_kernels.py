import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from frdct.kernels import (CUBIC, KINDS, KernelSpec, equivalent_kernel, eval_kernel, integrated_kernel,
                           kernel_moment, kernel_moment_matrix)


def test_cubic_values():
    assert eval_kernel(CUBIC, 0.0) == 1.0
    assert eval_kernel(CUBIC, 1.0) == 0.0
    assert eval_kernel(CUBIC, 0.5) == pytest.approx(0.5)
    assert eval_kernel(CUBIC, 1.3) == 0.0


def test_integrated_values():
    assert integrated_kernel(CUBIC, -1.0) == 0.0
    assert integrated_kernel(CUBIC, 1.0) == pytest.approx(1.0, abs=1e-15)
    assert integrated_kernel(CUBIC, 0.0) == pytest.approx(0.5)
    assert integrated_kernel(CUBIC, -7.0) == 0.0 and integrated_kernel(CUBIC, 7.0) == 1.0


@pytest.mark.parametrize("kind", KINDS)
def test_normalization_by_quadrature(kind):
    spec = KernelSpec(kind)
    total = quad(lambda v: eval_kernel(spec, v), -1, 0)[0] + quad(lambda v: eval_kernel(spec, v), 0, 1)[0]
    assert total == pytest.approx(1.0, abs=1e-8)


def test_unknown_kernel_rejected():
    with pytest.raises(ValueError):
        KernelSpec("gaussian")


@given(st.sampled_from(KINDS), st.floats(-1.5, 1.5), st.floats(0, 3))
def test_integrated_matches_quadrature(kind, x1, width):
    spec = KernelSpec(kind)
    x2 = x1 + width
    pts = [p for p in (-1.0, 0.0, 1.0) if x1 < p < x2]
    val = quad(lambda v: eval_kernel(spec, v), x1, x2, points=pts or None, epsabs=1e-12)[0]
    assert integrated_kernel(spec, x2) - integrated_kernel(spec, x1) == pytest.approx(val, abs=1e-8)


@given(st.sampled_from(KINDS), st.sampled_from(["two_sided", "left_only", "right_only"]), st.floats(-3, 3))
def test_nonnegative_and_supported(kind, side, x):
    k = eval_kernel(KernelSpec(kind, side), x)
    assert k >= 0
    if abs(x) > 1:
        assert k == 0


@given(st.floats(-2, 2))
def test_cubic_is_c1(x):
    h = 1e-6
    left = (eval_kernel(CUBIC, x) - eval_kernel(CUBIC, x - h)) / h
    right = (eval_kernel(CUBIC, x + h) - eval_kernel(CUBIC, x)) / h
    assert left == pytest.approx(right, abs=1e-4)


def test_moment_matrix_examples():
    M = kernel_moment_matrix(CUBIC, CUBIC)
    assert M[0, 1] == pytest.approx(0, abs=1e-12) and M[0, 2] == pytest.approx(0, abs=1e-12)
    L = kernel_moment_matrix(CUBIC, CUBIC, "left_only")
    assert L[0, 0] == pytest.approx(0.5, abs=1e-8)
    for A in (M, L, kernel_moment_matrix(CUBIC, CUBIC, "right_only")):
        assert np.allclose(A, A.T)
        assert np.linalg.eigvalsh(A).min() > 0


@pytest.mark.parametrize("side", ["left_only", "right_only"])
def test_equivalent_kernel_moments(side):
    lo, hi = (-1, 0) if side == "left_only" else (0, 1)
    m0 = quad(lambda v: equivalent_kernel(CUBIC, side, v), lo, hi)[0]
    m1 = quad(lambda v: v * equivalent_kernel(CUBIC, side, v), lo, hi)[0]
    assert m0 == pytest.approx(1.0, abs=1e-8)
    assert m1 == pytest.approx(0.0, abs=1e-8)
    assert kernel_moment("cubic_smooth", side, 0) == pytest.approx(0.5, abs=1e-10)
