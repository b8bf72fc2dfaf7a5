import numpy as np
import pytest

from llgmm.core import ValidationError
from llgmm.kernel import kernel_eval, kernel_moment, kernel_scaled, local_design_vector


def test_values_at_reference_points():
    assert kernel_eval(0.0) == pytest.approx(0.75)
    assert kernel_eval(1.0) == 0.0
    assert kernel_eval(0.5) == pytest.approx(0.5625)
    assert kernel_eval(-3.0) == 0.0


def test_symmetry_exact():
    u = np.random.default_rng(0).uniform(-1.5, 1.5, 100)
    assert np.array_equal(kernel_eval(u), kernel_eval(-u))


def test_integrates_to_one():
    t = np.linspace(-1, 1, 10_000)
    val = np.trapezoid(kernel_eval(t), t)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_scaled_values():
    assert kernel_scaled(0.0, 0.5) == pytest.approx(1.5)
    assert kernel_scaled(0.25, 0.5) == pytest.approx(1.125)
    assert kernel_scaled(0.6, 0.5) == 0.0


def test_scaled_rejects_bad_bandwidth():
    with pytest.raises(ValidationError):
        kernel_scaled(0.0, 0.0)
    with pytest.raises(ValidationError):
        kernel_scaled(0.0, -1.0)


def test_design_vector():
    assert np.allclose(local_design_vector(0.3, 0.3, 0.2), [1.0, 0.0])
    assert np.allclose(local_design_vector(0.15, 0.10, 0.1), [1.0, 0.5])
    assert np.allclose(local_design_vector(0.0, 0.2, 0.1), [1.0, -2.0])
    arr = local_design_vector(np.array([0.1, 0.2]), 0.1, 0.1)
    assert arr.shape == (2, 2)
    with pytest.raises(ValidationError):
        local_design_vector(0.1, 0.1, 0.0)


def test_second_moment():
    assert kernel_moment(2, 1) == pytest.approx(0.2, abs=1e-6)


def test_zeroth_moment():
    assert kernel_moment(0, 1) == pytest.approx(1.0, abs=1e-6)


def test_kernel_spec_validation():
    from llgmm.kernel import KernelSpec

    spec = KernelSpec()
    assert spec.family == "epanechnikov" and spec.support_radius == 1.0
    with pytest.raises(ValidationError):
        KernelSpec(family="gaussian")
    with pytest.raises(ValidationError):
        KernelSpec(support_radius=2.0)
