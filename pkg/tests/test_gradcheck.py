import numpy as np
import pytest

from deepmi.gradcheck import (
    GradCheckError,
    GradReport,
    compare,
    finite_diff,
    lmi_kink_mask,
    run_checks,
)


def test_finite_diff_constant():
    assert not np.any(finite_diff(lambda p: 3.0, [1.0, 2.0, 3.0], 1e-3))


def test_finite_diff_quadratic():
    g = finite_diff(lambda p: float(np.sum(p**2)), [1.0, 2.0], 1e-4)
    np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-7)


def test_finite_diff_second_order_on_cubic():
    f = lambda p: float(p[0] ** 3)  # noqa: E731
    exact = 3.0 * 1.3**2
    e1 = abs(finite_diff(f, [1.3], 1e-2)[0] - exact)
    e2 = abs(finite_diff(f, [1.3], 5e-3)[0] - exact)
    assert e1 / e2 >= 3.0


def test_finite_diff_errors():
    with pytest.raises(GradCheckError):
        finite_diff(lambda p: 0.0, [1.0], 0.0)
    with pytest.raises(GradCheckError):
        finite_diff(lambda p: float("nan"), [1.0], 1e-3)


def test_compare_examples():
    r = compare([1.0, 2.0], [1.0, 2.0], 0.0, 1e-12)
    assert r.passed and r.max_abs_error == 0 and r.max_rel_error == 0 and r.num_checked == 2
    assert compare([1.0], [1.00005], 0.0, 1e-4).passed
    assert not compare([1.0], [1.0002], 0.0, 1e-4).passed


def test_compare_mask_counts_skips():
    r = compare([1.0, 5.0, 2.0], [1.0, 0.0, 2.0], 1e-12, 1e-6, kink_mask=[False, True, False])
    assert r.passed and r.num_skipped_kinks == 1 and r.num_checked == 2
    assert r.total == 3 and r.skipped_fraction == pytest.approx(1 / 3)
    with pytest.raises(GradCheckError):
        compare([1.0], [1.0, 2.0], 0.0, 1e-6)


def test_compare_reports_worst():
    r = compare([1.0, 1.0, 1.0], [1.0, 1.1, 1.01], 0.0, 1e-6)
    assert r.worst_coordinate == 1 and r.num_failed == 2
    assert r.max_rel_error == pytest.approx(0.1 / 1.1)


def test_report_merge_and_output():
    a = GradReport(1e-9, 1e-6, 3, 10, 1, 0)
    b = GradReport(2e-9, 2e-6, 1, 5, 0, 1)
    m = a.merge(b, offset=10)
    assert (m.worst_coordinate, m.num_checked, m.num_skipped_kinks, m.num_failed) == (11, 15, 1, 1)
    assert not m.passed
    assert "max_rel_error" in m.table("t") and m.to_csv().startswith("max_abs_error,")


def test_lmi_kink_mask_flags_boundaries():
    x = np.array([10.0, 100.0, 200.0])
    y = np.array([0.0, 100.0, 255.0 * 3 / 11 + 1e-4])
    m = lmi_kink_mask(x, y, 11)
    assert m[0] and m[2] and not m[1]


@pytest.mark.parametrize("op", ["lmi", "warp"])
def test_run_checks_smooth_inputs_skip_little(op):
    rep = run_checks(op, trials=3, seed=11)
    assert rep.passed and rep.skipped_fraction < 0.05


def test_run_checks_unknown_op():
    with pytest.raises(GradCheckError):
        run_checks("nope", 1)
