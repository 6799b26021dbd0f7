import numpy as np
import pytest

from epigrid.errors import ValidationError
from epigrid.infectivity import (
    AgeShifted,
    ConstantExponential,
    ConstantFixed,
    CustomLaw,
    PlateauTrapezoid,
    Trajectory,
    mean_curves,
)


def test_trajectory_values():
    tr = Trajectory(amp=2.0, plateau_end=1.0, slope=4.0, end=1.5)
    ages = np.array([-0.5, 0.0, 0.5, 1.0, 1.25, 1.5, 3.0])
    want = np.array([0.0, 2.0, 2.0, 2.0, 1.0, 0.0, 0.0])
    assert np.allclose(tr.value(ages), want)


def test_trajectory_is_cadlag_with_zero_tail():
    # value at the endpoint itself is already 0 (right-continuous profile)
    tr = Trajectory(1.5, 0.7, 0.0, 0.7)
    assert tr.value(0.7 - 1e-12) == 1.5
    assert tr.value(0.7) == 0.0


def test_shift_matches_reparametrized_age():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = rng.uniform(0.1, 3.0)
        brk = rng.uniform(0.0, 2.0)
        ramp = rng.uniform(0.05, 1.0)
        tr = Trajectory(a, brk, a / ramp, brk + ramp)
        s = rng.uniform(0.0, 3.0)
        u = rng.uniform(0.0, 3.0, size=20)
        assert np.allclose(tr.shifted(s).value(u), tr.value(u + s), atol=1e-12)
        # ages before infection always read zero, shifted or not
        assert tr.shifted(s).value(-0.25) == 0.0


@pytest.mark.parametrize("law", [
    ConstantFixed(amp=1.2, lifetime=0.8),
    ConstantExponential(amp=0.9, rate=1.7),
    PlateauTrapezoid(amp=1.1, plateau_lo=0.2, plateau_hi=1.0, ramp=0.4),
    PlateauTrapezoid(amp=0.7, plateau_lo=0.5, plateau_hi=0.5, ramp=0.3),
    AgeShifted(ConstantExponential(amp=0.9, rate=1.7), 0.6),
    AgeShifted(PlateauTrapezoid(amp=1.1, plateau_lo=0.2, plateau_hi=1.0, ramp=0.4), 0.35),
])
def test_mean_curve_against_monte_carlo(law):
    """Closed-form mean curves vs sample averages of drawn trajectories."""
    rng = np.random.default_rng(42)
    n = 200_000
    t = np.linspace(0.0, 2.5, 23)
    acc = np.zeros_like(t)
    acc2 = np.zeros_like(t)
    for _ in range(n):
        v = law.sample(rng).value(t)
        acc += v
        acc2 += v * v
    emp = acc / n
    stderr = np.sqrt(np.maximum(acc2 / n - emp ** 2, 0.0) / n)
    assert np.all(np.abs(emp - law.mean(t)) < 5 * stderr + 1e-9)


def test_mean_zero_before_infection():
    for law in (ConstantFixed(1.0, 2.0), ConstantExponential(1.0, 1.0),
                PlateauTrapezoid(1.0, 0.1, 0.5, 0.2)):
        assert np.all(law.mean(np.array([-2.0, -1e-9])) == 0.0)


def test_constant_fixed_infinite_lifetime():
    law = ConstantFixed(amp=0.5, lifetime=np.inf)
    assert np.all(law.mean(np.array([0.0, 10.0, 1e6])) == 0.5)
    tr = law.sample(np.random.default_rng(0))
    assert np.isinf(tr.end)
    assert tr.value(1e9) == 0.5


def test_age_shift_mean_identity():
    base = PlateauTrapezoid(amp=1.0, plateau_lo=0.3, plateau_hi=0.9, ramp=0.25)
    sh = AgeShifted(base, 0.4)
    t = np.linspace(0, 2, 41)
    assert np.allclose(sh.mean(t), base.mean(t + 0.4))
    # nesting folds into a single shift
    nested = AgeShifted(sh, 0.1)
    assert nested.shift == pytest.approx(0.5)


def test_custom_law_monte_carlo_mean():
    ref = ConstantExponential(amp=0.8, rate=2.0)
    law = CustomLaw(lambda rng: ref.sample(rng), bound=0.8, n_mc=40000, seed=7)
    t = np.linspace(0, 2, 15)
    err = np.abs(law.mean(t) - ref.mean(t))
    assert np.all(err < 5 * law.mean_stderr(t) + 1e-9)
    with pytest.raises(ValidationError):
        law.engine_code()


def test_engine_codes():
    assert ConstantFixed(1.0, 2.0).engine_code()[0] == 0
    assert ConstantExponential(1.0, 2.0).engine_code()[0] == 1
    assert PlateauTrapezoid(1.0, 0.1, 0.2, 0.3).engine_code()[0] == 2
    kind, params = AgeShifted(ConstantExponential(1.0, 2.0), 0.3).engine_code()
    assert kind == 1 and params[1] == 2.0


def test_law_validation():
    with pytest.raises(ValidationError):
        ConstantFixed(-1.0, 1.0)
    with pytest.raises(ValidationError):
        ConstantExponential(1.0, 0.0)
    with pytest.raises(ValidationError):
        PlateauTrapezoid(1.0, 0.5, 0.4, 0.2)
    with pytest.raises(ValidationError):
        PlateauTrapezoid(1.0, 0.1, 0.4, 0.0)
    with pytest.raises(ValidationError):
        AgeShifted(ConstantFixed(1.0, 1.0), -0.1)


def test_mean_curves_helper():
    new = ConstantExponential(1.0, 1.0)
    init = AgeShifted(new, 0.5)
    t = np.linspace(0, 1, 5)
    lam, lam0 = mean_curves(new, init, t)
    assert np.allclose(lam0, np.exp(-0.5) * lam)
