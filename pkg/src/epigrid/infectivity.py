"""Random infectivity profiles carried by infected individuals.

Each individual drawn at infection time receives a trajectory u -> lam(u)
giving its infectivity at age u since infection.  All supported laws
produce trajectories of one canonical shape: a plateau at height ``amp``
on [0, plateau_end), an affine ramp down with the given slope on
[plateau_end, end), and zero from ``end`` on (and for negative ages).
That covers a constant profile with fixed or exponential lifetime and a
trapezoid with random plateau length, and it is closed under age shifts,
which model individuals that were already infected at time zero.

Laws expose the mean curve lam_bar(t) = E[lam(t)] in closed form; the
custom hook estimates it by Monte Carlo over cached samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Trajectory:
    """One realized infectivity profile (piecewise linear, nonincreasing)."""

    amp: float
    plateau_end: float
    slope: float
    end: float

    def value(self, age):
        """Infectivity at the given age(s) since infection."""
        u = np.asarray(age, dtype=float)
        on_plateau = (u >= 0) & (u < self.plateau_end)
        on_ramp = (u >= self.plateau_end) & (u < self.end)
        # clamp the excess age so 0 * inf never appears off the ramp
        excess = np.maximum(u - self.plateau_end, 0.0)
        ramp_val = self.amp - self.slope * excess
        return np.where(on_plateau, self.amp, np.where(on_ramp, ramp_val, 0.0))

    def shifted(self, shift: float) -> "Trajectory":
        """The profile seen from age ``shift`` onward (still canonical)."""
        if shift <= 0:
            return self
        if shift < self.plateau_end:
            return Trajectory(self.amp, self.plateau_end - shift, self.slope,
                              self.end - shift)
        if shift < self.end:
            return Trajectory(self.amp - self.slope * (shift - self.plateau_end),
                              0.0, self.slope, self.end - shift)
        return Trajectory(0.0, 0.0, 0.0, 0.0)


class InfectivityLaw:
    """Base class: a distribution over trajectories."""

    bound = 0.0  # sup over ages and realizations, the lam* of the model

    def sample(self, rng: np.random.Generator) -> Trajectory:
        raise NotImplementedError

    def mean(self, t):
        """lam_bar(t) = E[lam(t)], vectorized; zero for t < 0."""
        raise NotImplementedError

    def engine_code(self):
        """(kind, params) pair consumed by the event engine."""
        raise ValidationError(
            f"{type(self).__name__} cannot be used by the stochastic engine")


@dataclass(frozen=True)
class ConstantFixed(InfectivityLaw):
    """Constant infectivity ``amp`` for a deterministic lifetime (may be inf)."""

    amp: float
    lifetime: float

    def __post_init__(self):
        if self.amp < 0:
            raise ValidationError("amp must be >= 0")
        if self.lifetime < 0:
            raise ValidationError("lifetime must be >= 0")

    @property
    def bound(self):
        return self.amp if self.lifetime > 0 else 0.0

    def sample(self, rng):
        return Trajectory(self.amp, self.lifetime, 0.0, self.lifetime)

    def mean(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= 0) & (t < self.lifetime), self.amp, 0.0)

    def engine_code(self):
        return 0, np.array([self.amp, self.lifetime, 0.0, 0.0])


@dataclass(frozen=True)
class ConstantExponential(InfectivityLaw):
    """Constant infectivity ``amp`` for an Exp(rate) lifetime."""

    amp: float
    rate: float

    def __post_init__(self):
        if self.amp < 0:
            raise ValidationError("amp must be >= 0")
        if self.rate <= 0:
            raise ValidationError("rate must be > 0")

    @property
    def bound(self):
        return self.amp

    def sample(self, rng):
        # 1 - u is in (0, 1], so the log is finite; the engine mirrors this
        eta = -math.log(1.0 - rng.random()) / self.rate
        return Trajectory(self.amp, eta, 0.0, eta)

    def mean(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, self.amp * np.exp(-self.rate * np.maximum(t, 0.0)), 0.0)

    def engine_code(self):
        return 1, np.array([self.amp, self.rate, 0.0, 0.0])


@dataclass(frozen=True)
class PlateauTrapezoid(InfectivityLaw):
    """Plateau of uniform random length, then a linear ramp to zero.

    The plateau length is uniform on [plateau_lo, plateau_hi] and the ramp
    takes ``ramp`` time units to reach zero from the plateau height.
    """

    amp: float
    plateau_lo: float
    plateau_hi: float
    ramp: float

    def __post_init__(self):
        if self.amp < 0:
            raise ValidationError("amp must be >= 0")
        if not 0 <= self.plateau_lo <= self.plateau_hi:
            raise ValidationError("need 0 <= plateau_lo <= plateau_hi")
        if self.ramp <= 0:
            raise ValidationError("ramp must be > 0")

    @property
    def bound(self):
        return self.amp

    def sample(self, rng):
        p = self.plateau_lo + rng.random() * (self.plateau_hi - self.plateau_lo)
        return Trajectory(self.amp, p, self.amp / self.ramp, p + self.ramp)

    def mean(self, t):
        t = np.asarray(t, dtype=float)
        lo, hi, r, a = self.plateau_lo, self.plateau_hi, self.ramp, self.amp
        w = hi - lo
        if w == 0.0:
            return Trajectory(a, lo, a / r, lo + r).value(t)
        # P(plateau still running) plus the averaged ramp contribution
        plateau = np.clip((hi - t) / w, 0.0, 1.0)
        low = np.maximum(lo, t - r)
        high = np.minimum(hi, t)
        span = np.maximum(high - low, 0.0)
        ramp_int = 0.5 * (high + low) * span + (r - t) * span
        out = a * plateau + (a / (r * w)) * np.where(span > 0, ramp_int, 0.0)
        return np.where(t >= 0, out, 0.0)

    def engine_code(self):
        return 2, np.array([self.amp, self.plateau_lo, self.plateau_hi, self.ramp])


class AgeShifted(InfectivityLaw):
    """A base law viewed from a fixed age: lam'(u) = lam(u + shift).

    Used for the initially infected when the epidemic is already ``shift``
    time units old at the start of the observation window.
    """

    def __init__(self, base: InfectivityLaw, shift: float):
        if shift < 0:
            raise ValidationError("shift must be >= 0")
        if isinstance(base, AgeShifted):
            shift += base.shift
            base = base.base
        self.base = base
        self.shift = shift

    @property
    def bound(self):
        return self.base.bound

    def sample(self, rng):
        return self.base.sample(rng).shifted(self.shift)

    def mean(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, self.base.mean(t + self.shift), 0.0)

    def engine_code(self):
        kind, params = self.base.engine_code()
        return kind, params


class CustomLaw(InfectivityLaw):
    """User-supplied sampler with a Monte Carlo mean curve.

    ``sampler(rng) -> Trajectory`` may be arbitrary; the mean is estimated
    from ``n_mc`` cached draws.  Custom laws serve the deterministic
    solvers and the mean-curve tooling; the event engine only accepts the
    built-in families.
    """

    def __init__(self, sampler, bound: float, n_mc: int = 20000, seed: int = 0):
        if bound <= 0:
            raise ValidationError("bound must be > 0")
        if n_mc < 100:
            raise ValidationError("n_mc must be >= 100 for a usable mean curve")
        self.sampler = sampler
        self.bound = bound
        self.n_mc = n_mc
        rng = np.random.default_rng(seed)
        trajs = [sampler(rng) for _ in range(n_mc)]
        self._amp = np.array([tr.amp for tr in trajs])
        self._brk = np.array([tr.plateau_end for tr in trajs])
        self._slope = np.array([tr.slope for tr in trajs])
        self._end = np.array([tr.end for tr in trajs])
        if np.any(self._amp > bound + 1e-12):
            raise ValidationError("sampler produced a trajectory above bound")

    def sample(self, rng):
        return self.sampler(rng)

    def _values(self, t):
        u = np.asarray(t, dtype=float)[..., None]
        on_plateau = (u >= 0) & (u < self._brk)
        on_ramp = (u >= self._brk) & (u < self._end)
        ramp_val = self._amp - self._slope * (u - self._brk)
        return np.where(on_plateau, self._amp, np.where(on_ramp, ramp_val, 0.0))

    def mean(self, t):
        return self._values(t).mean(axis=-1)

    def mean_stderr(self, t):
        return self._values(t).std(axis=-1) / math.sqrt(self.n_mc)


def mean_curves(new_law: InfectivityLaw, initial_law: InfectivityLaw, times):
    """(lam_bar, lam_bar_0) evaluated on a time grid."""
    return new_law.mean(times), initial_law.mean(times)
