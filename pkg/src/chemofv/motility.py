"""Nutrient-dependent motility laws.

Every motility is C^1 on [0, inf) with gamma(0) = 0 and gamma > 0 away from
zero; the model's diffusion degenerates exactly where the nutrient is
exhausted.  Besides point evaluation, a motility must produce the exact
Lipschitz constant sup |gamma'| over [0, V], since that constant enters every
a-priori bound the diagnostics check.
"""

from __future__ import annotations

import math

import numpy as np

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_N_VALIDATE = 4096


class MotilityError(ValueError):
    """Motility law violates the degeneracy/positivity/regularity contract."""


def _scan_sup(fn, lo: float, hi: float, n: int = _N_VALIDATE) -> float:
    """Max of |fn| over [lo, hi]: dense scan refined by golden-section search."""
    if hi <= lo:
        return float(abs(fn(lo)))
    s = np.linspace(lo, hi, n)
    vals = np.abs(np.asarray(fn(s), dtype=float))
    i = int(np.argmax(vals))
    best = float(vals[i])
    a = s[max(i - 1, 0)]
    b = s[min(i + 1, n - 1)]
    # golden-section maximization of |fn| on the bracketing interval
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1 = abs(float(fn(x1)))
    f2 = abs(float(fn(x2)))
    for _ in range(80):
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = abs(float(fn(x2)))
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = abs(float(fn(x1)))
    return max(best, f1, f2)


class MotilitySpec:
    """Evaluable motility gamma with its derivative.

    Construct through one of the classmethods: power, power_sum, table, or
    from_table_file.  Instances are immutable and safe to share.
    """

    def __init__(self, kind, params, gamma_fn, gamma_prime_fn, s_max=None):
        self.kind = kind
        self.params = params
        self._gamma = gamma_fn
        self._gamma_prime = gamma_prime_fn
        # largest argument the law is defined for; None means all of [0, inf)
        self.s_max = s_max
        self._sup_cache: dict = {}
        self._validate()

    # -- constructors ------------------------------------------------------

    @classmethod
    def power(cls, alpha: float) -> "MotilitySpec":
        """gamma(s) = s**alpha with alpha >= 1."""
        alpha = float(alpha)
        if alpha < 1.0:
            raise MotilityError(f"power motility needs alpha >= 1, got {alpha}")

        def gamma(s):
            if alpha == 1.0:
                return np.asarray(s, dtype=float) * 1.0
            if alpha == 2.0:
                s = np.asarray(s, dtype=float)
                return s * s
            return np.power(np.asarray(s, dtype=float), alpha)

        def gamma_prime(s):
            s = np.asarray(s, dtype=float)
            if alpha == 1.0:
                return np.ones_like(s)
            if alpha == 2.0:
                return 2.0 * s
            return alpha * np.power(s, alpha - 1.0)

        return cls("power", {"alpha": alpha}, gamma, gamma_prime)

    @classmethod
    def power_sum(cls, terms) -> "MotilitySpec":
        """gamma(s) = sum of coef * s**alpha over (coef, alpha) pairs, alpha >= 1."""
        terms = [(float(c), float(a)) for c, a in terms]
        if not terms:
            raise MotilityError("power_sum needs at least one (coef, alpha) term")
        for c, a in terms:
            if a < 1.0:
                raise MotilityError(f"power_sum term has alpha < 1: ({c}, {a})")

        def gamma(s):
            s = np.asarray(s, dtype=float)
            out = np.zeros_like(s)
            for c, a in terms:
                out += c * np.power(s, a)
            return out

        def gamma_prime(s):
            s = np.asarray(s, dtype=float)
            out = np.zeros_like(s)
            for c, a in terms:
                out += c * a * np.power(s, a - 1.0)
            return out

        return cls("power_sum", {"terms": terms}, gamma, gamma_prime)

    @classmethod
    def table(cls, s, gamma, gamma_prime) -> "MotilitySpec":
        """Monotone-cubic interpolation of sampled (s, gamma, gamma') triples.

        The derivative column is interpolated on its own; it is never obtained
        by differentiating the value interpolant, so the Lipschitz constants
        the diagnostics use are reproducible from the table alone.
        """
        from scipy.interpolate import PchipInterpolator

        s = np.asarray(s, dtype=float)
        gv = np.asarray(gamma, dtype=float)
        gp = np.asarray(gamma_prime, dtype=float)
        if s.ndim != 1 or s.size < 3:
            raise MotilityError("table needs at least 3 sample points")
        if gv.shape != s.shape or gp.shape != s.shape:
            raise MotilityError("table columns must have equal length")
        if np.any(np.diff(s) <= 0):
            raise MotilityError("table abscissae must be strictly increasing")
        if s[0] != 0.0:
            raise MotilityError("table must start at s = 0")
        if gv[0] != 0.0:
            raise MotilityError(
                "motility must vanish at zero nutrient: gamma(0) = "
                f"{gv[0]} (non-degenerate laws are out of scope)"
            )
        # secant slopes must be consistent with the tabulated derivative,
        # otherwise the two interpolants describe different functions
        secant = np.diff(gv) / np.diff(s)
        avg_d = 0.5 * (gp[:-1] + gp[1:])
        scale = max(1.0, float(np.max(np.abs(gp))))
        osc = np.abs(np.diff(gp))
        bad = np.abs(secant - avg_d) > 0.5 * osc + 1e-6 * scale
        if np.any(bad):
            k = int(np.argmax(bad))
            raise MotilityError(
                f"table derivative column inconsistent with values near s = {s[k]:.6g}"
            )

        g_interp = PchipInterpolator(s, gv, extrapolate=False)
        gp_interp = PchipInterpolator(s, gp, extrapolate=False)
        smax = float(s[-1])

        def gamma_fn(x):
            x = np.asarray(x, dtype=float)
            if np.any(x > smax):
                raise MotilityError(f"table motility sampled beyond s_max = {smax}")
            return g_interp(x)

        def gamma_prime_fn(x):
            x = np.asarray(x, dtype=float)
            if np.any(x > smax):
                raise MotilityError(f"table motility sampled beyond s_max = {smax}")
            return gp_interp(x)

        return cls("table", {"n": s.size}, gamma_fn, gamma_prime_fn, s_max=smax)

    @classmethod
    def from_table_file(cls, path) -> "MotilitySpec":
        """Load a CSV with columns s, gamma, gamma_prime (header optional)."""
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split(",")
                try:
                    rows.append([float(p) for p in parts[:3]])
                except ValueError:
                    continue  # header line
        if not rows:
            raise MotilityError(f"{path}: no numeric rows found")
        data = np.asarray(rows)
        if data.shape[1] < 3:
            raise MotilityError(f"{path}: need columns s, gamma, gamma_prime")
        return cls.table(data[:, 0], data[:, 1], data[:, 2])

    # -- evaluation --------------------------------------------------------

    def gamma(self, s):
        """gamma(s) for scalar or array s >= 0."""
        arr = np.asarray(s, dtype=float)
        if np.any(arr < 0):
            raise MotilityError("gamma is only defined for s >= 0")
        out = self._gamma(arr)
        return float(out) if np.isscalar(s) or arr.ndim == 0 else out

    def gamma_prime(self, s):
        """gamma'(s) for scalar or array s >= 0."""
        arr = np.asarray(s, dtype=float)
        if np.any(arr < 0):
            raise MotilityError("gamma' is only defined for s >= 0")
        out = self._gamma_prime(arr)
        return float(out) if np.isscalar(s) or arr.ndim == 0 else out

    # -- suprema on [0, V] ---------------------------------------------------

    def _clip_range(self, V: float) -> float:
        if V < 0:
            raise MotilityError("range bound V must be >= 0")
        if self.s_max is not None:
            # table laws are undefined past their last sample; callers are
            # expected to have validated coverage up front
            return min(float(V), self.s_max)
        return float(V)

    def sup_gamma_prime(self, V: float) -> float:
        """sup of |gamma'| over [0, V]; closed form for monotone power laws."""
        V = self._clip_range(V)
        key = ("gp", V)
        if key in self._sup_cache:
            return self._sup_cache[key]
        if self.kind == "power":
            a = self.params["alpha"]
            out = 1.0 if a == 1.0 else a * V ** (a - 1.0)
        elif self.kind == "power_sum" and all(c >= 0 for c, _ in self.params["terms"]):
            out = float(self._gamma_prime(np.asarray(V)))
        else:
            out = _scan_sup(self._gamma_prime, 0.0, V)
        self._sup_cache[key] = out
        return out

    def sup_gamma(self, V: float) -> float:
        """sup of gamma over [0, V] (the explicit-step stability constant)."""
        V = self._clip_range(V)
        key = ("g", V)
        if key in self._sup_cache:
            return self._sup_cache[key]
        if self.kind == "power":
            out = V ** self.params["alpha"]
        elif self.kind == "power_sum" and all(c >= 0 for c, _ in self.params["terms"]):
            out = float(self._gamma(np.asarray(V)))
        else:
            out = _scan_sup(self._gamma, 0.0, V)
        self._sup_cache[key] = out
        return out

    # -- construction-time validation ----------------------------------------

    def _validate(self):
        s_ref = self.s_max if self.s_max is not None else 1.0
        g0 = float(self._gamma(np.asarray(0.0)))
        if abs(g0) > 1e-14:
            raise MotilityError(
                f"motility must vanish at zero nutrient: gamma(0) = {g0} "
                "(non-degenerate laws are out of scope)"
            )
        s = np.linspace(0.0, s_ref, _N_VALIDATE)[1:]
        gv = np.asarray(self._gamma(s))
        if not np.all(np.isfinite(gv)):
            raise MotilityError("gamma is not finite on the sampled range")
        if np.any(gv <= 0.0):
            k = int(np.argmax(gv <= 0.0))
            raise MotilityError(f"gamma must be positive on (0, inf); fails at s = {s[k]:.6g}")
        gp = np.asarray(self._gamma_prime(s))
        if not np.all(np.isfinite(gp)):
            raise MotilityError("gamma' is not finite on the sampled range")

    def __repr__(self):
        return f"MotilitySpec(kind={self.kind!r}, params={self.params!r})"
