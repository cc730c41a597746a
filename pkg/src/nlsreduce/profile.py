"""The positive radial ground state of  -ΔU + U = U^p  on R^n.

For n = 1 the ground state has the closed form

    U(r) = ((p+1)/2)^(1/(p-1)) * sech((p-1) r / 2)^(2/(p-1)),

which is used directly.  For n >= 2 the profile is computed by shooting on
the height U(0): the radial ODE

    U'' + (n-1)/r U' = U - U^p,   U'(0) = 0

is integrated with a fixed-step classical Runge-Kutta scheme (series start
near r = 0), heights are bisected between "crosses zero" (too high) and
"turns back up" (too low), and the bracket is polished with a root solve on
the decay-mismatch  U'(R) + (1 + m/R) U(R),  m = (n-1)/2.  Beyond the radius
where the trajectory is still accurate to ~1e-9 the samples are blended into
the far-field model  c r^(-m) e^(-r),  which keeps the tail monotone and the
sampled data consistent with the ODE down to ~1e-10 of the peak height.

Samples carry (U, U', U'') per knot with U'' taken from the ODE itself, and
the interpolant is the piecewise-quintic Hermite matching all three;  it is
C^2 and its pointwise residual in the radial ODE stays below 1e-6 * U(0).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import BPoly
from scipy.optimize import brentq

__all__ = [
    "RadialProfile",
    "ProfileConstants",
    "GroundStateError",
    "QuadratureError",
    "ground_state",
    "shoot_radial",
    "constants",
    "save_profile",
    "load_profile",
    "admissible_exponent_range",
]

SAMPLE_STEP = 0.0025        # radial knot spacing
TAIL_CUT_FRACTION = 1e-10   # samples end where U drops below this * U(0)
BLEND_START_FRACTION = 1e-6  # trajectory-to-model blend begins here
BLEND_WIDTH = 2.0

SURFACE_MEASURE = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}


class GroundStateError(Exception):
    """Shooting failed; carries the tried initial-height interval."""

    def __init__(self, message: str, interval=None):
        if interval is not None:
            message = f"{message} (tried heights in [{interval[0]:g}, {interval[1]:g}])"
        super().__init__(message)
        self.interval = interval


class QuadratureError(Exception):
    pass


def admissible_exponent_range(n: int) -> float:
    """Upper bound on p (exclusive); 1 < p < 2* with 2* = 2n/(n-2) for n >= 3."""
    if n >= 3:
        return 2.0 * n / (n - 2)
    return math.inf


@dataclass
class RadialProfile:
    """Sampled ground state with a C^2 interpolant and tail metadata."""

    r_samples: np.ndarray
    u_samples: np.ndarray
    du_samples: np.ndarray
    p: float
    n: int
    decay_rate: float  # fitted c in U(r) ~ c r^(-(n-1)/2) e^(-r)

    def __post_init__(self):
        self.R_max = float(self.r_samples[-1])
        self.u0 = float(self.u_samples[0])
        ddu = _ode_second_derivative(
            self.r_samples, self.u_samples, self.du_samples, self.n, self.p
        )
        self._poly = _quintic_hermite(self.r_samples, self.u_samples, self.du_samples, ddu)
        self._dpoly = self._poly.derivative()
        self._tail_m = 0.5 * (self.n - 1)

    def _tail(self, r):
        return self.decay_rate * r ** (-self._tail_m) * np.exp(-r)

    def _dtail(self, r):
        return self._tail(r) * (-1.0 - self._tail_m / r)

    def u_at(self, r):
        """U(r) for r >= 0, using the decay model beyond R_max."""
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        inside = r <= self.R_max
        out[inside] = self._poly(r[inside])
        far = ~inside
        if np.any(far):
            rf = r[far]
            with np.errstate(over="ignore"):
                out[far] = np.where(rf < 700.0, self._tail(np.minimum(rf, 700.0)), 0.0)
        return out

    def du_at(self, r):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        inside = r <= self.R_max
        out[inside] = self._dpoly(r[inside])
        far = ~inside
        if np.any(far):
            rf = r[far]
            with np.errstate(over="ignore"):
                out[far] = np.where(rf < 700.0, self._dtail(np.minimum(rf, 700.0)), 0.0)
        return out

    def radius_at_fraction(self, frac: float) -> float:
        """Smallest r with U(r) = frac * U(0)."""
        target = frac * self.u0
        idx = np.searchsorted(-self.u_samples, -target)
        if idx == 0:
            return 0.0
        if idx >= len(self.r_samples):
            return -math.log(max(target / self.decay_rate, 1e-300))
        return float(brentq(lambda r: self._poly(r) - target,
                            self.r_samples[idx - 1], self.r_samples[idx]))

    def half_height_radius(self) -> float:
        return self.radius_at_fraction(0.5)

    def ode_residual(self, r=None):
        """Residual of the interpolant in the radial ODE (sup over r or given set)."""
        if r is None:
            # probe between knots where interpolation error peaks
            r = 0.5 * (self.r_samples[1:] + self.r_samples[:-1])
        r = np.asarray(r, dtype=float)
        u = self._poly(r)
        du = self._dpoly(r)
        ddu = self._dpoly.derivative()(r)
        damping = np.where(r > 0, (self.n - 1) / np.where(r > 0, r, 1.0) * du, 0.0)
        res = -ddu - damping + u - np.sign(u) * np.abs(u) ** self.p
        return float(np.max(np.abs(res)))

    def validate(self):
        """Check the structural invariants; raise AssertionError on failure."""
        assert np.all(self.u_samples > 0), "samples not strictly positive"
        assert np.all(np.diff(self.u_samples) < 0), "samples not strictly decreasing"
        assert self.du_samples[0] == 0.0, "U'(0) != 0"
        assert abs(self.du_samples[-1]) < 1e-8 * self.u0, "tail derivative too large"
        assert self.ode_residual() < 1e-6 * self.u0, "ODE residual too large"


@dataclass(frozen=True)
class ProfileConstants:
    C0: float    # integral of U^(p+1) over R^n
    l2sq: float  # integral of U^2
    h1sq: float  # integral of |grad U|^2 + U^2
    C1: float    # C0 * (1/2 - 1/(p+1))


def _quintic_hermite(x, y, dy, ddy) -> BPoly:
    """Piecewise quintic matching (value, slope, curvature) at every knot.

    Equivalent to BPoly.from_derivatives but assembled vectorized; the C^2
    join is exact because adjacent intervals share the same knot data.
    """
    h = np.diff(x)
    ya, yb = y[:-1], y[1:]
    da, db = dy[:-1], dy[1:]
    sa, sb = ddy[:-1], ddy[1:]
    c = np.empty((6, len(h)))
    c[0] = ya
    c[1] = ya + h * da / 5.0
    c[2] = ya + 2.0 * h * da / 5.0 + h * h * sa / 20.0
    c[3] = yb - 2.0 * h * db / 5.0 + h * h * sb / 20.0
    c[4] = yb - h * db / 5.0
    c[5] = yb
    return BPoly(c, x)


def _ode_second_derivative(r, u, du, n, p):
    up = np.abs(u) ** p * np.sign(u)
    ddu = u - up - np.where(r > 0, (n - 1) / np.where(r > 0, r, 1.0) * du, 0.0)
    if r[0] == 0.0:
        ddu[0] = (u[0] - up[0]) / n
    return ddu


def _closed_form_1d(p: float) -> RadialProfile:
    amp = ((p + 1.0) / 2.0) ** (1.0 / (p - 1.0))
    kappa = 2.0 / (p - 1.0)
    tau = (p - 1.0) / 2.0
    decay = amp * 2.0**kappa
    r_max = math.log(decay / (TAIL_CUT_FRACTION * amp))
    m = int(math.ceil(r_max / SAMPLE_STEP))
    r = np.linspace(0.0, m * SAMPLE_STEP, m + 1)
    sech = 1.0 / np.cosh(tau * r)
    u = amp * sech**kappa
    du = -amp * kappa * tau * sech**kappa * np.tanh(tau * r)
    return RadialProfile(r, u, du, p=p, n=1, decay_rate=decay)


# --------------------------------------------------------------------------
# Shooting machinery (n >= 2, and cross-checks for n = 1).


def _series_start(s, h, n, p):
    c2 = (s - s**p) / (2.0 * n)
    c4 = (1.0 - p * s ** (p - 1.0)) * c2 / (4.0 * (n + 2.0))
    u = s + c2 * h * h + c4 * h**4
    du = 2.0 * c2 * h + 4.0 * c4 * h**3
    return u, du


def _integrate(s, h, r_end, n, p, record=False):
    """Fixed-step RK4 from r = h.  Returns (status, r, u, du, samples).

    status: 0 still positive/decreasing at r_end, -1 crossed zero, +1 turned
    back up (derivative became nonnegative while 0 < u < 1).

    Near the axis the 1/r damping coefficient amplifies stage errors, so the
    grid step is internally subdivided while r is small; the recorded samples
    stay on the uniform h-grid.
    """
    sub = 32
    u, du = _series_start(s, h / sub, n, p)
    r = h / sub
    nm1 = n - 1.0
    steps = int(round((r_end - h) / h))
    us = [s] if record else None
    dus = [0.0] if record else None

    def rk4_span(u, du, r, width, k):
        hh = width / k
        half = 0.5 * hh
        sixth = hh / 6.0
        for _ in range(k):
            k1u = du
            k1v = u - abs(u) ** p * (1 if u >= 0 else -1) - nm1 / r * du
            u2 = u + half * k1u
            v2 = du + half * k1v
            rmid = r + half
            k2u = v2
            k2v = u2 - abs(u2) ** p * (1 if u2 >= 0 else -1) - nm1 / rmid * v2
            u3 = u + half * k2u
            v3 = du + half * k2v
            k3u = v3
            k3v = u3 - abs(u3) ** p * (1 if u3 >= 0 else -1) - nm1 / rmid * v3
            u4 = u + hh * k3u
            v4 = du + hh * k3v
            rnext = r + hh
            k4u = v4
            k4v = u4 - abs(u4) ** p * (1 if u4 >= 0 else -1) - nm1 / rnext * v4
            u = u + sixth * (k1u + 2.0 * (k2u + k3u) + k4u)
            du = du + sixth * (k1v + 2.0 * (k2v + k3v) + k4v)
            r = rnext
        return u, du, r

    # close out the first grid cell from the series start
    u, du, r = rk4_span(u, du, r, h - h / sub, sub - 1)
    if record:
        us.append(u)
        dus.append(du)
    for _ in range(steps):
        if r < 0.1:
            k = sub
        elif r < 0.4:
            k = 8
        elif r < 0.8:
            k = 2
        else:
            k = 1
        u, du, r = rk4_span(u, du, r, h, k)
        if record:
            us.append(u)
            dus.append(du)
        if u <= 0.0:
            return -1, r, u, du, (us, dus)
        if du >= 0.0 and u < 1.0 and r > 1.0:
            return 1, r, u, du, (us, dus)
    return 0, r, u, du, (us, dus)


def _decay_mismatch(s, h, r_end, n, p):
    status, r, u, du, _ = _integrate(s, h, r_end, n, p)
    if status == -1:
        return -(1.0 + (r_end - r))
    if status == 1:
        return 1.0 + (r_end - r)
    m = 0.5 * (n - 1.0)
    return du + (1.0 + m / r) * u


def shoot_radial(n: int, p: float, step: float = SAMPLE_STEP):
    """Ground-state height and sampled trajectory by shooting.

    Returns (r, u, du, height).  Raises GroundStateError when no
    overshoot/undershoot bracket can be found.
    """
    coarse = 4.0 * step
    r_scan = 18.0

    # bracket scan on the height
    lo = hi = None
    tried = [1.05, 30.0]
    s = 1.05
    while s < 30.0:
        status, _, _, _, _ = _integrate(s, coarse, r_scan, n, p)
        if status == 1 or status == 0:
            lo = s
        elif status == -1:
            hi = s
            break
        s *= 1.35
    if lo is None or hi is None:
        raise GroundStateError("no overshoot/undershoot bracket found", (tried[0], tried[1]))

    # coarse bisection down to a narrow bracket; stop well above the step
    # bias of the coarse integrator so the fine-step root stays inside
    while hi - lo > 1e-3 * hi:
        mid = 0.5 * (lo + hi)
        status, _, _, _, _ = _integrate(mid, coarse, r_scan, n, p)
        if status == -1:
            hi = mid
        else:
            lo = mid

    # choose the matching radius where U has decayed to ~BLEND_START_FRACTION
    status, r, u, du, rec = _integrate(lo, coarse, r_scan, n, p, record=True)
    us = np.asarray(rec[0])
    rs = np.arange(len(us)) * coarse
    below = np.nonzero(us < BLEND_START_FRACTION * us[0])[0]
    r_match = rs[below[0]] if len(below) else r_scan - 2.0
    r_match = max(6.0, float(r_match))

    # polish at the sampling step with a root solve on the decay mismatch
    g = lambda s_: _decay_mismatch(s_, step, r_match, n, p)
    glo, ghi = g(lo), g(hi)
    if glo * ghi > 0:
        raise GroundStateError("decay mismatch does not change sign", (lo, hi))
    height = brentq(g, lo, hi, xtol=1e-15, rtol=8.9e-16)

    r_end = r_match + BLEND_WIDTH
    _, _, _, _, (us, dus) = _integrate(height, step, r_end, n, p, record=True)
    r = np.arange(len(us)) * step
    return r, np.asarray(us), np.asarray(dus), height


def _blend_tail(r, u, du, n, p):
    """Splice the trajectory into the far-field model and extend to R_max."""
    u0 = u[0]
    m = 0.5 * (n - 1.0)
    below = np.nonzero(u < BLEND_START_FRACTION * u0)[0]
    i0 = below[0] if len(below) else len(r) - int(BLEND_WIDTH / SAMPLE_STEP) - 1
    r_sw = r[i0]
    c = u[i0] * r_sw**m * math.exp(r_sw)

    def model(rr):
        return c * rr ** (-m) * np.exp(-rr)

    def dmodel(rr):
        return model(rr) * (-1.0 - m / rr)

    # smoothstep blend over [r_sw, r_sw + BLEND_WIDTH]
    j1 = min(i0 + int(round(BLEND_WIDTH / SAMPLE_STEP)), len(r) - 1)
    rr = r[i0 : j1 + 1]
    t = (rr - r_sw) / BLEND_WIDTH
    sig = t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
    dsig = (30.0 * t * t * (1.0 - t) ** 2) / BLEND_WIDTH
    mu, dmu = model(rr), dmodel(rr)
    ub = (1.0 - sig) * u[i0 : j1 + 1] + sig * mu
    dub = (1.0 - sig) * du[i0 : j1 + 1] + sig * dmu + dsig * (mu - u[i0 : j1 + 1])
    u = np.concatenate([u[:i0], ub])
    du = np.concatenate([du[:i0], dub])
    r = r[: j1 + 1]

    # extend with the model down to the tail cut
    r_final = -math.log(max(TAIL_CUT_FRACTION * u0 / c, 1e-300))
    if r_final > r[-1]:
        extra = np.arange(r[-1] + SAMPLE_STEP, r_final + SAMPLE_STEP, SAMPLE_STEP)
        u = np.concatenate([u, model(extra)])
        du = np.concatenate([du, dmodel(extra)])
        r = np.concatenate([r, extra])
    return r, u, du, c


def ground_state(n: int, p: float, step: float = SAMPLE_STEP) -> RadialProfile:
    """Compute the positive radial ground state profile.

    Uses the closed form for n = 1 and shooting for n >= 2.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    p_max = admissible_exponent_range(n)
    if not 1.0 < p < p_max:
        raise GroundStateError(f"exponent p={p} outside the admissible range (1, {p_max})")
    if n == 1:
        return _closed_form_1d(p)
    r, u, du, _height = shoot_radial(n, p, step)
    r, u, du, c = _blend_tail(r, u, du, n, p)
    return RadialProfile(r, u, du, p=p, n=n, decay_rate=c)


# --------------------------------------------------------------------------
# Integral constants.


def _radial_integral(profile: RadialProfile, integrand: np.ndarray) -> float:
    w = profile.r_samples ** (profile.n - 1) if profile.n > 1 else np.ones_like(profile.r_samples)
    return SURFACE_MEASURE[profile.n] * float(simpson(integrand * w, x=profile.r_samples))


def constants(profile: RadialProfile) -> ProfileConstants:
    """C0 = ∫U^(p+1), the L2 and W12 squares, and C1 = C0(1/2 - 1/(p+1)).

    The quadrature is checked by comparing against the half-resolution grid;
    disagreement beyond 1e-8 relative raises QuadratureError.
    """
    u, du, p = profile.u_samples, profile.du_samples, profile.p
    vals = {}
    for name, integrand in (
        ("C0", u ** (p + 1.0)),
        ("l2sq", u * u),
        ("h1sq", du * du + u * u),
    ):
        full = _radial_integral(profile, integrand)
        w = profile.r_samples[::2] ** (profile.n - 1) if profile.n > 1 else 1.0
        half = SURFACE_MEASURE[profile.n] * float(
            simpson(integrand[::2] * w, x=profile.r_samples[::2])
        )
        if abs(full - half) > 1e-8 * abs(full):
            raise QuadratureError(
                f"{name} quadrature not converged: {full!r} vs {half!r} at half resolution"
            )
        vals[name] = full
    C0 = vals["C0"]
    return ProfileConstants(
        C0=C0, l2sq=vals["l2sq"], h1sq=vals["h1sq"], C1=C0 * (0.5 - 1.0 / (p + 1.0))
    )


# --------------------------------------------------------------------------
# Text cache (versioned CSV: r, U, U').

_CACHE_VERSION = 1


def save_profile(profile: RadialProfile, path) -> None:
    buf = io.StringIO()
    buf.write(f"# nlsreduce radial profile v{_CACHE_VERSION}\n")
    buf.write(
        f"# n={profile.n} p={float(profile.p)!r} R_max={float(profile.R_max)!r} "
        f"decay_rate={float(profile.decay_rate)!r}\n"
    )
    buf.write("r,U,dU\n")
    for r, u, du in zip(profile.r_samples, profile.u_samples, profile.du_samples):
        buf.write(f"{float(r)!r},{float(u)!r},{float(du)!r}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_profile(path) -> RadialProfile:
    with open(path) as fh:
        version_line = fh.readline().strip()
        if not version_line.startswith(f"# nlsreduce radial profile v{_CACHE_VERSION}"):
            raise ValueError(f"unsupported profile cache format: {version_line!r}")
        meta = dict(tok.split("=", 1) for tok in fh.readline().strip("#\n ").split())
        header = fh.readline().strip()
        if header != "r,U,dU":
            raise ValueError(f"unexpected column header {header!r}")
        data = np.loadtxt(fh, delimiter=",")
    return RadialProfile(
        r_samples=data[:, 0],
        u_samples=data[:, 1],
        du_samples=data[:, 2],
        p=float(meta["p"]),
        n=int(meta["n"]),
        decay_rate=float(meta["decay_rate"]),
    )
