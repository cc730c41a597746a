"""Finite-dimensional reduction: spectra, corrections, the reduced energy.

For each placement xi and parameter eps, the soliton is realized on a small
window grid centered near xi (all windows share one lattice spacing so the
sweep is translation consistent).  The correction w is the unique small field
orthogonal (in W12) to the translation tangents with the energy derivative at
z + w lying in the tangent span:

    L w = -P grad f(z) - P R(z, w)

solved as a bordered system with the tangent constraints, iterated as a fixed
point and polished with projected Newton steps.  The reduced energy is
phi(xi) = f(z + w), decomposed as

    phi = leading + Lambda + Psi + K-bookkeeping

with leading = (1/2 - 1/(p+1)) K(eps xi) * int z^{p+1}  (= C1 A(eps xi) up to
grid quadrature), Lambda the potential-mismatch terms, Psi quadratic in w,
and the bookkeeping term the O(eps^2) K-mismatch mass.  The decomposition
closes to solver precision because z is the *discrete* frozen soliton.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .ansatz import (
    AnsatzContext,
    frozen_ground_state,
    make_context,
)
from .discretize import (
    BorderedSolver,
    Field,
    Grid,
    inner,
    integrate,
    interior_vector,
    riesz_matrix,
    schrodinger_matrix,
)
from .profile import RadialProfile, constants, ground_state
from .scenario import Scenario

__all__ = [
    "Reducer",
    "SpectralGapReport",
    "CorrectionResult",
    "ReducedSample",
    "ExpansionReport",
    "ContractionError",
    "SpectralError",
    "InsufficientScheduleError",
    "verify_expansion",
    "samples_to_csv",
    "CSV_COLUMNS",
]

CORRECTION_TOL = 1e-10
MAX_FIXED_POINT = 50
NEWTON_SWITCH_AFTER = 5


class ContractionError(RuntimeError):
    """Correction iteration failed to contract.

    Carries the first-iterate size; a smaller eps usually restores the
    contraction regime.
    """

    def __init__(self, message, first_iterate_norm=None):
        if first_iterate_norm is not None:
            message = (
                f"{message} (||N(0)|| = {first_iterate_norm:.3e}; try a smaller epsilon)"
            )
        super().__init__(message)
        self.first_iterate_norm = first_iterate_norm


class SpectralError(RuntimeError):
    pass


class InsufficientScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralGapReport:
    epsilon: float
    xi: tuple
    lambda_z: float
    lambda_perp_min_abs: float
    constraints: str
    iterations: int


@dataclass
class CorrectionResult:
    ctx: AnsatzContext
    grid: Grid
    z: Field
    tangents: list
    w: Field
    w_norm: float
    iterations: int
    projected_residual: float


@dataclass(frozen=True)
class ReducedSample:
    epsilon: float
    xi: tuple
    w_norm: float
    phi: float
    grad_phi: tuple
    lambda_term: float
    psi_term: float
    leading: float
    iterations: int
    k_bookkeeping: float = 0.0
    identity_gap: float = 0.0

    @property
    def slow_point(self) -> tuple:
        return tuple(self.epsilon * v for v in self.xi)


CSV_COLUMNS = (
    "epsilon", "xi", "w_norm", "phi", "grad_phi",
    "lambda_term", "psi_term", "leading", "iterations",
    "k_bookkeeping", "identity_gap",
)


def samples_to_csv(samples) -> str:
    if not samples:
        return ""
    n = len(samples[0].xi)
    cols = ["epsilon"]
    cols += [f"xi_{i+1}" for i in range(n)]
    cols += ["w_norm", "phi"]
    cols += [f"grad_phi_{i+1}" for i in range(n)]
    cols += ["lambda_term", "psi_term", "leading", "iterations",
             "k_bookkeeping", "identity_gap"]
    lines = [",".join(cols)]
    for s in samples:
        row = [repr(float(s.epsilon))]
        row += [repr(float(v)) for v in s.xi]
        row += [repr(float(s.w_norm)), repr(float(s.phi))]
        row += [repr(float(v)) for v in s.grad_phi]
        row += [repr(float(s.lambda_term)), repr(float(s.psi_term)),
                repr(float(s.leading)), str(int(s.iterations)),
                repr(float(s.k_bookkeeping)), repr(float(s.identity_gap))]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _sorted_samples(samples):
    return sorted(samples, key=lambda s: (s.epsilon, s.xi))


class Reducer:
    """Window-grid factory plus the reduction pipeline for one scenario."""

    def __init__(self, scenario: Scenario, resolution: int, box: float,
                 profile: RadialProfile = None):
        self.scenario = scenario
        self.resolution = int(resolution)
        self.box = float(box)
        self.profile = profile if profile is not None else ground_state(scenario.n, scenario.p)
        self.consts = constants(self.profile)
        vmin, _ = scenario.validate_hypotheses(box)
        # width range of the ansatz over the box fixes one shared lattice
        axes = [np.linspace(-box, box, 41)] * scenario.n
        pts = np.stack(np.meshgrid(*axes, indexing="ij")).reshape(scenario.n, -1)
        Vv = np.atleast_1d(scenario.V.values(pts))
        self.b_min = math.sqrt(1.0 + float(np.min(Vv)))
        self.b_max = math.sqrt(1.0 + float(np.max(Vv)))
        from .ansatz import BOUNDARY_FRACTION

        r_cut = self.profile.radius_at_fraction(0.5 * BOUNDARY_FRACTION)
        self.extent = r_cut / self.b_min
        self.h = 2.0 * self.extent / (self.resolution - 1)
        if self.h * self.b_max > 0.5:
            raise ValueError(
                f"resolution guard violated: h*b = {self.h * self.b_max:.3f} > 0.5; "
                f"raise the per-axis resolution above {self.resolution}"
            )
        self._riesz_lu = {}

    # -- window management -------------------------------------------------

    def grid_for(self, xi) -> Grid:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        center = tuple(self.h * np.round(xi / self.h))
        return Grid(self.scenario.n, self.extent, self.resolution, center=center)

    def _riesz_solver(self, grid: Grid):
        key = grid
        if key not in self._riesz_lu:
            if len(self._riesz_lu) > 8:
                self._riesz_lu.clear()
            self._riesz_lu[key] = spla.splu(riesz_matrix(grid), permc_spec="COLAMD")
        return self._riesz_lu[key]

    # -- correction solve ---------------------------------------------------

    def correction(self, xi, epsilon: float, grid: Grid = None) -> CorrectionResult:
        ctx = make_context(self.scenario, epsilon, xi)
        if grid is None:
            grid = self.grid_for(xi)
        z, tangents, _ = frozen_ground_state(ctx, self.profile, grid)
        return self._correction_at(ctx, grid, z, tangents)

    def _correction_at(self, ctx, grid, z, tangents) -> CorrectionResult:
        p = self.scenario.p
        Vf, Kf = self.scenario.coefficient_fields(grid, ctx.epsilon)
        core = grid.interior_slices()
        Vv = Vf.values[core].ravel()
        Kv = Kf.values[core].ravel()
        zv = interior_vector(z)
        zpos = np.where(zv > 0, zv, 0.0)
        B = riesz_matrix(grid)
        tvecs = [interior_vector(t) for t in tangents]
        Bt = [B @ t for t in tvecs]
        gram = np.array([[ti @ bj for bj in Bt] for ti in tvecs])

        L = schrodinger_matrix(grid, Vf.values, Kf.values, z.values, p)
        solver = BorderedSolver(L, Bt, grid=grid)
        lap_plus = B  # -Δ + 1

        def grad_at(wvec):
            u = zv + wvec
            upos = np.where(u > 0, u, 0.0)
            return lap_plus @ u + Vv * u - Kv * upos**p

        def projected_residual(gvec):
            # Riesz representative, W12-projected off the tangent span
            r = self._riesz_solver(grid).solve(gvec)
            rhs = np.array([r @ bt for bt in Bt])
            coef = np.linalg.solve(gram, rhs) if len(Bt) else np.zeros(0)
            g_perp = gvec - sum(c * bt for c, bt in zip(coef, Bt)) if len(Bt) else gvec
            r_perp = r - sum(c * t for c, t in zip(coef, tvecs)) if len(Bt) else r
            val = float(r_perp @ g_perp) * grid.h**grid.n
            return math.sqrt(max(val, 0.0))

        g_z = grad_at(np.zeros_like(zv))
        w = np.zeros_like(zv)
        res_prev = math.inf
        first_norm = None
        stalls = 0
        iterations = 0
        res = projected_residual(g_z)
        tol_scale = max(1.0, float(np.max(np.abs(zv))))

        while res > CORRECTION_TOL and iterations < MAX_FIXED_POINT:
            u = zv + w
            upos = np.where(u > 0, u, 0.0)
            hz = upos**p - zpos**p - p * zpos ** (p - 1.0) * w
            rhs = -g_z + Kv * hz
            w_new = solver.solve_vector(rhs)
            if first_norm is None:
                wf = Field(grid, np.zeros(grid.shape))
                wf.values[core] = w_new.reshape((grid.m - 2,) * grid.n)
                first_norm = math.sqrt(max(inner(wf, wf, "W12"), 0.0))
            w = w_new
            res = projected_residual(grad_at(w))
            iterations += 1
            if not np.isfinite(res) or res > 1e3 * tol_scale:
                raise ContractionError("correction iteration diverged", first_norm)
            if res > 0.9 * res_prev:
                stalls += 1
                if stalls >= NEWTON_SWITCH_AFTER:
                    break
            else:
                stalls = 0
            res_prev = res

        # projected Newton polish with the updated linearization
        newton_iters = 0
        while res > CORRECTION_TOL and newton_iters < 12:
            u = zv + w
            ufield = Field(grid, np.zeros(grid.shape))
            ufield.values[core] = u.reshape((grid.m - 2,) * grid.n)
            H = schrodinger_matrix(grid, Vf.values, Kf.values, ufield.values, p)
            nsolver = BorderedSolver(H, Bt, grid=grid)
            dw = nsolver.solve_vector(grad_at(w))
            w = w - dw
            res_new = projected_residual(grad_at(w))
            iterations += 1
            newton_iters += 1
            if not np.isfinite(res_new):
                raise ContractionError("Newton polish diverged", first_norm)
            if res_new > 0.999 * res:
                res = res_new
                break
            res = res_new

        if res > 100 * CORRECTION_TOL:
            raise ContractionError(
                f"correction did not reach tolerance (residual {res:.3e})", first_norm
            )

        wfield = Field(grid, np.zeros(grid.shape))
        wfield.values[core] = w.reshape((grid.m - 2,) * grid.n)
        w_norm = math.sqrt(max(inner(wfield, wfield, "W12"), 0.0))
        return CorrectionResult(
            ctx=ctx, grid=grid, z=z, tangents=tangents, w=wfield,
            w_norm=w_norm, iterations=iterations, projected_residual=res,
        )


    # -- reduced energy -----------------------------------------------------

    def _phi_of(self, corr: CorrectionResult) -> float:
        u = Field(corr.grid, corr.z.values + corr.w.values)
        from .ansatz import energy

        return energy(u, self.scenario, corr.ctx.epsilon, "full")

    def phi(self, xi, epsilon: float, grid: Grid = None) -> float:
        return self._phi_of(self.correction(xi, epsilon, grid=grid))

    def fd_step(self, epsilon: float) -> float:
        return max(1e-4, epsilon * epsilon)

    def sample(self, xi, epsilon: float, with_gradient: bool = True) -> ReducedSample:
        grid = self.grid_for(xi)
        corr = self.correction(xi, epsilon, grid=grid)
        ctx, z, w = corr.ctx, corr.z, corr.w
        p = self.scenario.p
        g = grid

        Vf, Kf = self.scenario.coefficient_fields(g, epsilon)
        Vv, Kv = Vf.values, Kf.values
        zv, wv = z.values, w.values
        uv = zv + wv
        upos = np.where(uv > 0, uv, 0.0)
        zpos = np.where(zv > 0, zv, 0.0)

        phi = self._phi_of(corr)
        lam = 0.5 * integrate(g, (Vv - ctx.V_val) * zv * zv) + integrate(
            g, (Vv - ctx.V_val) * zv * wv
        )
        psi = (
            0.5 * inner(w, w, "W12")
            + 0.5 * integrate(g, Vv * wv * wv)
            - integrate(
                g, Kv * (upos ** (p + 1.0) - zpos ** (p + 1.0) - (p + 1.0) * zpos**p * wv)
            ) / (p + 1.0)
            - integrate(g, (Kv - ctx.K_val) * zpos**p * wv)
        )
        z_mass = integrate(g, zpos ** (p + 1.0))
        leading_grid = (0.5 - 1.0 / (p + 1.0)) * ctx.K_val * z_mass
        bookkeeping = -integrate(g, (Kv - ctx.K_val) * zpos ** (p + 1.0)) / (p + 1.0)
        identity_gap = phi - (leading_grid + lam + psi + bookkeeping)
        gap_tol = 1e-7 * (1.0 + abs(phi))
        if abs(identity_gap) > gap_tol:
            raise ArithmeticError(
                f"energy decomposition does not close: gap {identity_gap:.3e} "
                f"exceeds {gap_tol:.3e} at xi={tuple(ctx.xi)}, eps={epsilon}"
            )

        A_val = self.scenario.auxiliary_value(epsilon * ctx.xi_array)
        leading = self.consts.C1 * A_val

        grad = ()
        if with_gradient:
            delta = self.fd_step(epsilon)
            gvals = []
            for i in range(self.scenario.n):
                e = np.zeros(self.scenario.n)
                e[i] = delta
                pp = self.phi(ctx.xi_array + e, epsilon, grid=grid)
                pm = self.phi(ctx.xi_array - e, epsilon, grid=grid)
                gvals.append((pp - pm) / (2.0 * delta))
            grad = tuple(gvals)

        return ReducedSample(
            epsilon=epsilon,
            xi=ctx.xi,
            w_norm=corr.w_norm,
            phi=phi,
            grad_phi=grad,
            lambda_term=lam,
            psi_term=psi,
            leading=leading,
            iterations=corr.iterations,
            k_bookkeeping=bookkeeping,
            identity_gap=identity_gap,
        )

    def grad_phi(self, xi, epsilon: float) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        grid = self.grid_for(xi)
        delta = self.fd_step(epsilon)
        out = np.zeros(self.scenario.n)
        for i in range(self.scenario.n):
            e = np.zeros(self.scenario.n)
            e[i] = delta
            out[i] = (
                self.phi(xi + e, epsilon, grid=grid) - self.phi(xi - e, epsilon, grid=grid)
            ) / (2.0 * delta)
        return out

    def correction_xi_derivative(self, xi, epsilon: float, delta: float = 1e-4):
        """W12 norms of the centered finite-difference derivative of w in xi."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        grid = self.grid_for(xi)
        norms = []
        for i in range(self.scenario.n):
            e = np.zeros(self.scenario.n)
            e[i] = delta
            wp = self.correction(xi + e, epsilon, grid=grid).w
            wm = self.correction(xi - e, epsilon, grid=grid).w
            dw = Field(grid, (wp.values - wm.values) / (2.0 * delta))
            norms.append(math.sqrt(max(inner(dw, dw, "W12"), 0.0)))
        return np.asarray(norms)

    # -- spectrum -----------------------------------------------------------

    def spectral_gap(self, xi, epsilon: float, max_iter: int = 200,
                     tol: float = 1e-9) -> SpectralGapReport:
        ctx = make_context(self.scenario, epsilon, xi)
        grid = self.grid_for(xi)
        z, tangents, _ = frozen_ground_state(ctx, self.profile, grid)
        Vf, Kf = self.scenario.coefficient_fields(grid, epsilon)
        H = schrodinger_matrix(grid, Vf.values, Kf.values, z.values, self.scenario.p)
        B = riesz_matrix(grid)
        zv = interior_vector(z)
        lambda_z = float(zv @ (H @ zv)) / float(zv @ (B @ zv))

        cvecs = [B @ zv] + [B @ interior_vector(t) for t in tangents]
        solver = BorderedSolver(H, cvecs, grid=grid)
        rng = np.random.default_rng(12345)
        v = rng.standard_normal(zv.shape[0])
        lam = None
        iterations = 0
        for k in range(max_iter):
            v = solver.solve_vector(B @ v)
            bnorm = math.sqrt(float(v @ (B @ v)))
            if bnorm == 0 or not np.isfinite(bnorm):
                raise SpectralError("inverse iteration collapsed")
            v /= bnorm
            lam_new = float(v @ (H @ v)) / float(v @ (B @ v))
            iterations = k + 1
            if lam is not None and abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-6):
                lam = lam_new
                break
            lam = lam_new
        else:
            raise SpectralError(
                f"inverse iteration did not settle after {max_iter} steps (last {lam!r})"
            )
        return SpectralGapReport(
            epsilon=epsilon,
            xi=tuple(float(t) for t in np.atleast_1d(xi)),
            lambda_z=lambda_z,
            lambda_perp_min_abs=abs(lam),
            constraints="span{z, translation tangents} (W12-orthogonal complement)",
            iterations=iterations,
        )

    # -- sweeps ---------------------------------------------------------------

    def sweep(self, slow_points, epsilons, with_gradient: bool = True, jobs: int = 1):
        """Samples at xi = y/eps for every slow anchor y and eps in the schedule."""
        tasks = []
        for eps in epsilons:
            for y in slow_points:
                y = np.atleast_1d(np.asarray(y, dtype=float))
                tasks.append((eps, tuple(y / eps)))
        if jobs > 1:
            results = _parallel_samples(self, tasks, with_gradient, jobs)
        else:
            results = [self.sample(xi, eps, with_gradient) for eps, xi in tasks]
        return _sorted_samples(results)


# -- parallel helpers --------------------------------------------------------

_WORKER_REDUCER = {}


def _reducer_from_spec(spec):
    if spec not in _WORKER_REDUCER:
        n, p, V_src, K_src, resolution, box = spec
        scenario = Scenario.from_strings(n, p, V_src, K_src)
        _WORKER_REDUCER.clear()
        _WORKER_REDUCER[spec] = Reducer(scenario, resolution, box)
    return _WORKER_REDUCER[spec]


def _sample_task(args):
    spec, eps, xi, with_gradient = args
    reducer = _reducer_from_spec(spec)
    return reducer.sample(xi, eps, with_gradient)


def reducer_spec(reducer: Reducer):
    sc = reducer.scenario
    return (sc.n, sc.p, sc.V.source or sc.V.unparse(), sc.K.source or sc.K.unparse(),
            reducer.resolution, reducer.box)


def _parallel_samples(reducer, tasks, with_gradient, jobs):
    from concurrent.futures import ProcessPoolExecutor

    spec = reducer_spec(reducer)
    args = [(spec, eps, xi, with_gradient) for eps, xi in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_sample_task, args))


# -- expansion verification ---------------------------------------------------


@dataclass(frozen=True)
class ExpansionReport:
    anchors: tuple
    epsilons: tuple
    slopes: tuple            # remainder slope per anchor
    min_slope: float
    slope_threshold: float
    remainder_sup: float     # sup of ||grad phi - C1 eps grad A|| / eps^(1+gamma)
    eqA_ratios: tuple        # per-eps sup |phi - C1 A| / eps over the anchors
    eqA_variation: float     # max/min of the above
    passed: bool


def verify_expansion(samples, scenario: Scenario, consts=None,
                     slope_slack: float = 0.2) -> ExpansionReport:
    """Fit the remainder decay of grad phi against the leading gradient.

    Samples must share slow anchors y = eps*xi across at least three eps
    values.  PASS iff every anchor's fitted slope is >= 1 + gamma - slack and
    the remainder proxies stay bounded.
    """
    if consts is None:
        consts = constants(ground_state(scenario.n, scenario.p))
    gamma = scenario.gamma
    groups = {}
    for s in samples:
        y = tuple(round(v, 9) for v in s.slow_point)
        groups.setdefault(y, []).append(s)

    anchors, slopes = [], []
    rem_sup = 0.0
    eps_all = sorted({s.epsilon for s in samples}, reverse=True)
    if len(eps_all) < 3:
        raise InsufficientScheduleError("need at least 3 epsilon values in the schedule")
    eqA_sup = {e: 0.0 for e in eps_all}

    for y, group in sorted(groups.items()):
        group = sorted(group, key=lambda s: -s.epsilon)
        if len(group) < 3:
            continue
        _, gradA, _ = scenario.auxiliary(np.asarray(y))
        xs, ys = [], []
        for s in group:
            lead_grad = consts.C1 * s.epsilon * gradA
            rem = np.linalg.norm(np.asarray(s.grad_phi) - lead_grad)
            xs.append(math.log(s.epsilon))
            ys.append(math.log(max(rem, 1e-300)))
            rem_sup = max(rem_sup, rem / s.epsilon ** (1.0 + gamma))
            A_val = scenario.auxiliary_value(np.asarray(y))
            eqA_sup[s.epsilon] = max(
                eqA_sup[s.epsilon], abs(s.phi - consts.C1 * A_val) / s.epsilon
            )
        slope = float(np.polyfit(xs, ys, 1)[0])
        anchors.append(y)
        slopes.append(slope)

    if not anchors:
        raise InsufficientScheduleError("no anchor shared across 3+ epsilon values")
    ratios = tuple(eqA_sup[e] for e in eps_all)
    positive = [r for r in ratios if r > 0]
    variation = (max(positive) / min(positive)) if positive else 1.0
    threshold = 1.0 + gamma - slope_slack
    min_slope = min(slopes)
    passed = min_slope >= threshold and math.isfinite(rem_sup)
    return ExpansionReport(
        anchors=tuple(anchors),
        epsilons=tuple(eps_all),
        slopes=tuple(slopes),
        min_slope=min_slope,
        slope_threshold=threshold,
        remainder_sup=rem_sup,
        eqA_ratios=ratios,
        eqA_variation=variation,
        passed=passed,
    )
