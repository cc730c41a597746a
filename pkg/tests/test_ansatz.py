import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsreduce.ansatz import (
    GridTooSmallError,
    build,
    energy,
    frozen_ground_state,
    make_context,
    residual_norm,
    residual_norm_of_field,
    scaling,
)
from nlsreduce.discretize import Grid, inner
from nlsreduce.profile import constants, ground_state
from nlsreduce.scenario import HypothesisError, Scenario


@pytest.fixture(scope="module")
def profile_p3():
    return ground_state(1, 3.0)


def flat_scenario(n=1, p=3.0, V="0", K="1"):
    return Scenario.from_strings(n, p, V, K)


def test_scaling_unperturbed():
    assert scaling(0.0, 1.0, 3.0) == (1.0, 1.0)
    assert scaling(0.0, 1.0, 1.7) == (1.0, 1.0)


def test_scaling_amplitude_doubling():
    # V=3, K=1, p=3: b = 2, a = b^(2/(p-1)) = 2
    a, b = scaling(3.0, 1.0, 3.0)
    assert (a, b) == (2.0, 2.0)


def test_scaling_with_k():
    a, b = scaling(0.21, 1.1, 2.0)
    assert a == pytest.approx(1.1, rel=1e-14)
    assert b == pytest.approx(1.1, rel=1e-14)


@settings(max_examples=80, derandomize=True)
@given(
    V=st.floats(-0.8, 5.0),
    K=st.floats(0.1, 5.0),
    p=st.floats(1.2, 4.5),
)
def test_scaling_defining_relations(V, K, p):
    a, b = scaling(V, K, p)
    assert abs(a ** (p - 1.0) * K - b * b) < 1e-12 * max(1.0, b * b)
    assert abs(b * b - (1.0 + V)) < 1e-12 * max(1.0, 1.0 + V)


def test_scaling_hypothesis_violations():
    with pytest.raises(HypothesisError):
        scaling(-1.5, 1.0, 3.0)
    with pytest.raises(HypothesisError):
        scaling(0.0, -0.1, 3.0)


def test_build_unperturbed_peak(profile_p3):
    sc = flat_scenario()
    ctx = make_context(sc, 0.1, [0.0])
    g = Grid(1, 20.0, 2001)
    z, tangents = build(ctx, profile_p3, g)
    mid = g.m // 2
    assert z.values[mid] == pytest.approx(math.sqrt(2.0), rel=1e-12)
    assert np.allclose(z.values, z.values[::-1], atol=1e-14)  # symmetric


def test_build_scaled_peak_and_width(profile_p3):
    # V(eps xi)=3 => peak 2*sqrt(2), half-width halved
    sc = Scenario.from_strings(1, 3.0, "3", "1")
    ctx = make_context(sc, 0.1, [0.0])
    g = Grid(1, 20.0, 4001)
    z, _ = build(ctx, profile_p3, g)
    x = g.points()[0]
    mid = g.m // 2
    assert z.values[mid] == pytest.approx(2.0 * math.sqrt(2.0), rel=1e-12)
    half = 0.5 * z.values[mid]
    iright = np.argmax(z.values[mid:] < half)
    width_scaled = x[mid + iright]
    base = math.acosh(2.0)  # half-height radius of U for p=3
    assert width_scaled == pytest.approx(base / 2.0, abs=2 * g.h)


def test_build_tangent_orthogonal_to_z(profile_p3):
    sc = flat_scenario()
    ctx = make_context(sc, 0.1, [0.0])
    g = Grid(1, 20.0, 2001)
    z, tangents = build(ctx, profile_p3, g)
    assert abs(inner(z, tangents[0], "L2")) < 1e-12


def test_build_grid_too_small(profile_p3):
    sc = flat_scenario()
    ctx = make_context(sc, 0.1, [0.0])
    with pytest.raises(GridTooSmallError):
        build(ctx, profile_p3, Grid(1, 8.0, 801))


def test_energy_zero_field():
    sc = flat_scenario()
    g = Grid(1, 20.0, 201)
    from nlsreduce.discretize import zero_field

    u = zero_field(g)
    assert energy(u, sc, 0.1, "full") == 0.0
    assert energy(u, sc, 0.1, "frozen", xi=[0.0]) == 0.0


def test_energy_of_soliton_is_c1(profile_p3):
    # V=0, K=1: full energy of z=U equals C1 = C0(1/2 - 1/(p+1))
    sc = flat_scenario()
    ctx = make_context(sc, 0.1, [0.0])
    g = Grid(1, 20.0, 16001)
    z, _ = build(ctx, profile_p3, g)
    c = constants(profile_p3)
    assert energy(z, sc, 0.1, "full") == pytest.approx(c.C1, abs=2e-6)


def test_energy_frozen_equals_full_for_constant_V(profile_p3):
    sc = Scenario.from_strings(1, 3.0, "0.7", "1")
    ctx = make_context(sc, 0.1, [0.0])
    g = Grid(1, 20.0 / ctx.b, 4001)
    z, _ = build(ctx, profile_p3, g)
    e_full = energy(z, sc, 0.1, "full")
    e_frozen = energy(z, sc, 0.1, "frozen", xi=[0.0])
    assert e_full == pytest.approx(e_frozen, rel=1e-13)


def test_frozen_amplitude_stationarity(profile_p3):
    # d/ds F^{eps xi}(s z)|_{s=1} = 0 up to the stencil defect of the sample
    sc = Scenario.from_strings(1, 3.0, "0.4", "1")
    ctx = make_context(sc, 0.1, [0.0])
    g = Grid(1, 20.0 / ctx.b, 8001)
    z, _, _ = frozen_ground_state(ctx, profile_p3, g)
    ds = 1e-5
    ep = energy(Field_scaled(z, 1 + ds), sc, 0.1, "frozen", xi=[0.0])
    em = energy(Field_scaled(z, 1 - ds), sc, 0.1, "frozen", xi=[0.0])
    deriv = (ep - em) / (2 * ds)
    assert abs(deriv) < 1e-7


def Field_scaled(z, s):
    from nlsreduce.discretize import Field

    return Field(z.grid, s * z.values)


def test_residual_vanishes_unperturbed(profile_p3):
    sc = flat_scenario()
    ctx = make_context(sc, 0.1, [0.0])
    g = Grid(1, 20.0, 8001)
    assert residual_norm(ctx, profile_p3, g, sc) < 1e-8


def test_residual_epsilon_rates(profile_p3):
    # double-well: eps^2 rate at the V-critical slow point, eps rate generic
    sc = Scenario.from_strings(1, 3.0, "0.3*(x1^2-1)^2*exp(-x1^2/4)", "1")

    def res_at(x_slow, eps):
        ctx = make_context(sc, eps, [x_slow / eps])
        g = Grid(1, 20.0 / ctx.b, 6001, center=(x_slow / eps,))
        return residual_norm(ctx, profile_p3, g, sc)

    eps_list = [0.2, 0.1, 0.05]
    crit = [res_at(1.0, e) for e in eps_list]  # V'(1)=0
    gen = [res_at(1.4, e) for e in eps_list]  # steep outer slope, eps-term dominates
    rate_crit = [math.log2(crit[i] / crit[i + 1]) for i in range(2)]
    rate_gen = [math.log2(gen[i] / gen[i + 1]) for i in range(2)]
    for r in rate_crit:
        assert abs(r - 2.0) < 0.15
    for r in rate_gen:
        assert abs(r - 1.0) < 0.15


def test_translation_derivative_identity(profile_p3):
    # || FD_xi z + d_x z || <= c eps |grad V(eps xi)| with c stable as eps halves
    sc = Scenario.from_strings(1, 3.0, "0.3*(x1^2-1)^2*exp(-x1^2/4)", "1")
    x_slow = 0.45

    def defect(eps):
        xi0 = x_slow / eps
        g = Grid(1, 22.0, 8001, center=(xi0,))
        delta = 1e-5
        zp, _ = build(make_context(sc, eps, [xi0 + delta]), profile_p3, g)
        zm, _ = build(make_context(sc, eps, [xi0 - delta]), profile_p3, g)
        z0, tang = build(make_context(sc, eps, [xi0]), profile_p3, g)
        from nlsreduce.discretize import Field, norm

        fd = Field(g, (zp.values - zm.values) / (2 * delta))
        # tangents hold -d_x z, so the frozen part of the xi-derivative
        mismatch = Field(g, fd.values - tang[0].values)
        _, gradV, _ = sc.V_at(np.array([eps * xi0]))
        return norm(mismatch, "W12") / (eps * abs(gradV[0]))

    c1 = defect(0.2)
    c2 = defect(0.1)
    assert 0.3 < c2 / c1 < 3.0  # stable constant under eps-halving


def test_k_weighted_nonlinear_mass_matches_auxiliary(profile_p3):
    # K(eps xi) * int z^{p+1} = C0 * A(eps xi) for the general-K scalings
    sc = Scenario.from_strings(1, 3.0, "0.2", "1.3")
    ctx = make_context(sc, 0.1, [0.0])
    g = Grid(1, 24.0 / ctx.b, 8001)
    z, _ = build(ctx, profile_p3, g)
    from nlsreduce.discretize import integrate

    c = constants(profile_p3)
    lhs = ctx.K_val * integrate(g, z.values ** (3.0 + 1.0))
    A = (1.0 + ctx.V_val) ** ctx.theta * ctx.K_val ** (-2.0 / (3.0 - 1.0))
    assert lhs == pytest.approx(c.C0 * A, rel=1e-7)
