"""A scenario bundles the dimension, exponent and coefficient fields.

The slow variable is written y = eps * x; potentials are evaluated either at
slow points (for scalings and landscape work) or on rescaled grids (for the
PDE-side energies).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretize import Field, Grid
from .expr import ScalarFieldExpr, parse

__all__ = ["Scenario", "HypothesisError"]


class HypothesisError(ValueError):
    """The standing assumptions fail on the computational box."""


@dataclass(frozen=True)
class Scenario:
    n: int
    p: float
    V: ScalarFieldExpr
    K: ScalarFieldExpr

    @staticmethod
    def from_strings(n: int, p: float, V_text: str, K_text: str) -> "Scenario":
        return Scenario(n=n, p=float(p), V=parse(V_text, n), K=parse(K_text, n))

    @property
    def theta(self) -> float:
        return (self.p + 1.0) / (self.p - 1.0) - self.n / 2.0

    @property
    def gamma(self) -> float:
        return min(1.0, self.p - 1.0)

    def V_at(self, y):
        return self.V.value_grad_hessian(np.atleast_1d(y))

    def K_at(self, y):
        return self.K.value_grad_hessian(np.atleast_1d(y))

    def coefficient_fields(self, grid: Grid, epsilon: float):
        """V(eps x) and K(eps x) tabulated on the grid."""
        pts = epsilon * grid.points()
        Vv = self.V.values(pts)
        Kv = self.K.values(pts)
        return Field(grid, np.broadcast_to(Vv, grid.shape).copy()), Field(
            grid, np.broadcast_to(Kv, grid.shape).copy()
        )

    def auxiliary_value(self, y):
        """A(y) = (1 + V(y))^theta * K(y)^(-2/(p-1)); its critical points
        predict where spikes concentrate.  Accepts one point (n,) or a point
        array (n, ...)."""
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        pts = y[:, None] if single else y
        Vv = np.atleast_1d(self.V.values(pts))
        Kv = np.atleast_1d(self.K.values(pts))
        out = (1.0 + Vv) ** self.theta * Kv ** (-2.0 / (self.p - 1.0))
        return float(out.ravel()[0]) if single else out

    def auxiliary(self, y):
        """(A, grad A, Hessian A) at a slow point, by jet composition."""
        from .expr import Jet2, _eval_jet

        y = np.atleast_1d(np.asarray(y, dtype=float))
        jets = [Jet2.variable(y[i], i, self.n) for i in range(self.n)]
        Vj = _eval_jet(self.V.ast, jets)
        Kj = _eval_jet(self.K.ast, jets)
        one = Jet2.const(1.0, self.n)
        theta, q = self.theta, 2.0 / (self.p - 1.0)
        s = one + Vj
        if s.val <= 0 or Kj.val <= 0:
            raise HypothesisError("auxiliary function undefined: hypotheses fail at the point")
        a_jet = s.chain(
            lambda v: v**theta,
            lambda v: theta * v ** (theta - 1.0),
            lambda v: theta * (theta - 1.0) * v ** (theta - 2.0),
        ) * Kj.chain(
            lambda v: v**-q,
            lambda v: -q * v ** (-q - 1.0),
            lambda v: q * (q + 1.0) * v ** (-q - 2.0),
        )
        return a_jet.val, a_jet.g, 0.5 * (a_jet.H + a_jet.H.T)

    def validate_hypotheses(self, box_halfwidth: float, samples_per_axis: int = 81):
        """Sampled checks of inf(1+V) > 0 and K > 0 on the box.

        Desk-scale relaxation: the conditions are verified on a uniform
        sample of the configured box rather than globally.
        """
        axes = [np.linspace(-box_halfwidth, box_halfwidth, samples_per_axis)] * self.n
        pts = np.stack(np.meshgrid(*axes, indexing="ij")).reshape(self.n, -1)
        Vv = np.atleast_1d(self.V.values(pts))
        Kv = np.atleast_1d(self.K.values(pts))
        vmin = float(np.min(1.0 + Vv))
        kmin = float(np.min(Kv))
        if vmin <= 0:
            raise HypothesisError(f"inf(1+V) = {vmin:g} <= 0 on the box (violates (V2))")
        if kmin <= 0:
            raise HypothesisError(f"min K = {kmin:g} <= 0 on the box (violates (K1))")
        return vmin, kmin
