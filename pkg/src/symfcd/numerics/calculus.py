"""Jacobians, Lie derivatives and Lie brackets on top of dual numbers."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import dual

VectorField = Callable[[np.ndarray], np.ndarray]
ScalarField = Callable[[np.ndarray], object]


def _as_state(z):
    z = np.asarray(z)
    if z.dtype != object:
        z = z.astype(float)
    return z


def directional(f, z, v):
    """Derivative of ``f`` at ``z`` along ``v`` in a single dual pass."""
    z = _as_state(z)
    tag = dual.new_tag()
    return dual.tangent(f(dual.seed(z, v, tag)), tag)


def jacobian(f: VectorField, z) -> np.ndarray:
    """Jacobian of ``f`` at ``z``, one directional pass per coordinate.

    Columns are stacked from ``n`` forward passes. The result is a float
    array unless ``z`` itself carries outer perturbations.
    """
    z = _as_state(z)
    n = len(z)
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        cols.append(np.atleast_1d(directional(f, z, e)))
    jac = np.column_stack(cols)
    if any(isinstance(v, dual.Dual) for v in jac.ravel()):
        return jac.astype(object)
    return jac.astype(float)


def jacobian_input(F, z, u) -> np.ndarray:
    """Jacobian of ``F(z, u)`` with respect to the input ``u``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return jacobian(lambda w: F(z, w if len(u) > 1 else w[0]), u)


def gradient(H: ScalarField, z) -> np.ndarray:
    z = _as_state(z)
    n = len(z)
    out = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        out.append(directional(H, z, e))
    return dual.pack(out)


def lie_derivative(H: ScalarField, X: VectorField) -> ScalarField:
    """Return the scalar field ``z -> grad H(z) . X(z)``."""

    def LXH(z):
        z = _as_state(z)
        return directional(H, z, X(z))

    return LXH


def lie_bracket(f: VectorField, g: VectorField, z) -> np.ndarray:
    """``[f, g](z) = Dg(z) f(z) - Df(z) g(z)``."""
    z = _as_state(z)
    a = directional(g, z, f(z))
    b = directional(f, z, g(z))
    return dual.pack(list(np.atleast_1d(a) - np.atleast_1d(b)))


def bracket_field(f: VectorField, g: VectorField) -> VectorField:
    """The vector field ``[f, g]`` as a callable, for iterated brackets."""
    return lambda z: lie_bracket(f, g, z)


def central_difference(f: VectorField, z, step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian; used only as an independent check."""
    z = np.asarray(z, dtype=float)
    n = len(z)
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        cols.append((np.atleast_1d(f(z + e)) - np.atleast_1d(f(z - e))) / (2 * step))
    return np.column_stack(cols).astype(float)
