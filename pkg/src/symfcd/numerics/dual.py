"""Tagged forward-mode dual numbers.

Each differentiation pass draws a fresh tag, so nested passes (Jacobians of
Lie brackets, Lie derivatives of Lie derivatives) never confuse their
perturbations. When two duals with different tags meet, the one with the
larger tag is the outer structure and the other is treated as a constant.

Model code should use the math helpers in this module (``exp``, ``log``,
``sin``, ...) so that the same right-hand side evaluates on floats, numpy
arrays and duals alike.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

_tags = itertools.count(1)


def new_tag() -> int:
    return next(_tags)


class Dual:
    __slots__ = ("val", "der", "tag")

    def __init__(self, val, der, tag: int):
        self.val = val
        self.der = der
        self.tag = tag

    def __repr__(self) -> str:
        return f"Dual({self.val!r}, {self.der!r}, tag={self.tag})"

    # arithmetic -------------------------------------------------------------

    def _split(self, other):
        """Return (tag, a.val, a.der, b.val, b.der) under the outer tag."""
        otag = other.tag if isinstance(other, Dual) else 0
        if otag == self.tag:
            return self.tag, self.val, self.der, other.val, other.der
        if otag > self.tag:
            return otag, self, 0.0, other.val, other.der
        return self.tag, self.val, self.der, other, 0.0

    def __add__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        t, av, ad, bv, bd = self._split(other)
        return Dual(av + bv, ad + bd, t)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        t, av, ad, bv, bd = self._split(other)
        return Dual(av - bv, ad - bd, t)

    def __rsub__(self, other):
        t, av, ad, bv, bd = self._split(other)
        return Dual(bv - av, bd - ad, t)

    def __mul__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        t, av, ad, bv, bd = self._split(other)
        return Dual(av * bv, av * bd + ad * bv, t)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        t, av, ad, bv, bd = self._split(other)
        q = av / bv
        return Dual(q, (ad - q * bd) / bv, t)

    def __rtruediv__(self, other):
        t, av, ad, bv, bd = self._split(other)
        q = bv / av
        return Dual(q, (bd - q * ad) / av, t)

    def __neg__(self):
        return Dual(-self.val, -self.der, self.tag)

    def __pos__(self):
        return self

    def __pow__(self, other):
        if isinstance(other, Dual):
            return exp(other * log(self))
        if other == 0:
            return Dual(self.val ** 0, 0.0, self.tag)
        return Dual(self.val ** other, other * self.val ** (other - 1) * self.der, self.tag)

    def __rpow__(self, other):
        return exp(self * math.log(other))

    def __abs__(self):
        return self if real(self) >= 0 else -self

    # comparisons act on the innermost real value ------------------------------

    def __lt__(self, other):
        return real(self) < real(other)

    def __le__(self, other):
        return real(self) <= real(other)

    def __gt__(self, other):
        return real(self) > real(other)

    def __ge__(self, other):
        return real(self) >= real(other)

    def __float__(self):
        return float(real(self))

    # numpy calls these on object arrays (np.exp(arr) -> elem.exp())
    def exp(self):
        e = exp(self.val)
        return Dual(e, e * self.der, self.tag)

    def log(self):
        return Dual(log(self.val), self.der / self.val, self.tag)

    def sin(self):
        return Dual(sin(self.val), cos(self.val) * self.der, self.tag)

    def cos(self):
        return Dual(cos(self.val), -sin(self.val) * self.der, self.tag)

    def sqrt(self):
        s = sqrt(self.val)
        return Dual(s, self.der / (2.0 * s), self.tag)

    def tanh(self):
        th = tanh(self.val)
        return Dual(th, (1.0 - th * th) * self.der, self.tag)


def real(x):
    """Strip every dual layer and return the underlying float."""
    while isinstance(x, Dual):
        x = x.val
    return x


def _unary(name, fallback):
    def f(x):
        if isinstance(x, Dual):
            return getattr(x, name)()
        if isinstance(x, np.ndarray):
            if x.dtype == object:
                return np.array([f(v) for v in x.ravel()], dtype=object).reshape(x.shape)
            return getattr(np, name)(x)
        return fallback(x)

    f.__name__ = name
    return f


exp = _unary("exp", math.exp)
log = _unary("log", math.log)
sin = _unary("sin", math.sin)
cos = _unary("cos", math.cos)
sqrt = _unary("sqrt", math.sqrt)
tanh = _unary("tanh", math.tanh)


def pack(values):
    """Vector from a list of scalars; float dtype unless duals are present."""
    if any(isinstance(v, Dual) for v in values):
        return np.array(values, dtype=object)
    return np.array(values, dtype=float)


def seed(z, direction, tag: int):
    """Return ``z + eps * direction`` as an object array of duals."""
    return np.array([Dual(zi, di, tag) for zi, di in zip(z, direction)], dtype=object)


def tangent(out, tag: int):
    """Extract the eps-coefficient for ``tag`` from an evaluated output."""
    if isinstance(out, Dual):
        return out.der if out.tag == tag else 0.0
    if isinstance(out, np.ndarray) and out.ndim > 0:
        return pack([tangent(o, tag) for o in out])
    if isinstance(out, (list, tuple)):
        return pack([tangent(o, tag) for o in out])
    return 0.0


def primal(out, tag: int):
    """Extract the value part for ``tag`` (drops that perturbation layer)."""
    if isinstance(out, Dual):
        return out.val if out.tag == tag else out
    if isinstance(out, np.ndarray) and out.ndim > 0:
        return pack([primal(o, tag) for o in out])
    return out
