"""Truncated Taylor arithmetic.

A :class:`Jet` holds the normalized Taylor coefficients ``c[k] = f^(k)(t0)/k!``
of a function of one real variable ``t``, vectorized over arbitrary trailing
array dimensions.  Metric fields are differentiated by evaluating them along
lines ``x0 + t v`` with jets and recovering mixed partials by polarization,
so every built-in metric gets exact derivatives without symbolic algebra.
"""
from __future__ import annotations

import math

import numpy as np


class Jet:
    __slots__ = ("c",)

    def __init__(self, c):
        self.c = np.asarray(c)

    # construction ---------------------------------------------------------
    @classmethod
    def constant(cls, value, order):
        value = np.asarray(value, dtype=float)
        c = np.zeros((order + 1,) + value.shape, dtype=value.dtype)
        c[0] = value
        return cls(c)

    @classmethod
    def linear(cls, value, slope, order):
        """Jet of ``value + slope * t``."""
        value, slope = np.broadcast_arrays(np.asarray(value), np.asarray(slope))
        dtype = np.result_type(value.dtype, slope.dtype, float)
        c = np.zeros((order + 1,) + value.shape, dtype=dtype)
        c[0] = value
        if order >= 1:
            c[1] = slope
        return cls(c)

    @property
    def order(self):
        return self.c.shape[0] - 1

    @property
    def value(self):
        return self.c[0]

    def derivative(self, k):
        """k-th derivative at the expansion point."""
        return self.c[k] * math.factorial(k)

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.c[(slice(None),) + idx])

    @property
    def real(self):
        return Jet(self.c.real)

    @property
    def imag(self):
        return Jet(self.c.imag)

    def __repr__(self):
        return f"Jet(order={self.order}, shape={self.c.shape[1:]})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.c + other.c)
        other = np.asarray(other)
        shape = np.broadcast_shapes(self.c.shape[1:], other.shape)
        dtype = np.result_type(self.c.dtype, other.dtype)
        c = np.broadcast_to(self.c, self.c.shape[:1] + shape).astype(dtype)
        c[0] += other
        return Jet(c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c)

    def __sub__(self, other):
        return self + (-other if not isinstance(other, Jet) else Jet(-other.c))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c * np.asarray(other))
        n = min(self.order, other.order)
        a, b = self.c, other.c
        out = [a[0] * b[0]]
        for k in range(1, n + 1):
            acc = a[0] * b[k]
            for i in range(1, k + 1):
                acc = acc + a[i] * b[k - i]
            out.append(acc)
        return Jet(np.stack(out))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c / np.asarray(other))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def reciprocal(self):
        b = self.c
        q = [1.0 / b[0]]
        for k in range(1, self.order + 1):
            acc = b[1] * q[k - 1]
            for i in range(2, k + 1):
                acc = acc + b[i] * q[k - i]
            q.append(-acc * q[0])
        return Jet(np.stack(q))

    # composition ----------------------------------------------------------
    def compose(self, derivs):
        """Return ``f(self)`` given ``derivs[m] = f^(m)(self.value)``.

        ``derivs`` must contain at least ``order + 1`` entries.
        """
        n = self.order
        delta = Jet(self.c.copy())
        delta.c[0] = 0.0
        base = np.asarray(derivs[0])
        c = np.zeros((n + 1,) + np.broadcast_shapes(base.shape, self.c.shape[1:]),
                     dtype=np.result_type(base.dtype, self.c.dtype))
        c[0] = base
        out = Jet(c)
        power = None
        for m in range(1, n + 1):
            power = delta if power is None else power * delta
            out = out + power * (np.asarray(derivs[m]) / math.factorial(m))
        return out

    def sqrt(self):
        v = self.c[0]
        n = self.order
        ds = [np.sqrt(v)]
        coef = 0.5
        for m in range(1, n + 1):
            ds.append(coef * v ** (0.5 - m))
            coef *= 0.5 - m
        return self.compose(ds)

    def power(self, p):
        v = self.c[0]
        ds = []
        coef = 1.0
        for m in range(self.order + 1):
            ds.append(coef * v ** (p - m))
            coef *= p - m
        return self.compose(ds)

    def exp(self):
        e = np.exp(self.c[0])
        return self.compose([e] * (self.order + 1))

    def log(self):
        v = self.c[0]
        ds = [np.log(v)]
        for m in range(1, self.order + 1):
            ds.append((-1.0) ** (m - 1) * math.factorial(m - 1) / v**m)
        return self.compose(ds)

    def sin(self):
        v = self.c[0]
        cyc = [np.sin(v), np.cos(v), -np.sin(v), -np.cos(v)]
        return self.compose([cyc[m % 4] for m in range(self.order + 1)])

    def cos(self):
        v = self.c[0]
        cyc = [np.cos(v), -np.sin(v), -np.cos(v), np.sin(v)]
        return self.compose([cyc[m % 4] for m in range(self.order + 1)])

    def sum(self, axis):
        """Sum over a trailing axis (axis counted on the value shape)."""
        if axis < 0:
            axis = self.c.ndim - 1 + axis
        return Jet(self.c.sum(axis=axis + 1))


def compose_series(outer, inner):
    """Compose Taylor coefficient arrays: ``outer(inner(t) - inner(0))``.

    ``outer[k]`` are normalized coefficients of the outer function about
    ``inner[0]``; returns normalized coefficients of the composition.
    """
    n = len(inner) - 1
    delta = Jet(np.array(inner, dtype=float, copy=True))
    delta.c[0] = 0.0
    out = np.zeros_like(delta.c)
    out[0] = outer[0]
    power = None
    for m in range(1, n + 1):
        power = delta if power is None else power * delta
        out = out + power.c * outer[m]
    return out


def revert_series(a):
    """Series reversion.

    Given normalized coefficients ``a`` of ``w(u)`` about ``u0`` (``a[1]``
    nonzero), return normalized coefficients ``b`` of ``u(w)`` about
    ``w0 = a[0]`` with ``b[0] = u0`` set to zero; callers add the base point.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0] - 1
    b = np.zeros_like(a)
    if n == 0:
        return b
    b[1] = 1.0 / a[1]
    for k in range(2, n + 1):
        # coefficient k of a(b(eps)) - a0 with b_k still zero
        comp = compose_series(np.concatenate([[np.zeros_like(a[0])], a[1:]]), b)
        b[k] = -comp[k] / a[1]
    return b
