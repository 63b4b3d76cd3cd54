"""Model vocabulary: signed powers, two-sided coefficient fields, model records.

A coefficient field is a pair of parametric functions of ``(x, y)``. The
``plus`` branch is used on ``y >= 0`` and the ``minus`` branch on
``y < 0``. For a vector fast variable the split uses its first
coordinate.

All functions are vectorized: ``x`` has shape ``(n, d)``, ``y`` has shape
``(n,)`` or ``(n, k)``, and a field with value shape ``s`` returns an array
of shape ``(n,) + s``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DomainError, EvaluationError

__all__ = [
    "signed_pow",
    "check_exponent",
    "ParametricFunction",
    "Constant",
    "Affine",
    "BoundedSmooth",
    "SignedPower",
    "register_family",
    "make_function",
    "FAMILIES",
    "CoefficientField",
    "eval_field",
    "AtomicMeasure",
    "DensityMeasure",
    "make_measure",
    "SmallNoiseModel",
    "TwoScaleModel",
    "GridSpec",
    "Check",
    "ValidationReport",
    "validate_model",
]


# ---------------------------------------------------------------------------
# signed power


def check_exponent(gamma) -> float:
    """Return ``gamma`` as a float after checking ``0 < gamma < 1``.

    Raises
    ------
    DomainError
        If the exponent is outside the open unit interval or not finite.
    """
    try:
        g = float(gamma)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"exponent gamma={gamma!r} is not a number") from exc
    if not (0.0 < g < 1.0):
        raise DomainError(
            f"exponent gamma={g} is outside the admissible range 0 < gamma < 1"
        )
    return g


def signed_pow(y, gamma):
    """Signed power ``|y|**gamma * sign(y)``.

    Parameters
    ----------
    y : float or array_like
    gamma : float
        Exponent, any positive real. Callers that need the Hölder range
        validate it with :func:`check_exponent`.

    Returns
    -------
    float or ndarray
        Exactly ``0.0`` where ``y == 0``.
    """
    y = np.asarray(y, dtype=float)
    out = np.sign(y) * np.abs(y) ** gamma
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# parametric families


def _as2d_y(y: np.ndarray) -> np.ndarray:
    return y[:, None] if y.ndim == 1 else y


class ParametricFunction:
    """Base class for registered coefficient families.

    Subclasses set ``family`` and ``shape`` and implement ``_eval``.
    """

    family: str = ""
    shape: tuple = ()

    def __call__(self, x, y) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float)
        if y.ndim == 0:
            y = y.reshape(1)
        return self._eval(x, _as2d_y(y))

    def _eval(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    @property
    def bound(self) -> float | None:
        """Declared bound on ``|value|``, or ``None`` if unbounded."""
        return None

    def depends_on_x(self) -> bool:
        return True

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and _dict_eq(self.to_dict(), other.to_dict())

    def __hash__(self):
        return hash(repr(self.to_dict()))

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()!r})"


def _dict_eq(a, b) -> bool:
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_dict_eq(a[k], b[k]) for k in a)
    return np.array_equal(np.asarray(a), np.asarray(b))


def _tolist(a):
    a = np.asarray(a, dtype=float)
    return a.tolist() if a.ndim else float(a)


def _affine_part(const, x_coef, y_coef, x, y, shape):
    n = x.shape[0]
    out = np.broadcast_to(const, (n,) + shape).astype(float, copy=True)
    if x_coef is not None:
        # x_coef has shape shape + (d,)
        out += np.tensordot(x, x_coef, axes=([1], [x_coef.ndim - 1])).reshape(
            (n,) + shape
        ) if shape else x @ x_coef
    if y_coef is not None:
        if y_coef.shape == shape:
            yy = y[:, 0].reshape((n,) + (1,) * len(shape))
            out += yy * y_coef
        else:
            out += np.tensordot(y, y_coef, axes=([1], [y_coef.ndim - 1])).reshape(
                (n,) + shape
            ) if shape else y @ y_coef
    return out


@dataclass(frozen=True, eq=False, repr=False)
class Constant(ParametricFunction):
    """Constant value (scalar, vector or matrix)."""

    value: np.ndarray
    family = "constant"

    def __post_init__(self):
        v = np.array(self.value, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "value", v)

    @property
    def shape(self):
        return self.value.shape

    def _eval(self, x, y):
        return np.broadcast_to(self.value, (x.shape[0],) + self.value.shape).copy()

    @property
    def bound(self):
        return float(np.max(np.abs(self.value))) if self.value.size else 0.0

    def depends_on_x(self):
        return False

    def to_dict(self):
        return {"family": "constant", "value": _tolist(self.value)}


@dataclass(frozen=True, eq=False, repr=False)
class Affine(ParametricFunction):
    """``clip(const + x_coef . x + y_coef . y, lo, hi)``.

    ``x_coef`` has shape ``shape + (d,)``. ``y_coef`` has shape
    ``shape + (k,)``, or ``shape`` to multiply the first fast coordinate.
    """

    const: np.ndarray
    x_coef: np.ndarray | None = None
    y_coef: np.ndarray | None = None
    lo: float = -np.inf
    hi: float = np.inf
    family = "affine"

    def __post_init__(self):
        c = np.array(self.const, dtype=float)
        object.__setattr__(self, "const", c)
        for name in ("x_coef", "y_coef"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.array(v, dtype=float))
        if not self.lo <= self.hi:
            raise DomainError("affine family needs lo <= hi")

    @property
    def shape(self):
        return self.const.shape

    def _eval(self, x, y):
        out = _affine_part(self.const, self.x_coef, self.y_coef, x, y, self.shape)
        return np.clip(out, self.lo, self.hi)

    @property
    def bound(self):
        b = max(abs(self.lo), abs(self.hi))
        return None if np.isinf(b) else float(b)

    def depends_on_x(self):
        return self.x_coef is not None and bool(np.any(self.x_coef != 0))

    def to_dict(self):
        d = {"family": "affine", "const": _tolist(self.const)}
        if self.x_coef is not None:
            d["x_coef"] = _tolist(self.x_coef)
        if self.y_coef is not None:
            d["y_coef"] = _tolist(self.y_coef)
        if np.isfinite(self.lo):
            d["lo"] = float(self.lo)
        if np.isfinite(self.hi):
            d["hi"] = float(self.hi)
        return d


@dataclass(frozen=True, eq=False, repr=False)
class BoundedSmooth(ParametricFunction):
    """``offset + scale * tanh(const + x_coef . x + y_coef . y)``."""

    scale: np.ndarray
    offset: np.ndarray = 0.0
    const: np.ndarray = 0.0
    x_coef: np.ndarray | None = None
    y_coef: np.ndarray | None = None
    family = "bounded-smooth"

    def __post_init__(self):
        s = np.array(self.scale, dtype=float)
        object.__setattr__(self, "scale", s)
        object.__setattr__(
            self, "offset", np.broadcast_to(np.array(self.offset, float), s.shape).copy()
        )
        object.__setattr__(
            self, "const", np.broadcast_to(np.array(self.const, float), s.shape).copy()
        )
        for name in ("x_coef", "y_coef"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.array(v, dtype=float))

    @property
    def shape(self):
        return self.scale.shape

    def _eval(self, x, y):
        z = _affine_part(self.const, self.x_coef, self.y_coef, x, y, self.shape)
        return self.offset + self.scale * np.tanh(z)

    @property
    def bound(self):
        return float(np.max(np.abs(self.offset) + np.abs(self.scale)))

    def depends_on_x(self):
        return self.x_coef is not None and bool(np.any(self.x_coef != 0))

    def to_dict(self):
        d = {
            "family": "bounded-smooth",
            "scale": _tolist(self.scale),
            "offset": _tolist(self.offset),
            "const": _tolist(self.const),
        }
        if self.x_coef is not None:
            d["x_coef"] = _tolist(self.x_coef)
        if self.y_coef is not None:
            d["y_coef"] = _tolist(self.y_coef)
        return d


@dataclass(frozen=True, eq=False, repr=False)
class SignedPower(ParametricFunction):
    """``const + coef * signed_pow(y, exponent)``.

    Scalar ``coef`` acts on the first fast coordinate; a vector ``coef``
    of length ``k`` acts elementwise. Used for fast drifts of the form
    ``rate * signed_pow(y, gamma)``.
    """

    coef: np.ndarray
    exponent: float
    const: np.ndarray = 0.0
    family = "signed-power"

    def __post_init__(self):
        c = np.array(self.coef, dtype=float)
        object.__setattr__(self, "coef", c)
        object.__setattr__(
            self, "const", np.broadcast_to(np.array(self.const, float), c.shape).copy()
        )
        object.__setattr__(self, "exponent", float(self.exponent))
        if self.exponent <= 0:
            raise DomainError("signed-power family needs a positive exponent")

    @property
    def shape(self):
        return self.coef.shape

    def _eval(self, x, y):
        yy = y[:, 0] if not self.shape else y[:, : self.shape[0]]
        return self.const + self.coef * signed_pow(yy, self.exponent)

    def depends_on_x(self):
        return False

    def to_dict(self):
        return {
            "family": "signed-power",
            "coef": _tolist(self.coef),
            "exponent": self.exponent,
            "const": _tolist(self.const),
        }


def _constant_from(p):
    return Constant(p["value"])


def _affine_from(p):
    return Affine(
        p["const"],
        p.get("x_coef"),
        p.get("y_coef"),
        p.get("lo", -np.inf),
        p.get("hi", np.inf),
    )


def _smooth_from(p):
    return BoundedSmooth(
        p["scale"], p.get("offset", 0.0), p.get("const", 0.0), p.get("x_coef"), p.get("y_coef")
    )


def _spow_from(p):
    return SignedPower(p["coef"], p["exponent"], p.get("const", 0.0))


FAMILIES: dict[str, Callable[[Mapping], ParametricFunction]] = {
    "constant": _constant_from,
    "affine": _affine_from,
    "bounded-smooth": _smooth_from,
    "signed-power": _spow_from,
}


def register_family(name: str, factory: Callable[[Mapping], ParametricFunction]) -> None:
    """Register a coefficient family under ``name``.

    ``factory`` receives the parameter mapping from the config document and
    returns a :class:`ParametricFunction`. Registering an existing name
    replaces it.
    """
    if not callable(factory):
        raise DomainError("family factory must be callable")
    FAMILIES[name] = factory


def make_function(spec) -> ParametricFunction:
    """Build a parametric function from ``{"family": name, ...}``.

    Scalars and nested lists are accepted as shorthand for constants.
    """
    if isinstance(spec, ParametricFunction):
        return spec
    if not isinstance(spec, Mapping):
        return Constant(spec)
    name = spec.get("family")
    if name not in FAMILIES:
        raise DomainError(f"unknown coefficient family {name!r}; known: {sorted(FAMILIES)}")
    try:
        return FAMILIES[name](spec)
    except KeyError as exc:
        raise DomainError(f"family {name!r} is missing parameter {exc.args[0]!r}") from exc


# ---------------------------------------------------------------------------
# two-sided fields


@dataclass(frozen=True)
class CoefficientField:
    """Two-sided field: ``plus`` on ``y >= 0``, ``minus`` on ``y < 0``."""

    plus: ParametricFunction
    minus: ParametricFunction

    def __post_init__(self):
        object.__setattr__(self, "plus", make_function(self.plus))
        object.__setattr__(self, "minus", make_function(self.minus))
        if self.plus.shape != self.minus.shape:
            raise DomainError(
                f"branch shapes differ: plus {self.plus.shape}, minus {self.minus.shape}"
            )

    @classmethod
    def constant(cls, plus, minus=None) -> "CoefficientField":
        return cls(Constant(plus), Constant(plus if minus is None else minus))

    @property
    def shape(self) -> tuple:
        return self.plus.shape

    @property
    def bound(self) -> float | None:
        bp, bm = self.plus.bound, self.minus.bound
        return None if bp is None or bm is None else max(bp, bm)

    def depends_on_x(self) -> bool:
        return self.plus.depends_on_x() or self.minus.depends_on_x()

    @property
    def is_constant(self) -> bool:
        return isinstance(self.plus, Constant) and isinstance(self.minus, Constant)

    def __call__(self, x, y):
        return eval_field(self, x, y)

    def to_dict(self) -> dict:
        return {"plus": self.plus.to_dict(), "minus": self.minus.to_dict()}


def eval_field(f: CoefficientField, x, y) -> np.ndarray:
    """Evaluate a two-sided field with the indicator split.

    Parameters
    ----------
    f : CoefficientField
    x : array_like
        A point of shape ``(d,)`` or a batch of shape ``(n, d)``.
    y : array_like
        Fast state: scalar or ``(k,)`` for a single point, ``(n,)`` or
        ``(n, k)`` for a batch.

    Returns
    -------
    ndarray
        Shape ``f.shape`` for a single point, ``(n,) + f.shape`` otherwise.
        Only the ``plus`` branch is evaluated at points with ``y >= 0``.

    Raises
    ------
    EvaluationError
        If any value is not finite. The error carries the first offending
        ``(x, y)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
        y = y.reshape((1,) + y.shape)
    split = y if y.ndim == 1 else y[:, 0]
    up = split >= 0
    n = x.shape[0]
    shape = f.shape
    if f.is_constant:
        mask = up.reshape((n,) + (1,) * len(shape))
        out = np.where(mask, f.plus.value, f.minus.value)
    elif up.all():
        out = f.plus(x, y)
    elif not up.any():
        out = f.minus(x, y)
    else:
        out = np.empty((n,) + shape)
        out[up] = f.plus(x[up], y[up])
        out[~up] = f.minus(x[~up], y[~up])
    if not np.all(np.isfinite(out)):
        bad = np.flatnonzero(~np.isfinite(out.reshape(n, -1)).all(axis=1))[0]
        raise EvaluationError(
            f"non-finite coefficient value at x={x[bad].tolist()}, y={y[bad].tolist()}",
            x=x[bad],
            y=y[bad],
        )
    return out[0] if single else out


# ---------------------------------------------------------------------------
# jump measures (finite intensity, scalar marks)


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Finite measure ``sum_j weights[j] * delta(atoms[j])`` on the real line."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.array(self.atoms, dtype=float).reshape(-1)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if a.shape != w.shape:
            raise DomainError("atoms and weights must have equal length")
        if np.any(w < 0) or not np.all(np.isfinite(w)) or not np.all(np.isfinite(a)):
            raise DomainError("jump measure weights must be finite and non-negative")
        a.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)

    @property
    def rate(self) -> float:
        return float(self.weights.sum())

    def sample_marks(self, gen: np.random.Generator, size: int) -> np.ndarray:
        if size == 0 or self.rate == 0:
            return np.empty(0)
        idx = gen.choice(self.atoms.size, size=size, p=self.weights / self.rate)
        return self.atoms[idx]

    def truncated_first_moment(self, rho: float) -> float:
        """``integral of u over {|u| <= rho}``."""
        m = np.abs(self.atoms) <= rho
        return float(np.sum(self.atoms[m] * self.weights[m]))

    def discretize(self, rho: float):
        """Atoms and weights split into ``|u| <= rho`` and ``|u| > rho`` parts."""
        m = np.abs(self.atoms) <= rho
        return (self.atoms[m], self.weights[m]), (self.atoms[~m], self.weights[~m])

    def atoms_on(self, radius: float, rtol: float = 1e-12) -> np.ndarray:
        """Atoms lying on the sphere ``|u| = radius``."""
        hit = np.isclose(np.abs(self.atoms), radius, rtol=rtol, atol=0.0)
        return self.atoms[hit & (self.weights > 0)]

    def to_dict(self) -> dict:
        return {"kind": "atoms", "atoms": self.atoms.tolist(), "weights": self.weights.tolist()}


@dataclass(frozen=True, eq=False)
class DensityMeasure:
    """Finite measure ``rate * p(u) du`` with a piecewise-linear density.

    The normalized density is tabulated on ``nodes``. Marks are drawn by
    inverse-CDF interpolation on the same table.
    """

    rate: float
    nodes: np.ndarray
    pdf: np.ndarray
    label: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.nodes, dtype=float)
        p = np.array(self.pdf, dtype=float)
        if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
            raise DomainError("density nodes must be strictly increasing, length >= 2")
        if p.shape != x.shape or np.any(p < 0):
            raise DomainError("density values must be non-negative, one per node")
        if not (self.rate >= 0 and np.isfinite(self.rate)):
            raise DomainError("density measure rate must be finite and non-negative")
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(x))])
        if cdf[-1] <= 0:
            raise DomainError("density has zero mass")
        p = p / cdf[-1]
        cdf = cdf / cdf[-1]
        for a in (x, p, cdf):
            a.setflags(write=False)
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "pdf", p)
        object.__setattr__(self, "_cdf", cdf)

    @classmethod
    def uniform(cls, rate: float, lo: float, hi: float) -> "DensityMeasure":
        return cls(rate, [lo, hi], [1.0, 1.0], {"shape": "uniform", "lo": lo, "hi": hi})

    @classmethod
    def normal(cls, rate: float, mean: float, sd: float, n_nodes: int = 2001,
               width: float = 8.0) -> "DensityMeasure":
        u = np.linspace(mean - width * sd, mean + width * sd, n_nodes)
        return cls(rate, u, np.exp(-0.5 * ((u - mean) / sd) ** 2),
                   {"shape": "normal", "mean": mean, "sd": sd})

    def _inverse_cdf(self, q: np.ndarray) -> np.ndarray:
        # exact inverse of the piecewise-quadratic CDF of a piecewise-linear pdf
        x, p, c = self.nodes, self.pdf, self._cdf
        i = np.clip(np.searchsorted(c, q, side="right") - 1, 0, x.size - 2)
        h = x[i + 1] - x[i]
        slope = (p[i + 1] - p[i]) / h
        r = q - c[i]
        a, b = 0.5 * slope, p[i]
        disc = np.sqrt(np.maximum(b * b + 4 * a * r, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            lin = np.where(b > 0, r / np.where(b > 0, b, 1.0), 0.0)
            quad = 2 * r / np.where(b + disc > 0, b + disc, 1.0)
        s = np.where(np.abs(a) * h < 1e-14 * np.maximum(b, 1e-300), lin, quad)
        return x[i] + np.clip(s, 0.0, h)

    def sample_marks(self, gen: np.random.Generator, size: int) -> np.ndarray:
        if size == 0 or self.rate == 0:
            return np.empty(0)
        return self._inverse_cdf(gen.random(size))

    def _cells(self, lo: float, hi: float):
        # cells of the density table restricted to [lo, hi], with exact masses
        x = self.nodes
        cuts = np.unique(np.concatenate([[lo, hi], x[(x > lo) & (x < hi)]]))
        cuts = cuts[(cuts >= max(lo, x[0])) & (cuts <= min(hi, x[-1]))]
        if cuts.size < 2:
            return np.empty(0), np.empty(0)
        pc = np.interp(cuts, x, self.pdf)
        mass = 0.5 * (pc[1:] + pc[:-1]) * np.diff(cuts)
        # centroid of each trapezoid keeps the first moment exact
        h = np.diff(cuts)
        with np.errstate(invalid="ignore", divide="ignore"):
            cen = cuts[:-1] + h * (pc[:-1] + 2 * pc[1:]) / (3 * (pc[:-1] + pc[1:]))
        cen = np.where(mass > 0, cen, 0.5 * (cuts[:-1] + cuts[1:]))
        return cen, mass * self.rate

    def truncated_first_moment(self, rho: float) -> float:
        u, w = self._cells(-rho, rho)
        return float(np.sum(u * w))

    def discretize(self, rho: float):
        """Cell-centroid atoms for ``|u| <= rho`` and ``|u| > rho``."""
        small = self._cells(-rho, rho)
        lu, lw = self._cells(-np.inf, -rho)
        hu, hw = self._cells(rho, np.inf)
        return small, (np.concatenate([lu, hu]), np.concatenate([lw, hw]))

    def atoms_on(self, radius: float, rtol: float = 1e-12) -> np.ndarray:
        return np.empty(0)

    def to_dict(self) -> dict:
        if self.label.get("shape") == "uniform":
            return {"kind": "density", "shape": "uniform", "rate": self.rate,
                    "lo": self.label["lo"], "hi": self.label["hi"]}
        if self.label.get("shape") == "normal":
            return {"kind": "density", "shape": "normal", "rate": self.rate,
                    "mean": self.label["mean"], "sd": self.label["sd"]}
        return {"kind": "density", "shape": "table", "rate": self.rate,
                "nodes": self.nodes.tolist(), "pdf": self.pdf.tolist()}


def make_measure(spec):
    """Build a jump measure from a config mapping (``None`` means no jumps)."""
    if spec is None or isinstance(spec, (AtomicMeasure, DensityMeasure)):
        return spec
    kind = spec.get("kind", "atoms" if "atoms" in spec else "density")
    try:
        if kind == "atoms":
            return AtomicMeasure(spec["atoms"], spec["weights"])
        if kind == "density":
            shape = spec.get("shape", "table")
            if shape == "uniform":
                return DensityMeasure.uniform(spec["rate"], spec["lo"], spec["hi"])
            if shape == "normal":
                return DensityMeasure.normal(spec["rate"], spec["mean"], spec["sd"])
            return DensityMeasure(spec["rate"], spec["nodes"], spec["pdf"])
    except KeyError as exc:
        raise DomainError(f"jump measure is missing {exc.args[0]!r}") from exc
    raise DomainError(f"unknown jump measure kind {kind!r}")


# ---------------------------------------------------------------------------
# model records

REGIMES = ("repulsive", "attractive")


def _field(f) -> CoefficientField:
    if isinstance(f, CoefficientField):
        return f
    if isinstance(f, Mapping) and "plus" in f:
        return CoefficientField(f["plus"], f["minus"])
    return CoefficientField(make_function(f), make_function(f))


def _check_shape(name, f, shape):
    if f.shape != shape:
        raise DomainError(f"{name} has value shape {f.shape}, expected {shape}")


@dataclass(frozen=True)
class SmallNoiseModel:
    """Small-noise system with a signed-power fast drift.

    The slow state ``x`` in R^d follows ``drift(x, y) dt + eps slow_noise dB``
    and the fast state ``y`` follows
    ``rate(x, y) signed_pow(y, gamma) dt + eps fast_noise dW``, started at
    ``(x0, 0)``.

    Parameters
    ----------
    d : int
        Slow dimension.
    gamma : float
        Hölder exponent, ``0 < gamma < 1``.
    drift : CoefficientField
        Vector field, value shape ``(d,)``.
    rate : CoefficientField
        Scalar fast-drift coefficient.
    fast_noise : CoefficientField
        Scalar fast diffusion coefficient.
    slow_noise : CoefficientField
        Matrix field of shape ``(d, d)`` multiplying the slow Brownian motion.
    x0 : sequence of float
    regime : {"repulsive", "attractive"}
    noise_corr : float
        Correlation between the first slow driver and the fast driver.
    """

    d: int
    gamma: float
    drift: CoefficientField
    rate: CoefficientField
    fast_noise: CoefficientField
    slow_noise: CoefficientField
    x0: tuple
    regime: str = "repulsive"
    noise_corr: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "gamma", check_exponent(self.gamma))
        if int(self.d) != self.d or self.d < 1:
            raise DomainError("slow dimension d must be a positive integer")
        object.__setattr__(self, "d", int(self.d))
        for name in ("drift", "rate", "fast_noise", "slow_noise"):
            object.__setattr__(self, name, _field(getattr(self, name)))
        _check_shape("drift", self.drift, (self.d,))
        _check_shape("rate", self.rate, ())
        _check_shape("fast_noise", self.fast_noise, ())
        _check_shape("slow_noise", self.slow_noise, (self.d, self.d))
        x0 = tuple(float(v) for v in np.ravel(self.x0))
        if len(x0) != self.d:
            raise DomainError(f"x0 has length {len(x0)}, expected {self.d}")
        object.__setattr__(self, "x0", x0)
        if self.regime not in REGIMES:
            raise DomainError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if not -1.0 <= float(self.noise_corr) <= 1.0:
            raise DomainError("noise_corr must lie in [-1, 1]")
        object.__setattr__(self, "noise_corr", float(self.noise_corr))

    @classmethod
    def constant(
        cls,
        gamma: float,
        rate_plus: float,
        rate_minus: float,
        noise_plus: float = 1.0,
        noise_minus: float | None = None,
        drift_plus=0.0,
        drift_minus=None,
        slow_noise: float = 0.0,
        x0=0.0,
        regime: str | None = None,
        noise_corr: float = 0.0,
    ) -> "SmallNoiseModel":
        """Model with constant coefficients on each side.

        ``regime`` defaults from the sign of ``rate_plus``.
        """
        dp = np.atleast_1d(np.asarray(drift_plus, dtype=float))
        dm = dp if drift_minus is None else np.atleast_1d(np.asarray(drift_minus, float))
        d = dp.size
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), (d,))
        if regime is None:
            regime = "repulsive" if rate_plus > 0 else "attractive"
        return cls(
            d=d,
            gamma=gamma,
            drift=CoefficientField.constant(dp, dm),
            rate=CoefficientField.constant(rate_plus, rate_minus),
            fast_noise=CoefficientField.constant(
                noise_plus, noise_plus if noise_minus is None else noise_minus
            ),
            slow_noise=CoefficientField.constant(slow_noise * np.eye(d)),
            x0=tuple(x0),
            regime=regime,
            noise_corr=noise_corr,
        )

    def frozen(self, x=None):
        """Rate and noise values of both branches at ``(x, 0)``.

        Returns
        -------
        tuple of float
            ``(rate_plus, rate_minus, noise_plus, noise_minus)``.
        """
        x = np.asarray(self.x0 if x is None else x, dtype=float).reshape(1, self.d)
        zero = np.zeros(1)
        return (
            float(self.rate.plus(x, zero)[0]),
            float(self.rate.minus(x, zero)[0]),
            float(self.fast_noise.plus(x, zero)[0]),
            float(self.fast_noise.minus(x, zero)[0]),
        )

    def to_dict(self) -> dict:
        return {
            "kind": "small-noise",
            "d": self.d,
            "gamma": self.gamma,
            "regime": self.regime,
            "x0": list(self.x0),
            "noise_corr": self.noise_corr,
            "drift": self.drift.to_dict(),
            "rate": self.rate.to_dict(),
            "fast_noise": self.fast_noise.to_dict(),
            "slow_noise": self.slow_noise.to_dict(),
        }


@dataclass(frozen=True)
class TwoScaleModel:
    """Slow-fast jump-diffusion in partially compensated form.

    Slow state ``x`` in R^d, fast state ``y`` in R^k::

        dx = slow_drift dt + slow_diffusion dB + slow_jump(x, y) u [N(dt, du) - 1{|u|<=cutoff} nu(du) dt]
        dy = eps^-1 fast_drift dt + eps^-1/2 fast_diffusion dW
             + fast_jump(x, y) z [Q(dt, dz) - 1{|z|<=cutoff} eps^-1 mu(dz) dt]

    ``N`` has intensity ``nu`` and ``Q`` has intensity ``eps^-1 mu``. Jump
    amplitudes are linear in a scalar mark. ``residual`` is an optional
    deterministic function of time added to the slow state.

    The dissipativity constants describe the declared bound
    ``fast_drift(x, y) . y <= -diss_const |y|^(diss_exponent + 1)`` for
    ``|y| >= diss_radius``. ``moment_exponent`` is the declared order of
    the fast initial moment.
    """

    d: int
    k: int
    slow_drift: CoefficientField
    slow_diffusion: CoefficientField
    fast_drift: CoefficientField
    fast_diffusion: CoefficientField
    slow_jump: CoefficientField | None = None
    fast_jump: CoefficientField | None = None
    slow_measure: AtomicMeasure | DensityMeasure | None = None
    fast_measure: AtomicMeasure | DensityMeasure | None = None
    cutoff: float = 1.0
    diss_exponent: float = 1.0
    diss_const: float = 1.0
    diss_radius: float = 1.0
    moment_exponent: float = 2.0
    x0: tuple = (0.0,)
    y0: tuple = (0.0,)
    residual: Callable | None = None

    def __post_init__(self):
        for name in ("d", "k"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DomainError(f"{name} must be a positive integer")
            object.__setattr__(self, name, int(v))
        d, k = self.d, self.k
        for name in ("slow_drift", "slow_diffusion", "fast_drift", "fast_diffusion"):
            object.__setattr__(self, name, _field(getattr(self, name)))
        for name in ("slow_jump", "fast_jump"):
            v = getattr(self, name)
            object.__setattr__(self, name, None if v is None else _field(v))
        object.__setattr__(self, "slow_measure", make_measure(self.slow_measure))
        object.__setattr__(self, "fast_measure", make_measure(self.fast_measure))
        _check_shape("slow_drift", self.slow_drift, (d,))
        _check_shape("slow_diffusion", self.slow_diffusion, (d, d))
        ok_fast = ((k,), ()) if k == 1 else ((k,),)
        ok_fast2 = ((k, k), ()) if k == 1 else ((k, k),)
        if self.fast_drift.shape not in ok_fast:
            raise DomainError(f"fast_drift has shape {self.fast_drift.shape}, expected {(k,)}")
        if self.fast_diffusion.shape not in ok_fast2:
            raise DomainError(
                f"fast_diffusion has shape {self.fast_diffusion.shape}, expected {(k, k)}"
            )
        if self.slow_measure is not None and self.slow_jump is None:
            raise DomainError("slow jump measure given without slow_jump amplitude")
        if self.fast_measure is not None and self.fast_jump is None:
            raise DomainError("fast jump measure given without fast_jump amplitude")
        if self.slow_jump is not None:
            _check_shape("slow_jump", self.slow_jump, (d,))
        if self.fast_jump is not None and self.fast_jump.shape not in ok_fast:
            raise DomainError(f"fast_jump has shape {self.fast_jump.shape}, expected {(k,)}")
        if not (self.cutoff > 0 and np.isfinite(self.cutoff)):
            raise DomainError("cutoff must be a positive finite number")
        x0 = tuple(float(v) for v in np.ravel(self.x0))
        y0 = tuple(float(v) for v in np.ravel(self.y0))
        if len(x0) != d or len(y0) != k:
            raise DomainError("x0 / y0 lengths do not match d / k")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "y0", y0)
        for name in ("cutoff", "diss_exponent", "diss_const", "diss_radius", "moment_exponent"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def to_dict(self) -> dict:
        out = {
            "kind": "two-scale",
            "d": self.d,
            "k": self.k,
            "x0": list(self.x0),
            "y0": list(self.y0),
            "cutoff": self.cutoff,
            "diss_exponent": self.diss_exponent,
            "diss_const": self.diss_const,
            "diss_radius": self.diss_radius,
            "moment_exponent": self.moment_exponent,
        }
        for name in ("slow_drift", "slow_diffusion", "fast_drift", "fast_diffusion",
                     "slow_jump", "fast_jump"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v.to_dict()
        for name in ("slow_measure", "fast_measure"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v.to_dict()
        return out


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class GridSpec:
    """Finite sampling grid for assumption checks.

    ``points`` per axis on ``[lo, hi]`` for every slow coordinate and the
    fast coordinate. When ``center`` is given the slow grid covers the
    ball ``center +- radius`` instead. Grids above ``max_points`` fall back
    to a fixed scrambled Halton sample of that size.
    """

    points: int = 17
    lo: float = -5.0
    hi: float = 5.0
    center: tuple | None = None
    radius: float | None = None
    max_points: int = 200_000

    def __post_init__(self):
        if self.points < 1:
            raise DomainError("grid needs at least one point per axis")

    def slow_points(self, d: int) -> np.ndarray:
        if self.center is not None:
            c = np.asarray(self.center, dtype=float)
            lo, hi = c - self.radius, c + self.radius
        else:
            lo, hi = np.full(d, self.lo), np.full(d, self.hi)
        if self.points ** d > self.max_points:
            from scipy.stats import qmc

            u = qmc.Halton(d=d, scramble=True, seed=0).random(self.max_points)
            return lo + u * (hi - lo)
        axes = [np.linspace(lo[i], hi[i], self.points) for i in range(d)]
        return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, d)

    def fast_points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.points)


@dataclass(frozen=True)
class Check:
    """One assumption check: name, outcome, worst-case margin and witness."""

    name: str
    passed: bool
    detail: str
    margin: float | None = None
    witness: tuple | None = None


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def format(self) -> str:
        lines = []
        for c in self.checks:
            tag = "PASS" if c.passed else "FAIL"
            line = f"{tag} {c.name}: {c.detail}"
            if c.margin is not None:
                line += f" (margin {c.margin:.6g})"
            if not c.passed and c.witness is not None:
                line += f" at {c.witness}"
            lines.append(line)
        return "\n".join(lines)


def _pairs(grid: GridSpec, d: int, k: int = 1):
    xs = grid.slow_points(d)
    ys = grid.fast_points()
    if k == 1:
        X = np.repeat(xs, ys.size, axis=0)
        Y = np.tile(ys, xs.shape[0])
        return X, Y
    # fast grid for k > 1: product over coordinates capped like the slow grid
    yk = GridSpec(grid.points, grid.lo, grid.hi, max_points=grid.max_points).slow_points(k)
    X = np.repeat(xs, yk.shape[0], axis=0)
    Y = np.tile(yk, (xs.shape[0], 1))
    return X, Y


def _finite_bounded(name: str, fields: dict, X, Y) -> Check:
    for fname, f in fields.items():
        if f is None:
            continue
        try:
            v = eval_field(f, X, Y)
        except Exception as exc:  # EvaluationError carries the witness
            w = getattr(exc, "x", None)
            wit = None if w is None else (tuple(np.ravel(w)), tuple(np.ravel(exc.y)))
            return Check(name, False, f"{fname} is not finite on the grid", None, wit)
        b = f.bound
        if b is not None:
            excess = np.abs(v).reshape(v.shape[0], -1).max(axis=1) - b
            i = int(np.argmax(excess))
            if excess[i] > 1e-12 * max(1.0, b):
                return Check(name, False, f"{fname} exceeds its declared bound {b}",
                             float(-excess[i]), (tuple(X[i]), float(np.ravel(Y[i])[0])))
    return Check(name, True, "all coefficients finite and within declared bounds")


def _validate_small_noise(m: SmallNoiseModel, grid: GridSpec) -> ValidationReport:
    checks = [Check("exponent-range", True, f"0 < gamma={m.gamma} < 1")]
    X, Y = _pairs(grid, m.d)
    checks.append(
        _finite_bounded("coefficients-bounded",
                        {"drift": m.drift, "rate": m.rate, "fast_noise": m.fast_noise,
                         "slow_noise": m.slow_noise}, X, Y)
    )
    xs = grid.slow_points(m.d)
    zero = np.zeros(xs.shape[0])
    sgn = 1.0 if m.regime == "repulsive" else -1.0
    worst, wit = np.inf, None
    for branch, fn in (("plus", m.rate.plus), ("minus", m.rate.minus)):
        v = sgn * fn(xs, zero)
        i = int(np.argmin(v))
        if v[i] < worst:
            worst, wit = float(v[i]), (tuple(xs[i]), 0.0, branch)
    rel = ">" if sgn > 0 else "<"
    checks.append(Check("sign-regime", worst > 0,
                        f"{m.regime}: rate(x, 0) {rel} 0 on both branches", worst, wit))
    nv = np.abs(eval_field(m.fast_noise, X, Y)) if checks[1].passed else None
    if nv is None:
        checks.append(Check("fast-noise-nondegenerate", False, "fast_noise not evaluable"))
    else:
        i = int(np.argmin(nv))
        checks.append(Check("fast-noise-nondegenerate", bool(nv[i] > 0),
                            "|fast_noise| bounded away from zero", float(nv[i]),
                            (tuple(X[i]), float(Y[i]))))
    return ValidationReport(tuple(checks))


def _validate_two_scale(m: TwoScaleModel, grid: GridSpec) -> ValidationReport:
    X, Y = _pairs(grid, m.d, m.k)
    fields = {"slow_drift": m.slow_drift, "slow_diffusion": m.slow_diffusion,
              "fast_drift": m.fast_drift, "fast_diffusion": m.fast_diffusion,
              "slow_jump": m.slow_jump, "fast_jump": m.fast_jump}
    checks = [_finite_bounded("coefficients-bounded", fields, X, Y)]
    Yk = Y.reshape(-1, m.k)
    ynorm = np.linalg.norm(Yk, axis=1)
    sel = ynorm >= m.diss_radius
    if not sel.any():
        checks.append(Check("fast-dissipativity", True,
                            "no grid point with |y| >= diss_radius"))
    elif not checks[0].passed:
        checks.append(Check("fast-dissipativity", False, "fast_drift not evaluable"))
    else:
        A = eval_field(m.fast_drift, X[sel], Y[sel]).reshape(-1, m.k)
        lhs = np.sum(A * Yk[sel], axis=1)
        rhs = -m.diss_const * ynorm[sel] ** (m.diss_exponent + 1)
        gap = rhs - lhs
        i = int(np.argmin(gap))
        checks.append(Check(
            "fast-dissipativity", bool(gap[i] >= -1e-12),
            f"fast_drift(x,y).y <= -{m.diss_const}|y|^{m.diss_exponent + 1} for |y| >= {m.diss_radius}",
            float(gap[i]), (tuple(X[sel][i]), tuple(Yk[sel][i]))))
    bal = m.diss_exponent + m.moment_exponent
    checks.append(Check("moment-balance", bal > 1,
                        f"diss_exponent + moment_exponent = {bal} > 1", bal - 1))
    bad = []
    for name, mu in (("slow_measure", m.slow_measure), ("fast_measure", m.fast_measure)):
        if mu is not None:
            hit = mu.atoms_on(m.cutoff)
            if hit.size:
                bad.append((name, float(hit[0])))
    checks.append(Check("cutoff-atoms", not bad,
                        f"no jump atom on |u| = cutoff = {m.cutoff}", None,
                        bad[0] if bad else None))
    return ValidationReport(tuple(checks))


def validate_model(m, grid: GridSpec | None = None) -> ValidationReport:
    """Check the standing assumptions of a model on a finite grid.

    Failures are returned as data: each :class:`Check` records pass/fail,
    the worst margin and the witnessing point.

    Parameters
    ----------
    m : SmallNoiseModel or TwoScaleModel
    grid : GridSpec, optional
        Defaults to 17 points per axis on ``[-5, 5]``.
    """
    grid = GridSpec() if grid is None else grid
    if isinstance(m, SmallNoiseModel):
        return _validate_small_noise(m, grid)
    if isinstance(m, TwoScaleModel):
        return _validate_two_scale(m, grid)
    raise DomainError(f"cannot validate object of type {type(m).__name__}")
