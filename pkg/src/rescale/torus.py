"""
Flat torus geometry and smooth scalar fields
============================================

Points on the flat torus ``[0, 2*pi)^d`` are plain float arrays of shape
``(d,)`` (a single point) or ``(n, d)`` (a batch).  Scalar fields carry their
gradient and Laplacian in closed form so that the killing rate built from
them is free of differencing noise.

Three kinds of fields are provided:

* :class:`FourierField` -- a finite real trigonometric series
  ``sum_k a_k cos(m_k . x) + b_k sin(m_k . x)``;
* :class:`ExpField` -- ``scale * exp(F)`` for a Fourier series ``F``;
* :class:`KappaField` (in :mod:`rescale.killing`) -- the killing rate built
  from a density and a drift potential.

Every field can be encoded for the compiled simulation kernel through
:meth:`SmoothField.code`.
"""
from collections import namedtuple
from dataclasses import dataclass
import numpy as np
from scipy.special import i0

from .errors import InvalidInputError

TWO_PI = 2.0 * np.pi

# kind codes understood by the compiled evaluator in ``_kernels``
KIND_FOURIER = 0
KIND_EXP = 1

FieldCode = namedtuple("FieldCode", ["kind", "modes", "a", "b", "scale"])


def wrap(raw):
    """
    Reduce coordinates modulo ``2*pi`` into ``[0, 2*pi)``.

    Parameters
    ----------
    raw : array_like
        Coordinates of one point ``(d,)`` or of a batch ``(n, d)``.

    Returns
    -------
    ndarray
        Wrapped coordinates, same shape as the input.

    Raises
    ------
    InvalidInputError
        If any coordinate is NaN or infinite.
    """
    x = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("torus coordinates must be finite")
    y = np.mod(x, TWO_PI)
    # np.mod(-1e-18, 2pi) rounds up to exactly 2pi
    y = np.where(y >= TWO_PI, 0.0, y)
    return y if y.ndim else float(y)


def torus_distance(x, y):
    """Euclidean distance on the flat torus (per-coordinate shortest arc)."""
    diff = np.abs(np.asarray(x, float) - np.asarray(y, float))
    diff = np.minimum(diff, TWO_PI - diff)
    return np.sqrt(np.sum(diff ** 2, axis=-1))


def _as_batch(x, dim):
    x = np.asarray(x)
    single = x.ndim == 1
    if x.ndim == 0:
        x = x.reshape(1)
        single = True
    if x.shape[-1] != dim:
        raise InvalidInputError(f"expected points of dimension {dim}, got shape {x.shape}")
    return np.atleast_2d(x), single


class SmoothField:
    """Scalar field on the torus with analytic first and second derivatives.

    Subclasses implement ``_value``, ``_gradient`` and ``_laplacian`` on
    batches of shape ``(n, d)``; the public methods accept a single point or
    a batch.
    """

    dim = 1
    name = "field"

    def value(self, x):
        xb, single = _as_batch(x, self.dim)
        v = self._value(xb)
        return v[0] if single else v

    def gradient(self, x):
        xb, single = _as_batch(x, self.dim)
        g = self._gradient(xb)
        return g[0] if single else g

    def laplacian(self, x):
        xb, single = _as_batch(x, self.dim)
        lap = self._laplacian(xb)
        return lap[0] if single else lap

    __call__ = value

    def code(self):
        raise NotImplementedError(f"{type(self).__name__} has no kernel encoding")

    def grid_values(self, n):
        """Values at the ``n**d`` cell centres of the uniform grid (C order)."""
        return self.value(cell_centres(n, self.dim))


def cell_centres(n, dim=1):
    """Cell centres of the uniform ``n``-per-axis grid, flattened in C order."""
    h = TWO_PI / n
    axis = (np.arange(n) + 0.5) * h
    if dim == 1:
        return axis[:, None]
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _canonical_mode(m):
    """Return (+1, m) or (-1, -m) so that the first non-zero entry is positive."""
    for v in m:
        if v > 0:
            return 1, tuple(m)
        if v < 0:
            return -1, tuple(-c for c in m)
    return 1, tuple(m)


class FourierField(SmoothField):
    """
    Real trigonometric polynomial on the d-torus.

    Parameters
    ----------
    modes : array_like of int, shape (M, d)
        Integer frequency vectors.
    a, b : array_like, shape (M,)
        Cosine and sine coefficients.
    """

    def __init__(self, modes, a, b=None, name="fourier"):
        modes = np.atleast_2d(np.asarray(modes, dtype=np.int64))
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.zeros_like(a) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
        if not (len(modes) == len(a) == len(b)):
            raise InvalidInputError("modes, a and b must have the same length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise InvalidInputError("Fourier coefficients must be finite")
        self.modes, self.a, self.b = self._merge(modes, a, b)
        self.dim = self.modes.shape[1]
        self.name = name

    @staticmethod
    def _merge(modes, a, b):
        acc = {}
        for m, ca, cb in zip(modes, a, b):
            sign, key = _canonical_mode(m)
            pa, pb = acc.get(key, (0.0, 0.0))
            acc[key] = (pa + ca, pb + sign * cb)
        keys = sorted(acc, key=lambda k: (sum(abs(v) for v in k), tuple(-v for v in k)))
        out_m = np.array(keys, dtype=np.int64).reshape(len(keys), len(modes[0]))
        out_a = np.array([acc[k][0] for k in keys])
        out_b = np.array([acc[k][1] if any(k) else 0.0 for k in keys])
        return out_m, out_a, out_b

    @classmethod
    def constant(cls, c, dim=1):
        return cls(np.zeros((1, dim), dtype=np.int64), [c], [0.0], name="constant")

    def _phases(self, x):
        return x @ self.modes.T.astype(float)

    def _value(self, x):
        ph = self._phases(x)
        return np.cos(ph) @ self.a + np.sin(ph) @ self.b

    def _gradient(self, x):
        ph = self._phases(x)
        coef = -np.sin(ph) * self.a + np.cos(ph) * self.b
        return coef @ self.modes.astype(float)

    def _laplacian(self, x):
        ph = self._phases(x)
        k2 = np.sum(self.modes.astype(float) ** 2, axis=1)
        return -(np.cos(ph) @ (self.a * k2) + np.sin(ph) @ (self.b * k2))

    def __mul__(self, other):
        if not isinstance(other, FourierField):
            return FourierField(self.modes, self.a * other, self.b * other, self.name)
        if other.dim != self.dim:
            raise InvalidInputError("cannot multiply fields of different dimension")
        modes, a, b = [], [], []
        for m1, a1, b1 in zip(self.modes, self.a, self.b):
            for m2, a2, b2 in zip(other.modes, other.a, other.b):
                # product-to-sum identities for (a1 cos p + b1 sin p)(a2 cos q + b2 sin q)
                modes += [m1 + m2, m1 - m2]
                a += [0.5 * (a1 * a2 - b1 * b2), 0.5 * (a1 * a2 + b1 * b2)]
                b += [0.5 * (a1 * b2 + b1 * a2), 0.5 * (b1 * a2 - a1 * b2)]
        return FourierField(np.array(modes), a, b, name=f"{self.name}*{other.name}")

    __rmul__ = __mul__

    def embed(self, axis, dim):
        """Lift a one-dimensional series to ``dim`` dimensions along ``axis``."""
        if self.dim != 1:
            raise InvalidInputError("only one-dimensional series can be embedded")
        modes = np.zeros((len(self.modes), dim), dtype=np.int64)
        modes[:, axis] = self.modes[:, 0]
        return FourierField(modes, self.a, self.b, self.name)

    def code(self):
        return FieldCode(KIND_FOURIER, self.modes, self.a, self.b, 1.0)

    def __repr__(self):
        return f"FourierField(dim={self.dim}, terms={len(self.a)}, name={self.name!r})"


class ExpField(SmoothField):
    """``scale * exp(inner)`` for a Fourier series ``inner``."""

    def __init__(self, inner, scale=1.0, name="exp"):
        self.inner = inner
        self.scale = float(scale)
        self.dim = inner.dim
        self.name = name

    def _value(self, x):
        return self.scale * np.exp(self.inner._value(x))

    def _gradient(self, x):
        return self._value(x)[:, None] * self.inner._gradient(x)

    def _laplacian(self, x):
        g = self.inner._gradient(x)
        return self._value(x) * (self.inner._laplacian(x) + np.sum(g * g, axis=1))

    def code(self):
        f = self.inner
        return FieldCode(KIND_EXP, f.modes, f.a, f.b, self.scale)

    def __repr__(self):
        return f"ExpField(dim={self.dim}, name={self.name!r})"


def trimodal(dim=1):
    """The three-peaked circle density ``(0.3 + sin^2(1.5 x)) / (1.6 pi)``.

    For ``dim > 1`` the product of the one-dimensional density over axes.
    """
    base = FourierField([[0], [3]], [0.8 / (1.6 * np.pi), -0.5 / (1.6 * np.pi)])
    field = base.embed(0, dim)
    for axis in range(1, dim):
        field = field * base.embed(axis, dim)
    field.name = "trimodal"
    return field


def cosexp(dim=1):
    """Normalised density proportional to ``exp(sum_j cos x_j)``."""
    modes = np.eye(dim, dtype=np.int64)
    inner = FourierField(modes, np.ones(dim))
    norm = (TWO_PI * i0(1.0)) ** dim
    return ExpField(inner, 1.0 / norm, name="cosexp")


def parse_fourier(spec, dim=1):
    """
    Parse a coefficient list.

    One dimension: ``"a0,a1,b1,a2,b2,..."`` for
    ``a0 + sum_m a_m cos(m x) + b_m sin(m x)``.
    Any dimension: ``"m1 .. md a b; m1 .. md a b; ..."``.
    """
    spec = spec.strip()
    if not spec:
        raise InvalidInputError("empty Fourier coefficient list")
    try:
        if ";" in spec or ("," not in spec and len(spec.split()) > 1):
            modes, a, b = [], [], []
            for term in filter(None, (t.strip() for t in spec.split(";"))):
                parts = term.split()
                if len(parts) != dim + 2:
                    raise InvalidInputError(f"Fourier term {term!r} needs {dim} modes and 2 coefficients")
                modes.append([int(p) for p in parts[:dim]])
                a.append(float(parts[dim]))
                b.append(float(parts[dim + 1]))
            return FourierField(modes, a, b, name="fourier")
        values = [float(v) for v in spec.split(",")]
    except ValueError as exc:
        raise InvalidInputError(f"bad Fourier coefficient list {spec!r}: {exc}") from None
    if dim != 1:
        raise InvalidInputError("the comma list form of fourier: is one-dimensional")
    nmodes = (len(values) - 1 + 1) // 2
    coeffs = values[1:] + [0.0] * (2 * nmodes - (len(values) - 1))
    modes = [[0]] + [[m] for m in range(1, nmodes + 1)]
    a = [values[0]] + coeffs[0::2]
    b = [0.0] + coeffs[1::2]
    return FourierField(modes, a, b, name="fourier")


BUILTIN_FIELDS = ("uniform", "zero", "trimodal", "cosexp", "fourier:<coefficients>")


def builtin_field(name, dim=1):
    """Look up a field by its configuration name."""
    name = name.strip()
    if name == "uniform":
        f = FourierField.constant(TWO_PI ** -dim, dim)
        f.name = "uniform"
        return f
    if name == "zero":
        f = FourierField.constant(0.0, dim)
        f.name = "zero"
        return f
    if name == "trimodal":
        return trimodal(dim)
    if name == "cosexp":
        return cosexp(dim)
    if name.startswith("fourier:"):
        return parse_fourier(name[len("fourier:"):], dim)
    raise InvalidInputError(f"unknown field {name!r}; expected one of {', '.join(BUILTIN_FIELDS)}")


@dataclass(frozen=True)
class FieldCheck:
    gradient_error: float
    laplacian_error: float
    n_points: int
    step: float


def field_check(f, n_points=1000, step=1e-4, rng=None):
    """
    Compare analytic derivatives against central finite differences.

    Returns the maximum absolute discrepancy over ``n_points`` uniform random
    points for the gradient (max over components) and the Laplacian.
    """
    if n_points < 1 or not step > 0:
        raise InvalidInputError("need n_points >= 1 and step > 0")
    rng = np.random.default_rng(0) if rng is None else rng
    x = rng.uniform(0.0, TWO_PI, size=(n_points, f.dim))
    f0 = f.value(x)
    fd_grad = np.empty((n_points, f.dim))
    fd_lap = np.zeros(n_points)
    for j in range(f.dim):
        e = np.zeros(f.dim)
        e[j] = step
        fp = f.value(x + e)
        fm = f.value(x - e)
        fd_grad[:, j] = (fp - fm) / (2 * step)
        fd_lap += (fp - 2 * f0 + fm) / step ** 2
    grad_err = float(np.max(np.abs(f.gradient(x) - fd_grad)))
    lap_err = float(np.max(np.abs(f.laplacian(x) - fd_lap)))
    return FieldCheck(grad_err, lap_err, n_points, step)


def cell_average_factor(modes, n):
    """Ratio of the cell average of ``exp(i m.x)`` to its value at the cell centre."""
    h = TWO_PI / n
    arg = 0.5 * h * np.asarray(modes, dtype=float)
    return np.prod(np.sinc(arg / np.pi), axis=-1)


def quadrature_grid(dim, n=None):
    """Periodic trapezoid nodes and weights (sum to 1 over the torus)."""
    if n is None:
        n = 4096 if dim == 1 else (256 if dim == 2 else 48)
    pts = cell_centres(n, dim)
    w = np.full(len(pts), 1.0 / len(pts))
    return pts, w


def normalising_constant(f, n=None):
    """Integral of ``f`` over the torus with respect to Lebesgue measure."""
    pts, w = quadrature_grid(f.dim, n)
    return float(np.sum(f.value(pts) * w) * TWO_PI ** f.dim)


def bin_masses(density, bins, dim=1, axis=0, order=8):
    """
    Masses of ``bins`` equal bins under a density, normalised to sum to one.

    For ``dim > 1`` the marginal along ``axis`` is returned, integrating the
    other coordinates with the periodic trapezoid rule.
    """
    nodes, weights = np.polynomial.legendre.leggauss(order)
    h = TWO_PI / bins
    lo = np.arange(bins) * h
    xs = (lo[:, None] + 0.5 * h * (nodes[None, :] + 1.0)).ravel()
    wq = np.tile(0.5 * h * weights, bins)
    if dim == 1:
        vals = density.value(xs[:, None])
        masses = (vals * wq).reshape(bins, order).sum(axis=1)
    else:
        others, wo = quadrature_grid(dim - 1, 64 if dim == 2 else 24)
        masses = np.empty(bins)
        for i in range(bins):
            seg = xs[i * order:(i + 1) * order]
            acc = 0.0
            for xq, wqq in zip(seg, wq[i * order:(i + 1) * order]):
                pts = np.insert(others, axis, xq, axis=1)
                acc += wqq * np.sum(density.value(pts) * wo)
            masses[i] = acc
    return masses / masses.sum()


def cell_masses(density, n, dim=1):
    """Cell-averaged density on the ``n``-per-axis grid as a probability vector."""
    if dim == 1:
        return bin_masses(density, n, 1)
    # tensor Gauss-Legendre inside each cell
    nodes, weights = np.polynomial.legendre.leggauss(4)
    h = TWO_PI / n
    centres = cell_centres(n, dim)
    total = np.zeros(len(centres))
    grids = np.meshgrid(*([np.arange(4)] * dim), indexing="ij")
    for idx in zip(*(g.ravel() for g in grids)):
        offset = np.array([0.5 * h * nodes[i] for i in idx])
        w = np.prod([weights[i] for i in idx])
        total += w * density.value(centres + offset)
    return total / total.sum()
