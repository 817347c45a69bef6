"""Random potentials ``x -> V(T_x omega)`` materialized on finite windows.

A realization is fixed by a seed and generator parameters. Randomness is drawn
per unit cell ``[k, k + 1)`` from a generator keyed by ``(seed, k)``, so any
two windows of the same realization agree bit-for-bit on their common nodes.
"""

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from numba import njit
from scipy import integrate

from ._kernels import hermite_eval_many
from ._validation import (
    ConfigurationError,
    WindowError,
    check_positive,
    check_unit_interval,
    check_window,
)

FORMAT_NAME = "hjhomog.PotentialField"
FORMAT_VERSION = 1
KINDS = ("poisson-mollified", "wiener-mollified", "periodic", "constant", "custom-samples")

# offsets keep cell indices nonnegative for SeedSequence
_CELL_OFFSET = 2 ** 40
_POISSON_TAG = 1
_WIENER_TAG = 2
_ROUNDOFF = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """Compactly supported C1 mollifier ``f`` on ``[-radius, radius]``.

    ``shape`` is ``"cos2"`` (``(1 + cos(pi s / r)) / 2r``) or ``"biweight"``
    (``15/16r (1 - (s/r)^2)^2``). ``mass`` scales the kernel and exists so
    that non-normalized kernels can be described and rejected.
    """

    radius: float = 1.0
    shape: str = "cos2"
    mass: float = 1.0

    def __post_init__(self):
        check_positive(self.radius, "kernel radius")
        if self.shape not in ("cos2", "biweight"):
            raise ConfigurationError(f"unknown kernel shape {self.shape!r}")

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        r = self.radius
        z = np.clip(s / r, -1.0, 1.0)
        if self.shape == "cos2":
            out = (1.0 + np.cos(np.pi * z)) / (2.0 * r)
        else:
            out = 15.0 / (16.0 * r) * (1.0 - z * z) ** 2
        return self.mass * np.where(np.abs(s) >= r, 0.0, out)

    def dpdf(self, s):
        s = np.asarray(s, dtype=float)
        r = self.radius
        z = np.clip(s / r, -1.0, 1.0)
        if self.shape == "cos2":
            out = -np.pi * np.sin(np.pi * z) / (2.0 * r * r)
        else:
            out = -15.0 / (4.0 * r * r) * z * (1.0 - z * z)
        return self.mass * np.where(np.abs(s) >= r, 0.0, out)

    def cdf(self, s):
        """``int_{-inf}^s f``; exactly 0 left of the support and ``mass`` right of it."""
        s = np.asarray(s, dtype=float)
        r = self.radius
        z = np.clip(s / r, -1.0, 1.0)
        if self.shape == "cos2":
            out = 0.5 * (1.0 + z + np.sin(np.pi * z) / np.pi)
        else:
            out = 15.0 / 16.0 * (z - 2.0 * z ** 3 / 3.0 + z ** 5 / 5.0) + 0.5
        out = np.where(s >= r, 1.0, np.where(s <= -r, 0.0, out))
        return self.mass * out

    @property
    def max_pdf(self):
        """sup f, which also bounds |V'| for any [0, 1]-valued convolution."""
        return float(self.pdf(0.0))

    @property
    def sup_dpdf(self):
        if self.shape == "cos2":
            return self.mass * math.pi / (2.0 * self.radius ** 2)
        return self.mass * 15.0 / (4.0 * self.radius ** 2) * (2.0 / (3.0 * math.sqrt(3.0)))

    def integral(self):
        val, _ = integrate.quad(lambda s: float(self.pdf(s)), -self.radius, self.radius,
                                epsabs=1e-13, epsrel=1e-12, limit=200)
        return val

    def validate(self):
        total = self.integral()
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(f"kernel integrates to {total!r}, not 1")
        return self

    def to_dict(self):
        return {"radius": self.radius, "shape": self.shape, "mass": self.mass}


@dataclass(frozen=True, eq=False)
class PotentialField:
    """Samples of V and V' on the nodes ``(n0 + i) * grid_step``.

    Immutable; the arrays are flagged read-only. ``params`` holds whatever
    the generator needs to rebuild the realization.
    """

    n0: int
    grid_step: float
    values: np.ndarray
    derivative_values: np.ndarray
    kind: str
    seed: int = 0
    params: dict = dc_field(default_factory=dict)
    kernel_spec: KernelSpec = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown field kind {self.kind!r}")
        vals = np.array(self.values, dtype=float)
        ders = np.array(self.derivative_values, dtype=float)
        if vals.ndim != 1 or vals.shape != ders.shape or vals.size < 2:
            raise ConfigurationError("values and derivative_values must be equal 1-d arrays")
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(ders))):
            raise ConfigurationError("field samples must be finite")
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise ConfigurationError("field values must lie in [0, 1]")
        vals.flags.writeable = False
        ders.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "derivative_values", ders)
        object.__setattr__(self, "n0", int(self.n0))
        object.__setattr__(self, "grid_step", float(self.grid_step))

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def window(self):
        return (self.n0 * self.grid_step, (self.n0 + self.n - 1) * self.grid_step)

    @property
    def nodes(self):
        return (self.n0 + np.arange(self.n)) * self.grid_step

    @property
    def sup_level(self):
        """Essential supremum of the potential law used as the free-energy floor.

        Generators satisfying the normalization report 1; a constant field
        reports its level, custom samples their maximum.
        """
        if self.kind == "constant":
            return float(self.params["level"])
        if self.kind == "custom-samples":
            return float(self.values.max())
        return 1.0

    @property
    def satisfies_valley_hill(self):
        return self.kind != "constant"

    def covers(self, lo, hi):
        wlo, whi = self.window
        tol = 1e-9 * self.grid_step
        return lo >= wlo - tol and hi <= whi + tol

    def evaluate(self, x):
        """Return ``(V(x), V'(x))`` from the cubic Hermite interpolant.

        Accepts scalars or arrays. Queries outside the window raise
        :class:`WindowError`.
        """
        scalar = np.ndim(x) == 0
        xs = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=float)).ravel())
        val = np.empty_like(xs)
        der = np.empty_like(xs)
        bad = hermite_eval_many(xs, float(self.n0), self.grid_step,
                                self.values, self.derivative_values, val, der)
        if bad:
            lo, hi = self.window
            raise WindowError(f"{bad} queries outside window [{lo}, {hi}]")
        # cubic overshoot between nodes is O(h^3); keep values in [0, 1]
        np.clip(val, 0.0, 1.0, out=val)
        if scalar:
            return float(val[0]), float(der[0])
        shape = np.shape(x)
        return val.reshape(shape), der.reshape(shape)

    def shifted(self, s):
        """The environment ``T_s omega``: same samples, origin moved by ``s``.

        ``s`` must be a multiple of ``grid_step``.
        """
        k = round(s / self.grid_step)
        if abs(k * self.grid_step - s) > 1e-9 * max(1.0, abs(s)):
            raise ConfigurationError("shift must be a multiple of grid_step")
        return PotentialField(self.n0 - k, self.grid_step, self.values,
                              self.derivative_values, self.kind, self.seed,
                              dict(self.params, shift=self.params.get("shift", 0) + k),
                              self.kernel_spec)

    def to_dict(self):
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "seed": int(self.seed),
            "params": self.params,
            "kernel_spec": None if self.kernel_spec is None else self.kernel_spec.to_dict(),
            "n0": self.n0,
            "grid_step": self.grid_step,
            "values": self.values.tolist(),
            "derivative_values": self.derivative_values.tolist(),
        }

    def to_json(self):
        # repr-based float encoding round-trips exactly
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != FORMAT_NAME:
            raise ConfigurationError("not a serialized PotentialField")
        if data.get("version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported field format version {data.get('version')!r}")
        kernel = data.get("kernel_spec")
        return cls(
            n0=data["n0"],
            grid_step=data["grid_step"],
            values=np.array(data["values"], dtype=float),
            derivative_values=np.array(data["derivative_values"], dtype=float),
            kind=data["kind"],
            seed=data["seed"],
            params=data["params"],
            kernel_spec=None if kernel is None else KernelSpec(**kernel),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


@dataclass(frozen=True)
class TerrainFeature:
    a: float
    b: float
    level: float
    feature_kind: str

    @property
    def length(self):
        return self.b - self.a

    @property
    def center(self):
        return 0.5 * (self.a + self.b)


def _node_range(window, grid_step):
    lo, hi = check_window(window)
    check_positive(grid_step, "grid_step")
    n_lo = math.floor(lo / grid_step + 1e-9)
    n_hi = math.ceil(hi / grid_step - 1e-9)
    return n_lo, n_hi - n_lo + 1


def _cell_rng(seed, tag, k):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag, int(k) + _CELL_OFFSET))
    return np.random.Generator(np.random.PCG64(ss))


def poisson_points(seed, rate, lo, hi):
    """Points of a rate-``rate`` Poisson process in the unit cells covering [lo, hi]."""
    pts = []
    for k in range(math.floor(lo), math.floor(hi) + 1):
        rng = _cell_rng(seed, _POISSON_TAG, k)
        count = rng.poisson(rate) if rate > 0 else 0
        pts.append(np.sort(k + rng.random(count)))
    return np.concatenate(pts) if pts else np.empty(0)


def _merge_unit_intervals(points):
    """Union of ``[p, p + 1)`` over the points, as sorted disjoint intervals."""
    out = []
    for p in points:
        if out and p <= out[-1][1]:
            out[-1][1] = max(out[-1][1], p + 1.0)
        else:
            out.append([p, p + 1.0])
    return out


def _guard_roundoff(vals):
    if vals.min() < -_ROUNDOFF or vals.max() > 1.0 + _ROUNDOFF:
        raise ConfigurationError("generated field left [0, 1] beyond round-off")
    return np.clip(vals, 0.0, 1.0)


def generate_mollified(seed, process, rate_or_scale, kernel_spec, window, grid_step):
    """Generate ``V(x) = int f(x - y) g(L_y - L_{y-1}) dy``, ``g(a) = (a v 0) ^ 1``.

    For the Poisson process ``g(L_y - L_{y-1})`` is the indicator of the union
    of ``[p, p + 1)`` over the points ``p`` and the convolution is evaluated in
    closed form through the kernel CDF. For the Wiener process the increments
    live on a lattice ten times finer than ``grid_step`` and the convolution is
    a normalized trapezoid sum on that lattice.
    """
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ConfigurationError("seed must be a 64-bit unsigned integer")
    if process not in ("poisson", "wiener"):
        raise ConfigurationError(f"process must be 'poisson' or 'wiener', got {process!r}")
    rate = check_positive(rate_or_scale, "rate_or_scale", allow_zero=process == "poisson")
    if kernel_spec is None:
        kernel_spec = KernelSpec()
    kernel_spec.validate()
    check_positive(grid_step, "grid_step")
    if grid_step > 0.5 * kernel_spec.radius:
        raise ConfigurationError("grid_step exceeds half the kernel radius (undersampled)")
    n0, n = _node_range(window, grid_step)
    xs = (n0 + np.arange(n)) * grid_step
    r = kernel_spec.radius
    if process == "poisson":
        vals, ders = _poisson_convolution(seed, rate, kernel_spec, xs)
        kind = "poisson-mollified"
    else:
        vals, ders = _wiener_convolution(seed, rate, kernel_spec, n0, n, grid_step)
        kind = "wiener-mollified"
    params = {"process": process, "rate_or_scale": rate, "radius": r}
    return PotentialField(n0, grid_step, _guard_roundoff(vals), ders, kind, seed,
                          params, kernel_spec)


def _poisson_convolution(seed, rate, kernel, xs):
    r = kernel.radius
    pts = poisson_points(seed, rate, xs[0] - r - 1.0, xs[-1] + r)
    vals = np.zeros_like(xs)
    ders = np.zeros_like(xs)
    step = xs[1] - xs[0] if xs.size > 1 else 1.0
    for a, b in _merge_unit_intervals(pts):
        i0 = max(0, int(math.floor((a - r - xs[0]) / step)) - 1)
        i1 = min(xs.size, int(math.ceil((b + r - xs[0]) / step)) + 2)
        if i0 >= i1:
            continue
        x = xs[i0:i1]
        vals[i0:i1] += kernel.cdf(x - a) - kernel.cdf(x - b)
        ders[i0:i1] += kernel.pdf(x - a) - kernel.pdf(x - b)
    return vals, ders


@njit(cache=True)
def _rolling_increment_sums(dw, m):
    out = np.empty(dw.shape[0] - m + 1)
    for j in range(out.shape[0]):
        acc = 0.0
        for i in range(m):
            acc += dw[j + i]
        out[j] = acc
    return out


@njit(cache=True)
def _lattice_convolution(g, centers, fw, dfw):
    # centers index g at the node; fw[d] weights offset d - D
    nd = fw.shape[0]
    big_d = (nd - 1) // 2
    vals = np.empty(centers.shape[0])
    ders = np.empty(centers.shape[0])
    norm = 0.0
    for d in range(nd):
        norm += fw[d]
    for i in range(centers.shape[0]):
        acc = 0.0
        dacc = 0.0
        c = centers[i]
        for d in range(nd):
            gv = g[c - (d - big_d)]
            acc += fw[d] * gv
            dacc += dfw[d] * gv
        vals[i] = acc / norm
        ders[i] = dacc / norm
    return vals, ders


def _wiener_convolution(seed, scale, kernel, n0, n, grid_step):
    hf = grid_step / 10.0
    m = round(1.0 / hf)
    if abs(m * hf - 1.0) > 1e-9:
        raise ConfigurationError("wiener generator needs 1/grid_step to be an integer")
    r = kernel.radius
    big_d = int(math.floor(r / hf + 1e-9))
    offsets = np.arange(-big_d, big_d + 1) * hf
    fw = kernel.pdf(offsets)
    dfw = kernel.dpdf(offsets)
    # fine lattice index J of node i is 10 (n0 + i); need g on [J_min - D, J_max + D]
    j_min = 10 * n0 - big_d
    j_max = 10 * (n0 + n - 1) + big_d
    # g_j needs increments dW_{j-m} .. dW_{j-1}
    i_lo = j_min - m
    k_lo = math.floor(i_lo / m)
    k_hi = math.floor((j_max - 1) / m)
    chunks = []
    for k in range(k_lo, k_hi + 1):
        rng = _cell_rng(seed, _WIENER_TAG, k)
        chunks.append(scale * math.sqrt(hf) * rng.standard_normal(m))
    dw = np.concatenate(chunks)
    base = k_lo * m
    dw = dw[i_lo - base: j_max - base]
    sums = _rolling_increment_sums(dw, m)  # sums[q] belongs to j = j_min + q
    g = np.clip(sums, 0.0, 1.0)
    centers = 10 * (n0 + np.arange(n)) - j_min
    # g[c - (d - D)] pairs with f((d - D) hf) and f'((d - D) hf)
    vals, ders = _lattice_convolution(g, centers.astype(np.int64), fw, dfw)
    return vals, ders


def generate_periodic(period, window, grid_step):
    """``V(x) = (1 - cos(2 pi x / period)) / 2``."""
    period = check_positive(period, "period")
    n0, n = _node_range(window, grid_step)
    xs = (n0 + np.arange(n)) * grid_step
    arg = 2.0 * np.pi * xs / period
    vals = 0.5 * (1.0 - np.cos(arg))
    ders = np.pi / period * np.sin(arg)
    return PotentialField(n0, grid_step, vals, ders, "periodic", 0, {"period": period})


def generate_constant(level, window, grid_step):
    """``V == level``; violates the valley/hill assumption and is tagged so."""
    level = check_unit_interval(level, "level")
    n0, n = _node_range(window, grid_step)
    return PotentialField(n0, grid_step, np.full(n, level), np.zeros(n), "constant", 0,
                          {"level": level, "violates": ["valley-hill"]})


def from_samples(values, derivative_values, window_lo, grid_step):
    """Wrap user samples; ``window_lo`` must be a multiple of ``grid_step``."""
    grid_step = check_positive(grid_step, "grid_step")
    n0 = round(window_lo / grid_step)
    if abs(n0 * grid_step - window_lo) > 1e-9 * max(1.0, abs(window_lo)):
        raise ConfigurationError("window_lo must be a multiple of grid_step")
    return PotentialField(n0, grid_step, values, derivative_values, "custom-samples", 0, {})


def regenerate(field, window=None):
    """Rebuild the realization behind ``field``, optionally on another window."""
    window = field.window if window is None else window
    shift = field.params.get("shift", 0) * field.grid_step
    base_window = (window[0] + shift, window[1] + shift)
    if field.kind in ("poisson-mollified", "wiener-mollified"):
        out = generate_mollified(field.seed, field.params["process"],
                                 field.params["rate_or_scale"], field.kernel_spec,
                                 base_window, field.grid_step)
    elif field.kind == "periodic":
        out = generate_periodic(field.params["period"], base_window, field.grid_step)
    elif field.kind == "constant":
        out = generate_constant(field.params["level"], base_window, field.grid_step)
    else:
        raise ConfigurationError("custom samples cannot be regenerated")
    return out.shifted(shift) if shift else out


def find_features(field, h, min_length, kinds=("valley", "hill")):
    """All maximal node runs of length >= ``min_length`` with V <= h (valley) or V >= h (hill).

    Runs are maximal under inclusion; two runs separated by one violating
    node stay separate.
    """
    h = check_unit_interval(h, "h", open_=True)
    min_length = check_positive(min_length, "min_length")
    if min_length < field.grid_step:
        raise ConfigurationError("min_length must be at least grid_step")
    out = []
    nodes = field.nodes
    for kind in kinds:
        mask = field.values <= h if kind == "valley" else field.values >= h
        padded = np.concatenate(([False], mask, [False]))
        edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
        for start, stop in zip(edges[::2], edges[1::2]):
            a, b = nodes[start], nodes[stop - 1]
            if b - a >= min_length - 1e-9 * field.grid_step:
                out.append(TerrainFeature(float(a), float(b), h, kind))
    out.sort(key=lambda f: (f.a, f.feature_kind))
    return out


def lowest_valley(field, length, h_grid=None, within=None):
    """Lowest-level valley of at least ``length`` (None if none).

    ``within`` restricts the search to valleys contained in ``(lo, hi)``.
    """
    h_grid = np.linspace(0.02, 0.98, 49) if h_grid is None else h_grid
    for h in h_grid:
        feats = find_features(field, float(h), length, kinds=("valley",))
        if within is not None:
            feats = [f for f in feats if f.a >= within[0] and f.b <= within[1]]
        if feats:
            best = max(feats, key=lambda f: f.length)
            return best
    return None


def audit_assumptions(field, h_list=(0.25, 0.75), y_list=(1.0,)):
    """Report how the window witnesses the normalization and valley/hill assumptions.

    A finite window can only witness features, never certify the
    probabilistic statement; the report always says so.
    """
    vmin = float(field.values.min())
    vmax = float(field.values.max())
    tol = 1e-3
    report = {
        "kind": field.kind,
        "seed": int(field.seed),
        "window": list(field.window),
        "grid_step": field.grid_step,
        "min": vmin,
        "max": vmax,
        "sup_abs_derivative": float(np.abs(field.derivative_values).max()),
        "range_ok": bool(vmin >= 0.0 and vmax <= 1.0),
        "normalization_ok": bool(vmin <= tol and vmax >= 1.0 - tol),
        "features": [],
        "caveat": ("finite-window audit: features found in this window witness, but "
                   "cannot certify, the positive-probability valley/hill condition"),
    }
    if field.kind == "constant":
        report["tagged_violations"] = list(field.params.get("violates", []))
    all_found = True
    for h in h_list:
        for y in y_list:
            feats = find_features(field, h, max(y, field.grid_step))
            valley = any(f.feature_kind == "valley" for f in feats)
            hill = any(f.feature_kind == "hill" for f in feats)
            all_found &= valley and hill
            report["features"].append({"h": float(h), "y": float(y),
                                       "valley": valley, "hill": hill})
    report["valley_hill_witnessed"] = bool(all_found)
    return report
