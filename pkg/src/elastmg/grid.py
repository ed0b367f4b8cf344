"""
Staggered (MAC) grid geometry, field storage and media models.

Displacement component ``u_k`` lives on the faces normal to axis ``k`` (shape
``dims`` with axis ``k`` incremented by one), the pressure ``p`` lives in the
cell centers (shape ``dims``). All arrays are stored C-contiguous with axis 0
slowest; a :class:`FieldVector` keeps the components back to back in one flat
complex array ``[u_0, u_1, (u_2,) p]`` so Krylov methods can work on it
directly.

Axis ``ndim - 1`` is the depth axis; index 0 along it is the top surface.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ['StaggeredGrid', 'MediaModel', 'FieldVector',
           'average_cell_to_edge', 'average_cell_to_face',
           'build_attenuation_profile', 'make_point_source', 'top_center_index',
           'write_field', 'read_field', 'write_section_csv']


@dataclass(frozen=True)
class StaggeredGrid:
    """Regular MAC grid with ``dims`` cells of size ``h`` per axis."""

    dims: tuple
    h: tuple

    def __init__(self, dims, h=1.0):
        dims = tuple(int(n) for n in dims)
        if np.isscalar(h):
            h = (float(h),)*len(dims)
        h = tuple(float(v) for v in h)
        if len(dims) not in (2, 3):
            raise ValueError(f"only 2D and 3D grids are supported, got {dims}")
        if len(h) != len(dims):
            raise ValueError("h must have one entry per axis")
        if min(dims) < 2:
            raise ValueError(f"all dims must be >= 2, got {dims}")
        if min(h) <= 0:
            raise ValueError(f"all spacings must be > 0, got {h}")
        object.__setattr__(self, 'dims', dims)
        object.__setattr__(self, 'h', h)

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def ncells(self):
        return int(np.prod(self.dims))

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    def u_shape(self, axis):
        shape = list(self.dims)
        shape[axis] += 1
        return tuple(shape)

    @property
    def p_shape(self):
        return self.dims

    @property
    def shapes(self):
        """Array shapes of all components, displacements first."""
        return [self.u_shape(k) for k in range(self.ndim)] + [self.p_shape]

    @property
    def sizes(self):
        return [int(np.prod(s)) for s in self.shapes]

    @property
    def offsets(self):
        """Start index of every component in the flat vector (plus the end)."""
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)

    @property
    def ndof(self):
        return int(sum(self.sizes))

    @property
    def n_u(self):
        return int(sum(self.sizes[:-1]))

    def coarsen(self):
        """Grid with every dimension halved and the spacing doubled."""
        if any(n % 2 for n in self.dims):
            raise ValueError(f"cannot coarsen odd grid dims {self.dims}")
        return StaggeredGrid([n//2 for n in self.dims], [2*v for v in self.h])

    def split(self, flat):
        """Views of the components of a flat vector, reshaped to their arrays."""
        off = self.offsets
        return [flat[off[c]:off[c+1]].reshape(s) for c, s in enumerate(self.shapes)]

    def extent(self):
        return tuple(n*v for n, v in zip(self.dims, self.h))


@dataclass
class MediaModel:
    """Cell-centered Lamé parameters, density and attenuation.

    ``gamma`` is the total attenuation field: physical attenuation plus the
    absorbing-layer profile (see :func:`build_attenuation_profile`).
    """

    lam: np.ndarray
    mu: np.ndarray
    rho: np.ndarray
    gamma: np.ndarray = None

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        if self.gamma is None:
            self.gamma = np.zeros_like(self.lam)
        self.gamma = np.asarray(self.gamma, dtype=float)
        shape = self.lam.shape
        for name in ('mu', 'rho', 'gamma'):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if np.any(self.rho <= 0):
            raise ValueError("density must be positive everywhere")
        if np.any(self.mu <= 0):
            raise ValueError("shear modulus mu must be positive everywhere")
        if np.any(self.lam + self.mu <= 0):
            raise ValueError("lambda + mu must be positive everywhere")
        if np.any(self.gamma < 0):
            raise ValueError("attenuation must be non-negative")

    @classmethod
    def homogeneous(cls, grid, lam, mu, rho, gamma=0.0):
        full = lambda v: np.full(grid.dims, float(v))
        g = gamma if isinstance(gamma, np.ndarray) else full(gamma)
        return cls(full(lam), full(mu), full(rho), g)

    @property
    def shape(self):
        return self.lam.shape

    @property
    def vp(self):
        return np.sqrt((self.lam + 2*self.mu)/self.rho)

    @property
    def vs(self):
        return np.sqrt(self.mu/self.rho)

    @property
    def poisson_ratio(self):
        return self.lam/(2*(self.lam + self.mu))

    def with_gamma(self, gamma):
        return MediaModel(self.lam, self.mu, self.rho, gamma)

    def check_grid(self, grid):
        if self.shape != grid.dims:
            raise ValueError(f"media shape {self.shape} does not match grid {grid.dims}")


class FieldVector:
    """Complex state ``(u_0, ..., u_{d-1}, p)`` on a :class:`StaggeredGrid`."""

    __slots__ = ('grid', 'data')

    def __init__(self, grid, data=None, dtype=complex):
        self.grid = grid
        if data is None:
            data = np.zeros(grid.ndof, dtype=dtype)
        data = np.asarray(data)
        if data.shape != (grid.ndof,):
            raise ValueError(f"flat data of length {grid.ndof} expected, got {data.shape}")
        self.data = data

    @classmethod
    def from_components(cls, grid, u, p):
        if len(u) != grid.ndim:
            raise ValueError("need one displacement array per axis")
        parts = list(u) + [p]
        for arr, shape in zip(parts, grid.shapes):
            if np.shape(arr) != shape:
                raise ValueError(f"component shape {np.shape(arr)} != {shape}")
        return cls(grid, np.concatenate([np.ravel(a) for a in parts]).astype(complex))

    @classmethod
    def random(cls, grid, rng=None):
        rng = np.random.default_rng(rng)
        return cls(grid, rng.standard_normal(grid.ndof) + 1j*rng.standard_normal(grid.ndof))

    @property
    def u(self):
        return self.grid.split(self.data)[:-1]

    @property
    def p(self):
        return self.grid.split(self.data)[-1]

    def copy(self):
        return FieldVector(self.grid, self.data.copy())

    def _check(self, other):
        if other.grid != self.grid:
            raise ValueError("field vectors live on different grids")

    def __add__(self, other):
        self._check(other)
        return FieldVector(self.grid, self.data + other.data)

    def __sub__(self, other):
        self._check(other)
        return FieldVector(self.grid, self.data - other.data)

    def __mul__(self, a):
        return FieldVector(self.grid, a*self.data)

    __rmul__ = __mul__

    def __neg__(self):
        return FieldVector(self.grid, -self.data)

    def vdot(self, other):
        """Inner product, conjugate-linear in ``self``."""
        self._check(other)
        return np.vdot(self.data, other.data)

    def norm(self):
        return float(np.linalg.norm(self.data))

    def __repr__(self):
        return f"FieldVector(dims={self.grid.dims}, norm={self.norm():.3e})"


def _pad_edge(field, axis):
    pad = [(0, 0)]*field.ndim
    pad[axis] = (1, 1)
    return np.pad(field, pad, mode='edge')


def _mean_adjacent(field, axis):
    """Average neighbouring entries along ``axis`` after edge replication."""
    f = _pad_edge(field, axis)
    lo = [slice(None)]*f.ndim
    hi = [slice(None)]*f.ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return 0.5*(f[tuple(lo)] + f[tuple(hi)])


def average_cell_to_face(field, axis):
    """Average a cell-centered field onto the faces normal to ``axis``.

    Interior faces get the mean of the two adjacent cells, boundary faces
    replicate their single neighbour.
    """
    return _mean_adjacent(np.asarray(field), axis)


def average_cell_to_edge(field, axes):
    """Average a cell-centered field onto the edges staggered along both ``axes``.

    In 2D with ``axes=(0, 1)`` these are the grid nodes. Interior edges get the
    mean of the four cells sharing them; boundary edges the mean of the cells
    available.
    """
    a, b = axes
    if a == b:
        raise ValueError("edge averaging needs two distinct axes")
    return _mean_adjacent(_mean_adjacent(np.asarray(field), a), b)


def build_attenuation_profile(gamma_phys, layer_width, grid, gamma_max=1.0,
                              absorb_top=False):
    """Cell-centered attenuation with a quadratic sponge layer.

    Inside the layer the profile is ``gamma_phys + gamma_max*(d/L)**2`` with
    ``d`` the depth into the layer (``d = L`` for the outermost cell). The
    top surface (index 0 of the last axis) only gets a layer if
    ``absorb_top`` is set.
    """
    L = int(layer_width)
    if L < 0:
        raise ValueError("layer_width must be >= 0")
    gamma = np.full(grid.dims, float(gamma_phys))
    if L == 0:
        return gamma
    if 2*L >= min(grid.dims):
        raise ValueError(f"absorbing layer of {L} cells too wide for grid {grid.dims}")
    ramp = np.zeros(grid.dims)
    for axis, n in enumerate(grid.dims):
        i = np.arange(n)
        d_lo = np.clip(L - i, 0, None)
        d_hi = np.clip(i - (n - 1 - L), 0, None)
        if axis == grid.ndim - 1 and not absorb_top:
            d_lo = np.zeros_like(d_lo)
        d = np.maximum(d_lo, d_hi).astype(float)
        shape = [1]*grid.ndim
        shape[axis] = n
        ramp = np.maximum(ramp, (d/L).reshape(shape)**2)
    return gamma + gamma_max*ramp


def top_center_index(grid):
    """Face index of the vertical displacement at the middle of the top row."""
    return tuple(n//2 for n in grid.dims[:-1]) + (0,)


def make_point_source(grid, location, component=None):
    """Discrete delta at one DOF, scaled by ``1/cell_volume``.

    ``component`` is the displacement axis, or ``grid.ndim`` for the pressure;
    the default is the vertical (last) displacement component.
    """
    if component is None:
        component = grid.ndim - 1
    if not 0 <= component <= grid.ndim:
        raise IndexError(f"component {component} out of range")
    shape = grid.shapes[component]
    location = tuple(int(i) for i in location)
    if len(location) != grid.ndim or any(not 0 <= i < n for i, n in zip(location, shape)):
        raise IndexError(f"source location {location} outside component shape {shape}")
    x = FieldVector(grid)
    grid.split(x.data)[component][location] = 1.0/grid.cell_volume
    return x


# I/O: raw little-endian binary with a JSON sidecar header.

def write_field(path, array, h, name):
    path = Path(path)
    arr = np.ascontiguousarray(array)
    dtype = arr.dtype.newbyteorder('<')
    arr.astype(dtype).tofile(path.with_suffix('.bin'))
    header = {'field': name, 'dims': list(arr.shape), 'h': list(np.atleast_1d(h).astype(float)),
              'dtype': dtype.str}
    path.with_suffix('.json').write_text(json.dumps(header, indent=2))
    return path.with_suffix('.bin')


def read_field(path):
    """Read a field written by :func:`write_field`; returns ``(array, header)``."""
    path = Path(path)
    header = json.loads(path.with_suffix('.json').read_text())
    arr = np.fromfile(path.with_suffix('.bin'), dtype=np.dtype(header['dtype']))
    return arr.reshape(header['dims']), header


def write_section_csv(path, columns):
    """Write equally long 1D columns ``{name: values}`` as a CSV table."""
    import csv
    names = list(columns)
    rows = zip(*(np.asarray(columns[n]) for n in names))
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
