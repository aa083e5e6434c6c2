"""Task environments: domains, macro-action catalogs, ground-truth fields.

A field is sampled once per episode and then frozen; measurement noise is
drawn each time a macro-action is executed.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import CapabilityError, InvalidInputError, ParseError
from .gp import KernelParams, Location, as_points, cross_cov

DENSE_SAMPLING_CAP = 10_000
GRID_SAMPLING_CAP = 1_000_000

_CARDINALS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def location_key(loc) -> Location:
    """Hashable key for a location, robust to text round-trips."""
    return tuple(round(float(c), 9) for c in loc)


# --------------------------------------------------------------------------
# Domains and macro-actions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GridDomain:
    """Regular grid of cell centres; ``extent`` holds ``(min, max, cell_count)`` per axis."""

    extent: Tuple[Tuple[float, float, int], ...]
    accessible: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        extent = tuple((float(lo), float(hi), int(n)) for lo, hi, n in self.extent)
        if not extent:
            raise InvalidInputError("grid needs at least one axis")
        for lo, hi, n in extent:
            if n < 1:
                raise InvalidInputError("cell_count must be >= 1 on every axis")
            if not hi > lo:
                raise InvalidInputError("grid axis needs max > min")
        object.__setattr__(self, "extent", extent)
        if self.accessible is not None:
            mask = np.asarray(self.accessible, dtype=bool)
            if mask.shape != self.shape:
                raise InvalidInputError(f"mask shape {mask.shape} != grid shape {self.shape}")
            mask.setflags(write=False)
            object.__setattr__(self, "accessible", mask)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(n for _, _, n in self.extent)

    @property
    def dim(self) -> int:
        return len(self.extent)

    def axis(self, k: int) -> np.ndarray:
        lo, hi, n = self.extent[k]
        step = (hi - lo) / n
        return lo + (np.arange(n) + 0.5) * step

    def location(self, index: Sequence[int]) -> Location:
        return tuple(float(self.axis(k)[i]) for k, i in enumerate(index))

    def index(self, loc) -> Tuple[int, ...]:
        out = []
        for k, c in enumerate(loc):
            lo, hi, n = self.extent[k]
            i = int(round((float(c) - lo) / ((hi - lo) / n) - 0.5))
            out.append(i)
        return tuple(out)

    def contains(self, index: Sequence[int]) -> bool:
        if len(index) != self.dim:
            return False
        if any(i < 0 or i >= n for i, n in zip(index, self.shape)):
            return False
        return self.accessible is None or bool(self.accessible[tuple(index)])

    def cells(self) -> np.ndarray:
        """Accessible cell centres in row-major index order, shape ``(M, d)``."""
        grids = np.meshgrid(*[self.axis(k) for k in range(self.dim)], indexing="ij")
        pts = np.stack([g.reshape(-1) for g in grids], axis=1)
        if self.accessible is not None:
            pts = pts[self.accessible.reshape(-1)]
        return pts

    def nearest_cell(self, loc) -> Location:
        idx = tuple(
            min(max(i, 0), n - 1) for i, n in zip(self.index(loc), self.shape)
        )
        return self.location(idx)


@dataclass(frozen=True)
class MacroAction:
    """An ordered sequence of locations executed without intermediate replanning."""

    path: Tuple[Location, ...]

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(tuple(float(c) for c in p) for p in self.path))
        if not self.path:
            raise InvalidInputError("a macro-action needs at least one location")

    def __len__(self) -> int:
        return len(self.path)

    @property
    def end(self) -> Location:
        return self.path[-1]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.path, dtype=float)


def sort_actions(actions: Iterable[MacroAction]) -> List[MacroAction]:
    """Lexicographic order on path coordinates; the planners' tie-break order."""
    return sorted(actions, key=lambda a: a.path)


def cardinal_macro_actions(s, domain: GridDomain, kappa: int) -> List[MacroAction]:
    """Straight ``kappa``-step dives along each cardinal direction that stay in the domain."""
    if domain.dim != 2:
        raise InvalidInputError("cardinal macro-actions need a 2-D grid")
    start = domain.index(s)
    if not domain.contains(start):
        raise InvalidInputError(f"{tuple(s)} is not an accessible cell")
    out = []
    for dx, dy in _CARDINALS:
        cells = [(start[0] + dx * k, start[1] + dy * k) for k in range(1, kappa + 1)]
        if all(domain.contains(c) for c in cells):
            out.append(MacroAction(tuple(domain.location(c) for c in cells)))
    return out


Graph = Dict[Location, Tuple[Location, ...]]


def graph_macro_actions(s, graph: Mapping[Location, Sequence[Location]], kappa: int,
                        downsample: Tuple[int, int] | None = None) -> List[MacroAction]:
    """Simple ``kappa``-step walks from ``s``; optionally a seeded subset of them."""
    s = location_key(s)
    if s not in graph:
        raise InvalidInputError(f"node {s} is not in the graph")
    walks: List[Tuple[Location, ...]] = []

    def dfs(node, path, seen):
        if len(path) == kappa:
            walks.append(tuple(path))
            return
        for nxt in graph.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                path.append(nxt)
                dfs(nxt, path, seen)
                path.pop()
                seen.discard(nxt)

    dfs(s, [], {s})
    if downsample is not None:
        count, seed = downsample
        if len(walks) > count:
            rng = np.random.default_rng([int(seed), zlib.crc32(repr(s).encode())])
            keep = np.sort(rng.choice(len(walks), size=count, replace=False))
            walks = [walks[i] for i in keep]
    return [MacroAction(w) for w in walks]


class MacroActionCatalog:
    """Maps an anchor location to its available macro-actions (cached, sorted)."""

    rule = "abstract"

    def __init__(self, kappa: int):
        if kappa < 1:
            raise InvalidInputError("kappa must be >= 1")
        self.kappa = int(kappa)
        self._cache: Dict[Location, Tuple[MacroAction, ...]] = {}

    def _generate(self, s: Location) -> List[MacroAction]:
        raise NotImplementedError

    def __call__(self, s) -> Tuple[MacroAction, ...]:
        key = location_key(s)
        hit = self._cache.get(key)
        if hit is None:
            hit = tuple(sort_actions(self._generate(key)))
            self._cache[key] = hit
        return hit

    @property
    def max_actions(self) -> int:
        raise NotImplementedError


class CardinalCatalog(MacroActionCatalog):
    rule = "cardinal-dives"

    def __init__(self, domain: GridDomain, kappa: int):
        super().__init__(kappa)
        self.domain = domain

    def _generate(self, s):
        return cardinal_macro_actions(s, self.domain, self.kappa)

    @property
    def max_actions(self) -> int:
        return 4


class GraphCatalog(MacroActionCatalog):
    rule = "graph-paths"

    def __init__(self, graph: Mapping[Location, Sequence[Location]], kappa: int,
                 downsample: Tuple[int, int] | None = None):
        super().__init__(kappa)
        self.graph = graph
        self.downsample = downsample

    def _generate(self, s):
        return graph_macro_actions(s, self.graph, self.kappa, self.downsample)

    @property
    def max_actions(self) -> int:
        return max((len(self(s)) for s in self.graph), default=0)


class ExplicitCatalog(MacroActionCatalog):
    rule = "explicit-file"

    def __init__(self, mapping: Mapping[Location, Sequence[MacroAction]], kappa: int):
        super().__init__(kappa)
        self.mapping = {location_key(k): tuple(v) for k, v in mapping.items()}
        for acts in self.mapping.values():
            for a in acts:
                if len(a) != self.kappa:
                    raise InvalidInputError("explicit macro-action has the wrong length")

    def _generate(self, s):
        return list(self.mapping.get(s, ()))

    @property
    def max_actions(self) -> int:
        return max((len(v) for v in self.mapping.values()), default=0)


# --------------------------------------------------------------------------
# Ground truth
# --------------------------------------------------------------------------


class PhenomenonRealization:
    """A frozen latent field over a finite set of locations."""

    def __init__(self, coords, values, provenance: str):
        coords = as_points(coords)
        values = np.asarray(values, dtype=float).reshape(-1)
        if coords.shape[0] != values.shape[0]:
            raise InvalidInputError("coords and values differ in length")
        if coords.shape[0] == 0:
            raise InvalidInputError("a field needs at least one location")
        self.coords = coords
        self.values = values
        self.provenance = provenance
        self._index = {location_key(c): i for i, c in enumerate(coords)}
        best = int(np.argmax(values))
        self.global_max = float(values[best])
        self.argmax: Location = tuple(float(c) for c in coords[best])

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def __contains__(self, loc) -> bool:
        return location_key(loc) in self._index

    def value_at(self, loc) -> float:
        i = self._index.get(location_key(loc))
        if i is None:
            raise InvalidInputError(f"location {tuple(loc)} is not accessible in this field")
        return float(self.values[i])

    def values_at(self, locations) -> np.ndarray:
        return np.array([self.value_at(p) for p in as_points(locations)])


def _psd_sqrt(K: np.ndarray) -> np.ndarray:
    w, Q = np.linalg.eigh(0.5 * (K + K.T))
    return Q * np.sqrt(np.clip(w, 0.0, None))[None, :]


def sample_phenomenon(domain, params: KernelParams, seed) -> PhenomenonRealization:
    """Draw one latent field from the GP prior over the accessible cells.

    ``domain`` is a :class:`GridDomain` (sampled through the separable kernel
    structure) or an explicit ``(M, d)`` array of locations (dense sampling).
    """
    rng = np.random.default_rng(seed)
    if isinstance(domain, GridDomain):
        if domain.dim != params.dim:
            raise InvalidInputError("grid and kernel dimensions differ")
        total = int(np.prod(domain.shape))
        if total > GRID_SAMPLING_CAP:
            raise CapabilityError(
                f"grid has {total} cells (cap {GRID_SAMPLING_CAP}); sample it in blocks"
            )
        unit = KernelParams(0.0, 1.0, 1.0, (1.0,))
        field_ = rng.standard_normal(domain.shape)
        for k in range(domain.dim):
            ax = domain.axis(k)[:, None] / params.length_scales[k]
            S = _psd_sqrt(cross_cov(ax, ax, unit))
            field_ = np.moveaxis(np.tensordot(S, np.moveaxis(field_, k, 0), axes=1), 0, k)
        values = field_.reshape(-1)
        if domain.accessible is not None:
            values = values[domain.accessible.reshape(-1)]
        coords = domain.cells()
    else:
        coords = as_points(domain, params.dim)
        if coords.shape[0] > DENSE_SAMPLING_CAP:
            raise CapabilityError(
                f"{coords.shape[0]} locations exceed the dense sampling cap "
                f"{DENSE_SAMPLING_CAP}; use blocked or sequential sampling"
            )
        unit = KernelParams(0.0, 1.0, 1.0, params.length_scales)
        values = _psd_sqrt(cross_cov(coords, coords, unit)) @ rng.standard_normal(coords.shape[0])
    values = params.prior_mean + np.sqrt(params.signal_variance) * values
    return PhenomenonRealization(coords, values, provenance=f"sampled({seed})")


def execute(realization: PhenomenonRealization, action: MacroAction,
            noise_variance: float, rng) -> np.ndarray:
    """Noisy measurements along the action's path."""
    if noise_variance < 0:
        raise InvalidInputError("noise_variance must be >= 0")
    y = realization.values_at(action.as_array())
    if noise_variance == 0:
        return y
    return y + np.sqrt(noise_variance) * rng.standard_normal(len(action))


# --------------------------------------------------------------------------
# File formats
# --------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _read_rows(path, header: Sequence[str]):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1, path=str(path)) from None
        if [h.strip() for h in first] != list(header):
            raise ParseError(f"expected header {','.join(header)}", line=1, path=str(path))
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno, str(path))
            try:
                yield lineno, [float(c) for c in row]
            except ValueError:
                raise ParseError(f"non-numeric field in {row!r}", lineno, str(path)) from None


def save_field(path, realization: PhenomenonRealization) -> None:
    if realization.coords.shape[1] != 2:
        raise InvalidInputError("field files hold 2-D locations")
    with Path(path).open("w", newline="") as fh:
        fh.write("x,y,value\n")
        for (x, y), v in zip(realization.coords, realization.values):
            fh.write(f"{_fmt(x)},{_fmt(y)},{_fmt(v)}\n")


def load_field(path) -> PhenomenonRealization:
    rows = [r for _, r in _read_rows(path, ("x", "y", "value"))]
    if not rows:
        raise ParseError("field file has no data rows", path=str(path))
    arr = np.asarray(rows)
    return PhenomenonRealization(arr[:, :2], arr[:, 2], provenance=f"loaded({path})")


def save_graph(path, graph: Mapping[Location, Sequence[Location]]) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write("from_x,from_y,to_x,to_y\n")
        for a in sorted(graph):
            for b in graph[a]:
                fh.write(f"{_fmt(a[0])},{_fmt(a[1])},{_fmt(b[0])},{_fmt(b[1])}\n")


def load_graph(path) -> Graph:
    """Directed adjacency; duplicate edges collapse to one."""
    adj: Dict[Location, set] = {}
    for _, (fx, fy, tx, ty) in _read_rows(path, ("from_x", "from_y", "to_x", "to_y")):
        a, b = location_key((fx, fy)), location_key((tx, ty))
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set())
    return {k: tuple(sorted(v)) for k, v in adj.items()}


# --------------------------------------------------------------------------
# Episode environment
# --------------------------------------------------------------------------


@dataclass
class Environment:
    """Everything an episode needs: belief hyperparameters, moves, ground truth and start."""

    params: KernelParams
    catalog: MacroActionCatalog
    realization: PhenomenonRealization
    start: Location
    prior_locations: Tuple[Location, ...] = ()

    @property
    def kappa(self) -> int:
        return self.catalog.kappa

    def initial_locations(self) -> np.ndarray:
        """Stage-0 locations; the start location is always last."""
        pts = [tuple(p) for p in self.prior_locations if location_key(p) != location_key(self.start)]
        pts.append(tuple(self.start))
        return np.asarray(pts, dtype=float)
