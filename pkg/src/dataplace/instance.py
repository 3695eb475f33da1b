"""Problem data for data placement, instance generators and file I/O.

An :class:`Instance` holds ``n`` agents with integer cache sizes and ``k``
resource types.  Agent ``j`` requests resource ``l`` at rate
``demands[j, l]``; storing ``l`` at agent ``i`` costs ``placement_fees[i, l]``
and reaching agent ``i`` from ``j`` costs ``access_costs[i, j]``.  Access
costs are symmetric and nonnegative but need not satisfy the triangle
inequality.

Agents and resources are 0-indexed in code and 1-indexed in messages and
reports.

The distance from an agent to an empty holder set is the finite penalty
``empty_set_distance`` (defaults to ``2 * max(access_costs) + 1``) so that
every allocation in ``[k]^n`` has a finite objective value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Instance",
    "UnitInstance",
    "InstanceFormatError",
    "InstanceValidationError",
    "validate",
    "default_empty_distance",
    "reduce_to_unit_cache",
    "expand_allocation",
    "embed_uflp",
    "gen_random",
    "to_dict",
    "from_dict",
    "save",
    "load",
]

SCHEMA_FIELDS = ("n", "k", "cache_sizes", "access_costs", "demands", "placement_fees")


class InstanceFormatError(ValueError):
    """Raised when an instance file cannot be parsed."""


class InstanceValidationError(ValueError):
    """Raised when instance data violates the model invariants."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def default_empty_distance(access_costs) -> float:
    c = np.asarray(access_costs, dtype=float)
    cmax = float(c.max()) if c.size else 0.0
    return 2.0 * cmax + 1.0


@dataclass(frozen=True, eq=False)
class Instance:
    """Immutable data placement instance.

    Array fields are copied and marked read-only on construction.
    """

    n: int
    k: int
    cache_sizes: np.ndarray
    access_costs: np.ndarray
    demands: np.ndarray
    placement_fees: np.ndarray
    empty_set_distance: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "cache_sizes", _frozen(self.cache_sizes, np.int64))
        object.__setattr__(self, "access_costs", _frozen(self.access_costs, float))
        object.__setattr__(self, "demands", _frozen(self.demands, float))
        object.__setattr__(self, "placement_fees", _frozen(self.placement_fees, float))
        if self.empty_set_distance is None:
            object.__setattr__(
                self, "empty_set_distance", default_empty_distance(self.access_costs)
            )
        else:
            object.__setattr__(self, "empty_set_distance", float(self.empty_set_distance))

    # short aliases used by the numerical modules
    @property
    def c(self) -> np.ndarray:
        return self.access_costs

    @property
    def w(self) -> np.ndarray:
        return self.demands

    @property
    def f(self) -> np.ndarray:
        return self.placement_fees

    @property
    def c_empty(self) -> float:
        return self.empty_set_distance

    @property
    def is_unit(self) -> bool:
        return bool(np.all(self.cache_sizes == 1))

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            self.n == other.n
            and self.k == other.k
            and self.empty_set_distance == other.empty_set_distance
            and np.array_equal(self.cache_sizes, other.cache_sizes)
            and np.array_equal(self.access_costs, other.access_costs)
            and np.array_equal(self.demands, other.demands)
            and np.array_equal(self.placement_fees, other.placement_fees)
        )

    __hash__ = None

    def check(self) -> "Instance":
        """Return ``self`` or raise :class:`InstanceValidationError`."""
        problems = validate(self)
        if problems:
            raise InstanceValidationError(problems)
        return self


@dataclass(frozen=True, eq=False)
class UnitInstance(Instance):
    """Unit-cache instance; ``origin[a]`` is the source agent of unit agent ``a``."""

    origin: np.ndarray | None = None

    def __post_init__(self):
        super().__post_init__()
        origin = np.arange(self.n) if self.origin is None else self.origin
        object.__setattr__(self, "origin", _frozen(origin, np.int64))

    @classmethod
    def from_instance(cls, inst: Instance) -> "UnitInstance":
        if isinstance(inst, UnitInstance):
            return inst
        if not inst.is_unit:
            raise ValueError("instance has non-unit caches; use reduce_to_unit_cache")
        return cls(
            inst.n, inst.k, inst.cache_sizes, inst.access_costs, inst.demands,
            inst.placement_fees, inst.empty_set_distance,
        )


def _shape_problems(inst: Instance) -> list[str]:
    n, k = inst.n, inst.k
    out = []
    if n < 1:
        out.append(f"n must be positive, got {n}")
    if k < 1:
        out.append(f"k must be positive, got {k}")
    expected = {
        "cache_sizes": (n,),
        "access_costs": (n, n),
        "demands": (n, k),
        "placement_fees": (n, k),
    }
    for name, shape in expected.items():
        got = getattr(inst, name).shape
        if got != shape:
            out.append(f"{name} has shape {got}, expected {shape}")
    return out


def validate(inst: Instance) -> list[str]:
    """List every invariant violation of ``inst``; empty iff the instance is valid."""
    problems = _shape_problems(inst)
    if problems:
        return problems
    c, w, f, u = inst.access_costs, inst.demands, inst.placement_fees, inst.cache_sizes
    for name, arr in (("access_costs", c), ("demands", w), ("placement_fees", f)):
        if not np.all(np.isfinite(arr)):
            problems.append(f"{name} must be finite")
        elif np.any(arr < 0):
            idx = tuple(int(v) + 1 for v in np.argwhere(arr < 0)[0])
            problems.append(f"{name} must be nonnegative (first at {idx})")
    for i in np.flatnonzero(u < 1):
        problems.append(f"cache size of agent {i + 1} is {u[i]}; caches must be >= 1")
    for i in np.flatnonzero(np.diag(c) != 0):
        problems.append(f"access_costs diagonal ({i + 1},{i + 1}) is {c[i, i]}, must be 0")
    iu, ju = np.triu_indices(inst.n, 1)
    for i, j in zip(iu, ju):
        if c[i, j] != c[j, i]:
            problems.append(
                f"access_costs asymmetric at ({i + 1},{j + 1}): {c[i, j]} != {c[j, i]}"
            )
    total = int(u.sum())
    if total < inst.k:
        problems.append(f"infeasible: sum of cache sizes {total} < k={inst.k}")
    cmax = float(c.max()) if c.size else 0.0
    ce = inst.empty_set_distance
    if not (math.isfinite(ce) and ce > cmax):
        problems.append(f"empty_set_distance {ce} must exceed max access cost {cmax}")
    return problems


def reduce_to_unit_cache(inst: Instance) -> UnitInstance:
    """Split every agent of cache size ``u_i`` into ``u_i`` collocated unit agents.

    Copies inherit the fee vector, receive ``1/u_i`` of the demand vector, sit
    at distance 0 from each other and at the source agent's distance from
    everyone else.  Copies are numbered consecutively, agent by agent.
    """
    inst.check()
    u = inst.cache_sizes
    origin = np.repeat(np.arange(inst.n), u)
    c = inst.access_costs[np.ix_(origin, origin)]
    w = inst.demands[origin] / u[origin, None]
    f = inst.placement_fees[origin]
    m = len(origin)
    return UnitInstance(m, inst.k, np.ones(m, dtype=np.int64), c, w, f,
                        inst.empty_set_distance, origin)


def expand_allocation(inst: Instance, contents: Sequence[Sequence[int]]) -> np.ndarray:
    """Map per-agent cache contents to the matching unit-instance allocation.

    ``contents[i]`` lists the ``u_i`` resources in agent ``i``'s cache slots;
    slot ``r`` goes to copy ``r`` of agent ``i`` in :func:`reduce_to_unit_cache`.
    """
    if len(contents) != inst.n:
        raise ValueError(f"expected contents for {inst.n} agents, got {len(contents)}")
    out = []
    for i, slots in enumerate(contents):
        if len(slots) != inst.cache_sizes[i]:
            raise ValueError(
                f"agent {i + 1} has cache size {inst.cache_sizes[i]} but {len(slots)} slots"
            )
        out.extend(int(s) for s in slots)
    x = np.array(out, dtype=np.int64)
    if np.any((x < 0) | (x >= inst.k)):
        raise ValueError("resource index out of range")
    return x


def embed_uflp(facility_fees, access_costs, empty_set_distance=None) -> UnitInstance:
    """Encode an uncapacitated facility location instance with ``k = 2``.

    Resource 0 is the real one (unit demand everywhere, fee = facility fee);
    resource 1 is a free dummy nobody requests.  Agents holding resource 0
    are the open facilities.
    """
    fees = np.asarray(facility_fees, dtype=float)
    c = np.asarray(access_costs, dtype=float)
    n = fees.shape[0]
    if c.shape != (n, n):
        raise ValueError(f"access_costs must be {n}x{n}, got {c.shape}")
    if np.any(fees < 0) or np.any(c < 0):
        raise ValueError("fees and access costs must be nonnegative")
    if not np.array_equal(c, c.T) or np.any(np.diag(c) != 0):
        raise ValueError("access costs must be symmetric with zero diagonal")
    w = np.zeros((n, 2))
    w[:, 0] = 1.0
    f = np.zeros((n, 2))
    f[:, 0] = fees
    inst = UnitInstance(n, 2, np.ones(n, dtype=np.int64), c, w, f, empty_set_distance)
    return inst.check()


def _check_range(name, rng_pair, integer=False):
    lo, hi = rng_pair
    if lo < 0 or hi < lo:
        raise ValueError(f"{name} must satisfy 0 <= low <= high, got {rng_pair}")
    if integer and (int(lo) != lo or int(hi) != hi):
        raise ValueError(f"{name} must have integer bounds, got {rng_pair}")


def gen_random(
    seed: int,
    n: int,
    k: int,
    cost_range=(1.0, 10.0),
    demand_range=(0.0, 1.0),
    fee_range=(0.0, 5.0),
    cache_range=(1, 1),
) -> Instance:
    """Draw a random instance from ``numpy.random.default_rng(seed)``.

    Costs are drawn i.i.d. uniform and symmetrized from the upper triangle;
    demands and fees are uniform; cache sizes are uniform integers and are
    redrawn until the caches can hold all ``k`` resources.  Returns a
    :class:`UnitInstance` when ``cache_range == (1, 1)``.
    """
    if n < 1 or k < 1:
        raise ValueError("n and k must be positive")
    _check_range("cost_range", cost_range)
    _check_range("demand_range", demand_range)
    _check_range("fee_range", fee_range)
    _check_range("cache_range", cache_range, integer=True)
    if cache_range[0] < 1:
        raise ValueError("cache sizes must be at least 1")
    if n * cache_range[1] < k:
        raise ValueError(f"n * max cache size = {n * cache_range[1]} < k = {k}")
    rng = np.random.default_rng(seed)
    raw = rng.uniform(cost_range[0], cost_range[1], size=(n, n))
    c = np.triu(raw, 1)
    c = c + c.T
    w = rng.uniform(demand_range[0], demand_range[1], size=(n, k))
    f = rng.uniform(fee_range[0], fee_range[1], size=(n, k))
    while True:
        u = rng.integers(cache_range[0], cache_range[1] + 1, size=n)
        if u.sum() >= k:
            break
    ce = default_empty_distance(c)
    if np.all(u == 1):
        return UnitInstance(n, k, u, c, w, f, ce).check()
    return Instance(n, k, u, c, w, f, ce).check()


def to_dict(inst: Instance) -> dict:
    return {
        "n": inst.n,
        "k": inst.k,
        "cache_sizes": inst.cache_sizes.tolist(),
        "access_costs": inst.access_costs.tolist(),
        "demands": inst.demands.tolist(),
        "placement_fees": inst.placement_fees.tolist(),
        "empty_set_distance": inst.empty_set_distance,
    }


def _matrix(data, name, rows, cols):
    if not isinstance(data, list) or len(data) != rows:
        raise InstanceFormatError(f"field '{name}': expected {rows} rows")
    for r, row in enumerate(data):
        if not isinstance(row, list) or len(row) != cols:
            raise InstanceFormatError(
                f"field '{name}': row {r + 1} must have {cols} entries"
            )
        for col, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise InstanceFormatError(
                    f"field '{name}': entry ({r + 1},{col + 1}) is not a number"
                )
    return np.array(data, dtype=float).reshape(rows, cols)


def from_dict(data: dict, check: bool = True) -> Instance:
    """Build an instance from the JSON schema; raises on schema or invariant errors."""
    if not isinstance(data, dict):
        raise InstanceFormatError("instance document must be a JSON object")
    for name in SCHEMA_FIELDS:
        if name not in data:
            raise InstanceFormatError(f"missing required field '{name}'")
    n, k = data["n"], data["k"]
    for name, v in (("n", n), ("k", k)):
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise InstanceFormatError(f"field '{name}' must be a positive integer")
    u = data["cache_sizes"]
    if not isinstance(u, list) or len(u) != n or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in u
    ):
        raise InstanceFormatError(f"field 'cache_sizes': expected {n} integers")
    c = _matrix(data["access_costs"], "access_costs", n, n)
    w = _matrix(data["demands"], "demands", n, k)
    f = _matrix(data["placement_fees"], "placement_fees", n, k)
    ce = data.get("empty_set_distance")
    if ce is not None and (isinstance(ce, bool) or not isinstance(ce, (int, float))):
        raise InstanceFormatError("field 'empty_set_distance' must be a number")
    cls = UnitInstance if all(v == 1 for v in u) else Instance
    inst = cls(n, k, np.array(u, dtype=np.int64), c, w, f, ce)
    if check:
        inst.check()
    return inst


def save(inst: Instance, path) -> None:
    # json writes floats with repr(), which round-trips doubles exactly
    Path(path).write_text(json.dumps(to_dict(inst), indent=1) + "\n")


def load(path, check: bool = True) -> Instance:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    try:
        return from_dict(data, check=check)
    except InstanceFormatError as exc:
        raise InstanceFormatError(f"{path}: {exc}") from None
