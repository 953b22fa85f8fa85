"""Data model, fold partitioning, random streams and run configuration."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, SchemaError

PROBLEMS = ("long_term", "dynamic", "proximal_mediation")

SCALAR_ROLES = ("y", "d", "d1", "d2", "g", "v")
VECTOR_ROLES = ("x", "m", "z")


# ---------------------------------------------------------------------------
# random streams


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def stream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for the consumer identified by ``labels``.

    The stream depends only on the master seed and the labels, never on the
    order in which consumers ask for it, so parallel schedules reproduce
    serial results exactly.
    """
    seq = np.random.SeedSequence(
        entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=tuple(_label_key(lab) for lab in labels),
    )
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *labels) -> int:
    """A 63-bit integer seed for the consumer identified by ``labels``."""
    seq = np.random.SeedSequence(
        entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=tuple(_label_key(lab) for lab in labels),
    )
    return int(seq.generate_state(1, np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------------------
# samples and datasets


@dataclass(frozen=True)
class Sample:
    """One observation. ``None`` marks a field the design leaves unobserved."""

    y: Optional[float]
    d: tuple
    x: tuple
    m: Optional[tuple] = None
    g: Optional[int] = None
    z: Optional[tuple] = None
    v: Optional[float] = None


@dataclass(frozen=True)
class Schema:
    """Maps file headers to roles.

    ``columns`` is an ordered mapping header -> role. Vector roles (x, m, z)
    may collect several headers; scalar roles take exactly one.
    """

    columns: Mapping[str, str]
    problem: Optional[str] = None

    def __post_init__(self):
        by_role: dict[str, list[str]] = {}
        for header, role in self.columns.items():
            if role not in SCALAR_ROLES + VECTOR_ROLES:
                raise SchemaError(f"unknown role {role!r} for column {header!r}")
            by_role.setdefault(role, []).append(header)
        for role, headers in by_role.items():
            if role in SCALAR_ROLES and len(headers) > 1:
                raise SchemaError(f"scalar role {role!r} mapped from {headers}")
        if self.problem is not None and self.problem not in PROBLEMS:
            raise SchemaError(f"unknown problem {self.problem!r}")

    def headers(self, role: str) -> list[str]:
        return [h for h, r in self.columns.items() if r == role]

    @property
    def roles(self) -> tuple:
        seen = []
        for r in self.columns.values():
            if r not in seen:
                seen.append(r)
        return tuple(seen)

    @classmethod
    def infer(cls, header: Sequence[str], problem: str) -> "Schema":
        """Default header naming: ``y``, ``d``/``d1``/``d2``, ``g``, ``v`` and
        prefixed vector columns ``x*``, ``m*``, ``z*``. For the dynamic problem
        ``x1*`` are baseline covariates and ``x2*`` the intermediate ones."""
        cols = {}
        for h in header:
            name = h.strip()
            if name in SCALAR_ROLES:
                cols[h] = name
            elif problem == "dynamic" and name.startswith("x1"):
                cols[h] = "x"
            elif problem == "dynamic" and name.startswith("x2"):
                cols[h] = "m"
            elif re.match(r"^[xmz]", name):
                cols[h] = name[0]
        return cls(cols, problem)


# Required roles and conditional-missingness rules per problem.
PROBLEM_ROLES = {
    "long_term": ("y", "d", "g", "m", "x"),
    "dynamic": ("y", "d1", "d2", "x", "m"),
    "proximal_mediation": ("y", "d", "m", "x", "z", "v"),
}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column store of samples sharing one schema.

    ``values[role]`` is an ``(n, dim)`` float array and ``observed[role]`` an
    ``(n,)`` boolean mask. Entries behind a False mask are stored as 0.0 and
    carry no information.
    """

    values: Mapping[str, np.ndarray]
    observed: Mapping[str, np.ndarray]

    def __post_init__(self):
        n = None
        for role, arr in self.values.items():
            if arr.ndim != 2:
                raise DataError(f"role {role!r} must be stored as a 2-d array")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise DataError(f"role {role!r} has {arr.shape[0]} rows, expected {n}")
            mask = self.observed[role]
            bad = mask & ~np.all(np.isfinite(arr), axis=1)
            if bad.any():
                raise DataError(f"non-finite value in {role!r}", row=int(np.flatnonzero(bad)[0]))
            arr.setflags(write=False)
            mask.setflags(write=False)

    @classmethod
    def from_arrays(cls, **columns) -> "Dataset":
        """Build from arrays; NaN entries (or ``None``) mark missing rows."""
        values, observed = {}, {}
        for role, col in columns.items():
            if col is None:
                continue
            if role not in SCALAR_ROLES + VECTOR_ROLES:
                raise SchemaError(f"unknown role {role!r}")
            arr = np.asarray(col, dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            mask = ~np.any(np.isnan(arr), axis=1)
            arr = np.where(mask[:, None], arr, 0.0)
            values[role] = arr
            observed[role] = mask
        return cls(values, observed)

    @property
    def n(self) -> int:
        return next(iter(self.values.values())).shape[0]

    def __len__(self) -> int:
        return self.n

    def has(self, role: str) -> bool:
        return role in self.values

    def col(self, role: str) -> np.ndarray:
        """Scalar roles come back as ``(n,)``, vector roles as ``(n, dim)``."""
        if role not in self.values:
            raise SchemaError(f"dataset has no {role!r} column")
        arr = self.values[role]
        return arr[:, 0] if role in SCALAR_ROLES else arr

    def obs(self, role: str) -> np.ndarray:
        if role not in self.observed:
            return np.zeros(self.n, dtype=bool)
        return self.observed[role]

    def stack(self, *roles: str) -> np.ndarray:
        return np.hstack([self.values[r] for r in roles])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            {r: a[idx] for r, a in self.values.items()},
            {r: m[idx] for r, m in self.observed.items()},
        )

    def replace(self, **columns) -> "Dataset":
        """Copy with some roles replaced (fully observed)."""
        values = dict(self.values)
        observed = dict(self.observed)
        for role, col in columns.items():
            arr = np.asarray(col, dtype=float)
            values[role] = arr[:, None] if arr.ndim == 1 else arr
            observed[role] = np.ones(arr.shape[0], dtype=bool)
        return Dataset(values, observed)

    def sample(self, i: int) -> Sample:
        def scalar(role):
            if role not in self.values or not self.observed[role][i]:
                return None
            return float(self.values[role][i, 0])

        def vector(role):
            if role not in self.values or not self.observed[role][i]:
                return None
            return tuple(float(a) for a in self.values[role][i])

        if self.has("d1"):
            d = (scalar("d1"), scalar("d2"))
        else:
            d = (scalar("d"),)
        g = scalar("g")
        return Sample(
            y=scalar("y"), d=d, x=vector("x") or (), m=vector("m"),
            g=None if g is None else int(g), z=vector("z"), v=scalar("v"),
        )

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], dynamic: bool = False) -> "Dataset":
        def col(getter):
            return [getter(s) for s in samples]

        def vec(vals):
            if all(v is None for v in vals):
                return None
            dim = len(next(v for v in vals if v is not None))
            return np.array([[np.nan] * dim if v is None else list(v) for v in vals], dtype=float)

        def sca(vals):
            if all(v is None for v in vals):
                return None
            return np.array([np.nan if v is None else v for v in vals], dtype=float)

        cols = dict(y=sca(col(lambda s: s.y)), x=vec(col(lambda s: s.x or None)),
                    m=vec(col(lambda s: s.m)), g=sca(col(lambda s: s.g)),
                    z=vec(col(lambda s: s.z)), v=sca(col(lambda s: s.v)))
        if dynamic:
            cols["d1"] = sca(col(lambda s: s.d[0]))
            cols["d2"] = sca(col(lambda s: s.d[1]))
        else:
            cols["d"] = sca(col(lambda s: s.d[0]))
        return cls.from_arrays(**cols)


def validate_pattern(data: Dataset, problem: str) -> None:
    """Check that the dataset carries the roles and missingness pattern of
    ``problem``. Raises SchemaError for absent roles and DataError (with the
    first offending row) for misplaced missing values."""
    if problem not in PROBLEMS:
        raise SchemaError(f"unknown problem {problem!r}; expected one of {PROBLEMS}")
    for role in PROBLEM_ROLES[problem]:
        if not data.has(role):
            raise SchemaError(f"missing required role {role!r} for problem {problem}")

    def check(role, expected):
        mismatch = data.obs(role) != expected
        if mismatch.any():
            i = int(np.flatnonzero(mismatch)[0])
            state = "missing" if expected[i] else "present"
            raise DataError(f"{role!r} is {state} where the {problem} design forbids it", row=i)

    full = np.ones(data.n, dtype=bool)
    if problem == "long_term":
        check("g", full)
        g = data.col("g")
        if not np.all((g == 0) | (g == 1)):
            raise DataError("g must be 0 or 1", row=int(np.flatnonzero((g != 0) & (g != 1))[0]))
        for role in ("x", "m"):
            check(role, full)
        check("y", g == 1)
        check("d", g == 0)
    else:
        for role in PROBLEM_ROLES[problem]:
            check(role, full)
        if problem == "dynamic" and data.has("v"):
            check("v", full)
    for role in ("d", "d1", "d2"):
        if data.has(role):
            vals = data.col(role)[data.obs(role)]
            if not np.all((vals == 0) | (vals == 1)):
                raise DataError(f"{role!r} must be 0 or 1")


def load_dataset(path, schema: Schema, problem: Optional[str] = None) -> Dataset:
    """Read a comma-separated file with a header row.

    Empty cells are missing values. When a problem is known (argument or
    ``schema.problem``) the missingness pattern is validated.
    """
    path = Path(path)
    problem = problem or schema.problem
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        rows = list(reader)
    missing = [h for h in schema.columns if h not in header]
    if missing:
        roles = sorted({schema.columns[h] for h in missing})
        raise SchemaError(f"missing column(s) {missing} for role(s) {roles}")
    if problem is not None:
        absent = [r for r in PROBLEM_ROLES[problem] if r not in schema.roles]
        if absent:
            raise SchemaError(f"missing required role(s) {absent} for problem {problem}")
    pos = {h: header.index(h) for h in schema.columns}
    n = len(rows)
    buf = {h: np.zeros(n) for h in schema.columns}
    present = {h: np.ones(n, dtype=bool) for h in schema.columns}
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(row)}", row=i)
        for h, j in pos.items():
            cell = row[j].strip()
            if cell == "":
                present[h][i] = False
                continue
            try:
                val = float(cell)
            except ValueError:
                raise DataError(f"malformed number {cell!r} in column {h!r}", row=i) from None
            if not math.isfinite(val):
                raise DataError(f"non-finite value {cell!r} in column {h!r}", row=i)
            buf[h][i] = val
    values, observed = {}, {}
    for role in schema.roles:
        hs = schema.headers(role)
        arr = np.column_stack([buf[h] for h in hs])
        masks = np.column_stack([present[h] for h in hs])
        partial = masks.any(axis=1) & ~masks.all(axis=1)
        if partial.any():
            raise DataError(f"role {role!r} partially missing", row=int(np.flatnonzero(partial)[0]))
        values[role] = arr
        observed[role] = masks.all(axis=1)
    data = Dataset(values, observed)
    if problem is not None:
        validate_pattern(data, problem)
    return data


def write_dataset(data: Dataset, path, dynamic: bool = False) -> None:
    """Write a dataset with the default header naming of ``Schema.infer``."""
    names, cols = [], []
    for role in ("y", "d", "d1", "d2", "g", "v", "x", "m", "z"):
        if not data.has(role):
            continue
        arr = data.values[role]
        mask = data.obs(role)
        for j in range(arr.shape[1]):
            if role in SCALAR_ROLES:
                name = role
            elif dynamic and role in ("x", "m"):
                name = f"{'x1' if role == 'x' else 'x2'}_{j + 1}"
            else:
                name = f"{role}{j + 1}"
            names.append(name)
            cols.append([repr(float(a)) if ok else "" for a, ok in zip(arr[:, j], mask)])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        w.writerows(zip(*cols))


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True, eq=False)
class FoldPartition:
    assignments: np.ndarray  # fold index in 0..L-1 per sample
    L: int
    seed: int

    def fold(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == k)

    def complement(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.L)


def partition_folds(n: int, L: int, seed: int) -> FoldPartition:
    """Shuffle indices with a seeded Fisher-Yates pass and cut contiguous
    blocks; the first ``n % L`` folds receive one extra sample."""
    if L < 2:
        raise ConfigurationError(f"fold count must be at least 2, got {L}")
    if n < 2 * L:
        raise ConfigurationError(f"need n >= 2*L samples, got n={n}, L={L}")
    perm = stream(seed, "folds").permutation(n)
    base, extra = divmod(n, L)
    assignments = np.empty(n, dtype=np.int64)
    start = 0
    for k in range(L):
        size = base + (1 if k < extra else 0)
        assignments[perm[start:start + size]] = k
        start += size
    assignments.setflags(write=False)
    return FoldPartition(assignments, L, int(seed))


# ---------------------------------------------------------------------------
# configuration


def _default_grid():
    return tuple(float(a) for a in np.logspace(-6, -1, 7))


@dataclass(frozen=True)
class KernelConfig:
    lengthscale: Optional[float] = None  # None: median heuristic
    ridge_grid: tuple = field(default_factory=_default_grid)

    def __post_init__(self):
        object.__setattr__(self, "ridge_grid", tuple(float(a) for a in self.ridge_grid))
        if not self.ridge_grid or min(self.ridge_grid) <= 0:
            raise ConfigurationError("ridge grid must be non-empty and positive")
        if self.lengthscale is not None and self.lengthscale <= 0:
            raise ConfigurationError("lengthscale must be positive")


@dataclass(frozen=True)
class NpivConfig:
    delta: Optional[float] = None  # None: delta_scale * n ** (-1/3)
    U: float = 1.0
    lam: Optional[float] = None  # None: delta**2 / U
    mu_factor: float = 1.0  # mu = mu_factor * lam
    delta_scale: float = 0.1

    def __post_init__(self):
        if self.U <= 0 or self.mu_factor <= 0 or self.delta_scale <= 0:
            raise ConfigurationError("U, mu_factor and delta_scale must be positive")
        if self.delta is not None and self.delta <= 0:
            raise ConfigurationError("delta must be positive")
        if self.lam is not None and self.lam <= 0:
            raise ConfigurationError("lam must be positive")

    def resolve(self, n: int) -> tuple[float, float, float, float]:
        """Return (lam, mu, U, delta) for a problem with n rows."""
        delta = self.delta if self.delta is not None else self.delta_scale * n ** (-1.0 / 3.0)
        lam = self.lam if self.lam is not None else delta ** 2 / self.U
        return lam, self.mu_factor * lam, self.U, delta


@dataclass(frozen=True)
class LocalConfig:
    kernel: str = "gaussian"
    h: Optional[float] = None
    v: Optional[float] = None

    def __post_init__(self):
        if self.kernel not in ("gaussian", "epanechnikov"):
            raise ConfigurationError(f"unknown localization kernel {self.kernel!r}")
        if self.h is not None and not self.h > 0:
            raise ConfigurationError("bandwidth h must be positive")
        if (self.h is None) != (self.v is None):
            raise ConfigurationError("localization needs both h and v")

    @property
    def active(self) -> bool:
        return self.h is not None


@dataclass(frozen=True)
class RunConfig:
    folds: int = 5
    propensity_floor: float = 0.01
    clip_alpha: Optional[float] = None  # None: 1 / floor**2
    clip_eta: Optional[float] = None
    level: float = 0.95
    seed: int = 0
    kernel: KernelConfig = field(default_factory=KernelConfig)
    npiv: NpivConfig = field(default_factory=NpivConfig)
    local: LocalConfig = field(default_factory=LocalConfig)

    def __post_init__(self):
        if self.folds < 2:
            raise ConfigurationError("folds must be at least 2")
        if not 0 < self.propensity_floor < 0.5:
            raise ConfigurationError("propensity_floor must lie in (0, 0.5)")
        for name in ("clip_alpha", "clip_eta"):
            cap = getattr(self, name)
            if cap is not None and not cap > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0 < self.level < 1:
            raise ConfigurationError("level must lie in (0, 1)")

    @property
    def a(self) -> float:
        return 1.0 - self.level

    @property
    def alpha_cap(self) -> float:
        return self.clip_alpha if self.clip_alpha is not None else self.propensity_floor ** -2

    @property
    def eta_cap(self) -> float:
        return self.clip_eta if self.clip_eta is not None else self.propensity_floor ** -2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, raw: Mapping) -> "RunConfig":
        nested = {"kernel": KernelConfig, "npiv": NpivConfig, "local": LocalConfig}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {sorted(unknown)}")
        kwargs = {}
        for key, val in raw.items():
            if key in nested:
                sub = nested[key]
                if not isinstance(val, Mapping):
                    raise ConfigurationError(f"config section {key!r} must be an object")
                sub_known = {f.name for f in dataclasses.fields(sub)}
                bad = set(val) - sub_known
                if bad:
                    raise ConfigurationError(f"unknown config key(s) in {key!r}: {sorted(bad)}")
                try:
                    kwargs[key] = sub(**val)
                except TypeError as exc:
                    raise ConfigurationError(str(exc)) from None
            else:
                kwargs[key] = val
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, Mapping):
            raise ConfigurationError("config must be a JSON object")
        return cls.from_dict(raw)
