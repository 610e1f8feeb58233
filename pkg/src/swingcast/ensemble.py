"""Monte Carlo ensembles of the swing model and their sample moments.

An Ensemble stores N realizations on a shared (K+1)-point grid as an
(N, K+1, 3) array, variable order (theta, omega, pm_prime).  MomentView
computes sample means (per variable and time) and unbiased sample
covariance blocks between arbitrary (variable, time-index) sets:

    mean(v, k)        = (1/N)     * sum_n x[n, k, v]
    cov((u,j), (v,k)) = (1/(N-1)) * sum_n (x[n,j,u] - mean(u,j)) * (x[n,k,v] - mean(v,k))

Full joint covariances over the whole grid are never materialized; blocks
are built on demand for the requested index sets.

File container (format version 1, field order is normative):

    bytes 0-7    magic b"SWINGENS"
    bytes 8-11   header length L, uint32 little-endian
    next L       header, UTF-8 JSON with keys in this order:
                 format_version, n_realizations, n_steps, dt, variables,
                 master_seed, grid, ou, sim
    next N*(K+1)*3*8   data, float64 little-endian, C order
                       (realization-major: n, then k, then variable)
    last 8       BLAKE2b-64 digest of all preceding bytes
"""

from __future__ import annotations

import json
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    ChecksumMismatch,
    FormatVersionMismatch,
    IndexOutOfRange,
    IntegrationDiverged,
)
from .sde import (
    GridParams,
    OuParams,
    SimConfig,
    Trajectory,
    draw_initial_pm,
    integrate_lanes,
    realization_stream,
)

__all__ = [
    "Variable",
    "IndexSet",
    "Ensemble",
    "MomentView",
    "run_ensemble",
    "save_ensemble",
    "load_ensemble",
]

_MAGIC = b"SWINGENS"
FORMAT_VERSION = 1

# realizations are integrated in fixed-size blocks; the block size is a
# constant so results cannot depend on the worker count
_LANE_CHUNK = 256


class Variable(IntEnum):
    """State variable, doubling as the column index in ensemble data."""

    THETA = 0
    OMEGA = 1
    PM_PRIME = 2

    @property
    def label(self) -> str:
        return _VAR_LABELS[self]


_VAR_LABELS = {
    Variable.THETA: "theta",
    Variable.OMEGA: "omega",
    Variable.PM_PRIME: "pm_prime",
}


@dataclass(frozen=True)
class IndexSet:
    """Ordered, duplicate-free set of (variable, time-index) pairs.

    Addresses rows/columns of moment vectors and covariance blocks.
    """

    var_codes: np.ndarray
    time_indices: np.ndarray

    def __post_init__(self):
        vc = np.ascontiguousarray(self.var_codes, dtype=np.int8)
        ti = np.ascontiguousarray(self.time_indices, dtype=np.int64)
        if vc.shape != ti.shape or vc.ndim != 1:
            raise ValueError("var_codes and time_indices must be equal-length 1-d arrays")
        if ti.size and ti.min() < 0:
            raise ValueError("time indices must be non-negative")
        if not np.all((vc >= 0) & (vc <= 2)):
            raise ValueError("variable codes must be 0 (theta), 1 (omega) or 2 (pm_prime)")
        pairs = set(zip(vc.tolist(), ti.tolist()))
        if len(pairs) != vc.size:
            raise ValueError("duplicate (variable, time-index) entries")
        object.__setattr__(self, "var_codes", vc)
        object.__setattr__(self, "time_indices", ti)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Variable, int]]) -> "IndexSet":
        pairs = list(pairs)
        return cls(
            np.array([int(v) for v, _ in pairs], dtype=np.int8),
            np.array([int(k) for _, k in pairs], dtype=np.int64),
        )

    @classmethod
    def grid(cls, variable: Variable, time_indices: np.ndarray) -> "IndexSet":
        """All entries of one variable at the given time indices."""
        ti = np.asarray(time_indices, dtype=np.int64)
        return cls(np.full(ti.shape, int(variable), dtype=np.int8), ti)

    @classmethod
    def concat(cls, *sets: "IndexSet") -> "IndexSet":
        return cls(
            np.concatenate([s.var_codes for s in sets]) if sets else np.empty(0, np.int8),
            np.concatenate([s.time_indices for s in sets]) if sets else np.empty(0, np.int64),
        )

    def __len__(self) -> int:
        return int(self.var_codes.size)

    def __iter__(self) -> Iterator[tuple[Variable, int]]:
        for v, k in zip(self.var_codes, self.time_indices):
            yield Variable(int(v)), int(k)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, IndexSet)
            and np.array_equal(self.var_codes, other.var_codes)
            and np.array_equal(self.time_indices, other.time_indices)
        )

    def mask_for(self, variable: Variable) -> np.ndarray:
        return self.var_codes == int(variable)

    def subset(self, mask: np.ndarray) -> "IndexSet":
        return IndexSet(self.var_codes[mask], self.time_indices[mask])

    def _sort_key(self) -> tuple:
        return (len(self), self.var_codes.tobytes(), self.time_indices.tobytes())


@dataclass
class Ensemble:
    """N realizations on a shared grid, plus the configuration that made them.

    `data` has shape (N, K+1, 3); all values finite; N >= 2 so unbiased
    covariances exist.
    """

    data: np.ndarray
    times: np.ndarray
    master_seed: int
    grid: GridParams
    ou: OuParams
    sim: SimConfig

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"data must be (N, K+1, 3), got {self.data.shape}")
        if self.data.shape[0] < 2:
            raise ValueError("an ensemble needs at least 2 realizations")
        if self.data.shape[1] != self.times.size:
            raise ValueError("data and times disagree on the number of grid points")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("ensemble data contains non-finite values")
        spacing = np.diff(self.times)
        if self.times.size > 1 and not np.allclose(spacing, spacing[0], rtol=1e-9, atol=0.0):
            raise ValueError("time grid is not uniform")

    @property
    def n_realizations(self) -> int:
        return self.data.shape[0]

    @property
    def n_steps(self) -> int:
        return self.data.shape[1] - 1

    @property
    def dt(self) -> float:
        return float(self.sim.dt)

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(times=self.times, data=self.data[i], seed_used=self.master_seed)


def run_ensemble(
    params: GridParams,
    ou: OuParams,
    cfg: SimConfig,
    n: int,
    workers: int = 1,
) -> Ensemble:
    """Run an n-realization Monte Carlo ensemble.

    Realization i draws from the counter-based stream (cfg.seed, i), so the
    result is bitwise identical for any `workers` value and any execution
    order.  Raises IntegrationDiverged naming the realization and step.
    """
    if n < 2:
        raise ValueError(f"need at least 2 realizations, got {n}")
    n_steps = cfg.n_steps
    out = np.empty((n, n_steps + 1, 3))

    def _run_chunk(lo: int, hi: int) -> None:
        width = hi - lo
        noise = np.empty((n_steps, 2, width))
        z0 = np.empty(width)
        for j in range(width):
            rng = realization_stream(cfg.seed, lo + j)
            z0[j] = draw_initial_pm(ou, cfg, rng)
            noise[:, :, j] = rng.standard_normal((n_steps, 2))
        try:
            block = integrate_lanes(
                params,
                ou,
                cfg.dt,
                np.full(width, cfg.init_theta),
                np.full(width, cfg.init_omega),
                z0,
                noise,
            )
        except IntegrationDiverged as exc:
            raise IntegrationDiverged(
                step=exc.step,
                realization=lo + (exc.realization or 0),
            ) from None
        out[lo:hi] = block

    spans = [(lo, min(lo + _LANE_CHUNK, n)) for lo in range(0, n, _LANE_CHUNK)]
    if workers <= 1:
        for lo, hi in spans:
            _run_chunk(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, lo, hi) for lo, hi in spans]
            for fut in futures:
                fut.result()

    return Ensemble(
        data=out,
        times=cfg.times(),
        master_seed=cfg.seed,
        grid=params,
        ou=ou,
        sim=cfg,
    )


class MomentView:
    """Sample means and covariance blocks of an ensemble.

    Means are cached lazily per variable; covariance blocks are computed on
    demand and not cached.
    """

    def __init__(self, ensemble: Ensemble):
        self.ensemble = ensemble
        self._mean_columns: dict[int, np.ndarray] = {}

    def _mean_column(self, var_code: int) -> np.ndarray:
        col = self._mean_columns.get(var_code)
        if col is None:
            col = self.ensemble.data[:, :, var_code].mean(axis=0)
            self._mean_columns[var_code] = col
        return col

    def _check(self, idx: IndexSet) -> None:
        k_max = self.ensemble.n_steps
        if len(idx) and idx.time_indices.max() > k_max:
            bad = int(idx.time_indices.max())
            raise IndexOutOfRange(f"time index {bad} exceeds grid maximum {k_max}")

    def mean(self, variable: Variable, k: int) -> float:
        if not 0 <= k <= self.ensemble.n_steps:
            raise IndexOutOfRange(f"time index {k} exceeds grid maximum {self.ensemble.n_steps}")
        return float(self._mean_column(int(variable))[k])

    def mean_vector(self, idx: IndexSet) -> np.ndarray:
        self._check(idx)
        out = np.empty(len(idx))
        for code in np.unique(idx.var_codes):
            mask = idx.var_codes == code
            out[mask] = self._mean_column(int(code))[idx.time_indices[mask]]
        return out

    def _anomalies(self, idx: IndexSet) -> np.ndarray:
        """(N, len(idx)) matrix of realizations minus the sample mean."""
        raw = self.ensemble.data[:, idx.time_indices, idx.var_codes]
        return raw - self.mean_vector(idx)

    def cov_block(self, rows: IndexSet, cols: IndexSet) -> np.ndarray:
        """Unbiased sample covariance between two index sets.

        cov_block(a, b) is exactly the transpose of cov_block(b, a): the
        contraction always runs in a canonical orientation.
        """
        self._check(rows)
        self._check(cols)
        if cols._sort_key() < rows._sort_key():
            return self.cov_block(cols, rows).T
        a = self._anomalies(rows)
        b = a if cols == rows else self._anomalies(cols)
        return (a.T @ b) / (self.ensemble.n_realizations - 1)


def _header_dict(ens: Ensemble) -> dict:
    sim = ens.sim
    return {
        "format_version": FORMAT_VERSION,
        "n_realizations": ens.n_realizations,
        "n_steps": ens.n_steps,
        "dt": ens.dt,
        "variables": [Variable(v).label for v in range(3)],
        "master_seed": ens.master_seed,
        "grid": {
            "p_max": ens.grid.p_max,
            "h_inertia": ens.grid.h_inertia,
            "damping": ens.grid.damping,
            "p_m_mean": ens.grid.p_m_mean,
            "omega_b": ens.grid.omega_b,
            "omega_s": ens.grid.omega_s,
        },
        "ou": {"sigma": ens.ou.sigma, "corr_time": ens.ou.corr_time},
        "sim": {
            "dt": sim.dt,
            "t_end": sim.t_end,
            "seed": sim.seed,
            "init_theta": sim.init_theta,
            "init_omega": sim.init_omega,
            "init_pm": sim.init_pm,
        },
    }


def save_ensemble(ens: Ensemble, path) -> None:
    """Write the binary container described in the module docstring."""
    header = json.dumps(_header_dict(ens)).encode("utf-8")
    digest = hashlib.blake2b(digest_size=8)
    payload = np.ascontiguousarray(ens.data, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        for part in (
            _MAGIC,
            np.uint32(len(header)).tobytes(),
            header,
            payload,
        ):
            digest.update(part)
            fh.write(part)
        fh.write(digest.digest())


def load_ensemble(path) -> Ensemble:
    """Read a container written by save_ensemble.

    Raises FormatVersionMismatch for foreign or newer-version files and
    ChecksumMismatch for truncated or corrupted ones.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 4 or blob[: len(_MAGIC)] != _MAGIC:
        raise FormatVersionMismatch("not an ensemble container")
    off = len(_MAGIC)
    (hlen,) = np.frombuffer(blob[off : off + 4], dtype="<u4")
    off += 4
    if len(blob) < off + int(hlen):
        raise ChecksumMismatch("file truncated inside header")
    try:
        header = json.loads(blob[off : off + int(hlen)].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumMismatch(f"unreadable header: {exc}") from None
    off += int(hlen)

    version = header.get("format_version")
    if not isinstance(version, int) or version > FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"file format version {version!r}; this build reads <= {FORMAT_VERSION}"
        )

    n = int(header["n_realizations"])
    k = int(header["n_steps"])
    nbytes = n * (k + 1) * 3 * 8
    if len(blob) != off + nbytes + 8:
        raise ChecksumMismatch(
            f"file length {len(blob)} != expected {off + nbytes + 8} (truncated or padded)"
        )
    digest = hashlib.blake2b(blob[: off + nbytes], digest_size=8).digest()
    if digest != blob[off + nbytes :]:
        raise ChecksumMismatch("checksum does not match file contents")

    data = (
        np.frombuffer(blob, dtype="<f8", count=n * (k + 1) * 3, offset=off)
        .reshape(n, k + 1, 3)
        .astype(float)
    )
    sim = SimConfig(**header["sim"])
    return Ensemble(
        data=data,
        times=sim.times(),
        master_seed=int(header["master_seed"]),
        grid=GridParams(**header["grid"]),
        ou=OuParams(**header["ou"]),
        sim=sim,
    )
