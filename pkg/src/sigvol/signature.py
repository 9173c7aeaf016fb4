"""Brownian path generation and signatures of time-augmented paths.

Signatures of piecewise-linear paths are chained segment-by-segment with the
Chen identity.  Two engines are provided with identical semantics:

* a sparse per-path stream of GradedTensor values (reference implementation,
  used for exact algebra checks), and
* a dense batch engine holding one flat coefficient array per tensor level
  across many paths (used by the Monte Carlo drivers).

Brownian increments come from a counter-based generator: Philox keyed by the
run seed, with the increment for (path, step, coordinate) read at a fixed
counter offset, so path sets are order-independent and reproducible from
(seed, path_index) alone regardless of batching.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .algebra import (
    EMPTY_WORD,
    GradedTensor,
    Weight,
    Word,
    concat_product,
    weighted_norms,
)


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathGrid:
    """A time-augmented path sampled on a strictly increasing grid.

    values[k] lives in R^{d+1} with coordinate 0 equal to times[k].
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or values.ndim != 2 or values.shape[0] != times.shape[0]:
            raise ValueError("times (m+1,) and values (m+1, d+1) must align")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("grid must be strictly increasing")
        if not np.array_equal(values[:, 0], times):
            raise ValueError("coordinate 0 must equal the time grid")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        """Number of Brownian coordinates d (alphabet is {0, ..., d})."""
        return self.values.shape[1] - 1

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    @classmethod
    def from_brownian(cls, times: np.ndarray, w_values: np.ndarray) -> "PathGrid":
        times = np.asarray(times, dtype=float)
        aug = np.column_stack([times, np.asarray(w_values, dtype=float)])
        return cls(times, aug)


@dataclass(frozen=True)
class SignatureStream:
    """Prolonged-path signature at every grid time, as sparse tensors."""

    times: np.ndarray
    tensors: tuple[GradedTensor, ...]

    def __post_init__(self):
        if len(self.times) != len(self.tensors):
            raise ValueError("one tensor per grid time required")

    def __len__(self) -> int:
        return len(self.tensors)

    def __getitem__(self, k: int) -> GradedTensor:
        return self.tensors[k]

    @property
    def terminal(self) -> GradedTensor:
        return self.tensors[-1]


# ---------------------------------------------------------------------------
# Sparse engine
# ---------------------------------------------------------------------------


def segment_exponential(dx: np.ndarray, trunc: int) -> GradedTensor:
    """Signature of one linear segment: level n is dx^{(x)n} / n!."""
    dx = np.asarray(dx, dtype=float)
    dim = dx.shape[0] - 1
    coeffs: dict[Word, float] = {EMPTY_WORD: 1.0}
    level = {EMPTY_WORD: 1.0}
    letters = [j for j in range(dim + 1) if dx[j] != 0.0]
    for n in range(1, trunc + 1):
        nxt: dict[Word, float] = {}
        for w, c in level.items():
            for j in letters:
                nxt[w + (j,)] = c * dx[j] / n
        coeffs.update(nxt)
        level = nxt
        if not level:
            break
    return GradedTensor(dim, trunc, coeffs)


def signature_piecewise_linear(path: PathGrid, trunc: int) -> SignatureStream:
    """Chen-chained stream: W_{0,t_k} = W_{0,t_{k-1}} (x) exp(segment_k)."""
    tensors = [GradedTensor.unit(path.dim, trunc)]
    for dx in path.increments():
        seg = segment_exponential(dx, trunc)
        tensors.append(concat_product(tensors[-1], seg, trunc))
    return SignatureStream(path.times, tuple(tensors))


def signature_of_function(f: Callable[[np.ndarray], np.ndarray], d: int, horizon: float,
                          trunc: int, weight: Weight, tol: float = 1e-4,
                          k_start: int = 4, k_max: int = 14) -> GradedTensor:
    """Signature of a smooth path via piecewise-linear (Wong-Zakai) limits.

    Doubles a uniform 2^k grid until two successive truncated signatures
    differ by less than tol in the weighted norm.
    """
    prev = None
    for k in range(k_start, k_max + 1):
        times = np.linspace(0.0, horizon, 2**k + 1)
        vals = np.asarray(f(times), dtype=float)
        if vals.shape != (times.size, d):
            raise ValueError("path function must return (len(times), d) values")
        sig = signature_piecewise_linear(PathGrid.from_brownian(times, vals), trunc).terminal
        if prev is not None:
            delta = weighted_norms(sig - prev, weight)[0]
            if delta < tol:
                return sig
        prev = sig
    raise RuntimeError(f"no Wong-Zakai convergence below tol={tol} within 2^{k_max} steps")


# ---------------------------------------------------------------------------
# Dense batch engine
# ---------------------------------------------------------------------------


def word_index(word: Word, n_letters: int) -> int:
    """Row-major index of a word inside its own tensor level."""
    idx = 0
    for letter in word:
        idx = idx * n_letters + letter
    return idx


def all_words(d: int, max_len: int) -> list[Word]:
    """Every word over {0..d} with length <= max_len, in canonical order."""
    words: list[Word] = [EMPTY_WORD]
    level: list[Word] = [EMPTY_WORD]
    for _ in range(max_len):
        level = [w + (j,) for w in level for j in range(d + 1)]
        words.extend(level)
    return words


class BatchSignature:
    """Truncated signatures of a batch of paths, one dense array per level.

    levels[n] has shape (n_paths, (d+1)**n); chen_step applies one linear
    segment per path in place.
    """

    def __init__(self, n_paths: int, d: int, trunc: int):
        self.d = d
        self.trunc = trunc
        self.n_letters = d + 1
        self.levels = [np.zeros((n_paths, self.n_letters**n)) for n in range(trunc + 1)]
        self.levels[0][:, 0] = 1.0

    @property
    def n_paths(self) -> int:
        return self.levels[0].shape[0]

    def chen_step(self, dx: np.ndarray) -> None:
        """Concatenate the segment exponential of dx (n_paths, d+1) on the right."""
        n = self.n_paths
        seg = [np.ones((n, 1))]
        for k in range(1, self.trunc + 1):
            nxt = (seg[-1][:, :, None] * dx[:, None, :]).reshape(n, -1) / k
            seg.append(nxt)
        for m in range(self.trunc, 0, -1):
            acc = self.levels[m] + self.levels[0][:, :1] * seg[m]
            for k in range(1, m):
                acc = acc + (self.levels[k][:, :, None] * seg[m - k][:, None, :]).reshape(n, -1)
            self.levels[m] = acc

    def coord(self, word: Word) -> np.ndarray:
        if len(word) > self.trunc:
            raise ValueError(f"word {word} beyond truncation {self.trunc}")
        return self.levels[len(word)][:, word_index(word, self.n_letters)]

    def coords(self, words: list[Word]) -> np.ndarray:
        return np.column_stack([self.coord(w) for w in words]) if words else np.zeros((self.n_paths, 0))

    def pair(self, ell: GradedTensor) -> np.ndarray:
        """<ell, W_t> per path."""
        out = np.zeros(self.n_paths)
        for w, c in ell.coeffs.items():
            out += c * self.coord(w)
        return out

    def to_tensor(self, path: int) -> GradedTensor:
        """Sparse view of one path's signature (zeros pruned)."""
        coeffs: dict[Word, float] = {}
        idx_words = all_words(self.d, self.trunc)
        for w in idx_words:
            v = self.levels[len(w)][path, word_index(w, self.n_letters)]
            if v != 0.0:
                coeffs[w] = float(v)
        return GradedTensor(self.d, self.trunc, coeffs)


# ---------------------------------------------------------------------------
# Counter-based Brownian driver
# ---------------------------------------------------------------------------

_INV_2_53 = 2.0**-53


def _normals_for_paths(seed: int, path_start: int, n_paths: int, steps: int, d: int) -> np.ndarray:
    """Standard normals indexed by (path, step, coordinate).

    Each normal consumes a fixed pair of Philox uniforms located at a counter
    offset that depends only on (path, step, coordinate), via Box-Muller.
    Per-path blocks are padded to whole Philox counter blocks (4 outputs) so
    that paths start on advanceable boundaries.
    """
    per_path = 2 * steps * d
    per_path += (-per_path) % 4
    bitgen = np.random.Philox(key=np.uint64(seed))
    bitgen.advance((path_start * per_path) // 4)
    raw = bitgen.random_raw(n_paths * per_path).reshape(n_paths, per_path)
    u = (raw >> np.uint64(11)).astype(np.float64) * _INV_2_53 + 2.0**-54
    u1 = u[:, 0 : 2 * steps * d : 2]
    u2 = u[:, 1 : 2 * steps * d : 2]
    normals = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return normals.reshape(n_paths, steps, d)


@dataclass(frozen=True)
class BrownianBatch:
    """A set of time-augmented Brownian paths on a shared uniform grid."""

    times: np.ndarray
    values: np.ndarray  # (n_paths, steps+1, d+1), coordinate 0 is time
    seed: int
    path_offset: int = 0

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i: int) -> PathGrid:
        return PathGrid(self.times, self.values[i])

    @property
    def dim(self) -> int:
        return self.values.shape[2] - 1

    @property
    def steps(self) -> int:
        return self.values.shape[1] - 1

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)


def simulate_brownian_grid(d: int, horizon: float, steps: int, n_paths: int,
                           seed: int, path_offset: int = 0) -> BrownianBatch:
    """Independent N(0, dt) increments per coordinate on a uniform grid."""
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    if steps < 1 or n_paths < 1:
        raise ValueError("steps and n_paths must be >= 1")
    dt = horizon / steps
    normals = _normals_for_paths(seed, path_offset, n_paths, steps, d)
    times = np.linspace(0.0, horizon, steps + 1)
    values = np.empty((n_paths, steps + 1, d + 1))
    values[:, :, 0] = times[None, :]
    values[:, 0, 1:] = 0.0
    np.cumsum(normals * math.sqrt(dt), axis=1, out=values[:, 1:, 1:])
    return BrownianBatch(times, values, seed, path_offset)


def iter_brownian_blocks(d: int, horizon: float, steps: int, n_paths: int, seed: int,
                         block: int = 16384) -> Iterator[BrownianBatch]:
    """Stream the same path set as simulate_brownian_grid in path blocks."""
    start = 0
    while start < n_paths:
        n = min(block, n_paths - start)
        yield simulate_brownian_grid(d, horizon, steps, n, seed, path_offset=start)
        start += n


# ---------------------------------------------------------------------------
# Moment bound and binary path cache
# ---------------------------------------------------------------------------


def moment_bound(level: int, span: float, p: float, c_p: float | None = None) -> float:
    """Reference decay shape C_p * span^(p n / 2) / (n!)^(p/2).

    The constant is not pinned by theory; default C_p = 2**p.  Use only as a
    decay-shape reference for diagnostics.
    """
    if level < 0 or span <= 0.0:
        raise ValueError("level >= 0 and span > 0 required")
    if c_p is None:
        c_p = 2.0**p
    return c_p * span ** (p * level / 2.0) / math.factorial(level) ** (p / 2.0)


_CACHE_MAGIC = b"SVPATHS1"


def save_paths(filename: str, batch: BrownianBatch) -> None:
    """Binary cache: header (d, T, steps, n_paths, seed), then row-major
    increments of the Brownian coordinates as little-endian float64."""
    inc = batch.increments()[:, :, 1:]
    with open(filename, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<qdqqq", batch.dim, float(batch.times[-1]),
                             batch.steps, len(batch), batch.seed))
        fh.write(np.ascontiguousarray(inc, dtype="<f8").tobytes())


def load_paths(filename: str) -> BrownianBatch:
    with open(filename, "rb") as fh:
        magic = fh.read(len(_CACHE_MAGIC))
        if magic != _CACHE_MAGIC:
            raise ValueError("not a path cache file")
        d, horizon, steps, n_paths, seed = struct.unpack("<qdqqq", fh.read(8 * 5))
        data = np.frombuffer(fh.read(8 * n_paths * steps * d), dtype="<f8")
    inc = data.reshape(n_paths, steps, d)
    times = np.linspace(0.0, horizon, steps + 1)
    values = np.empty((n_paths, steps + 1, d + 1))
    values[:, :, 0] = times[None, :]
    values[:, 0, 1:] = 0.0
    np.cumsum(inc, axis=1, out=values[:, 1:, 1:])
    return BrownianBatch(times, values, seed)
