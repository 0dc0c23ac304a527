"""Ising instances, classical energies, SK generation and an exhaustive oracle.

Energies use the doubled convention ``E = sum_{i != j} J_ij s_i s_j + sum_i h_i s_i``
with a symmetric, zero-diagonal ``J``. For SK couplings drawn with variance
``1/n`` the ground-state energy per spin tends to -1.526.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dulqa.errors import ContractError, SizeError

BRUTE_FORCE_MAX_N = 24


@dataclass(frozen=True, eq=False)
class IsingInstance:
    """Dense Ising problem with symmetric couplings and zero diagonal."""

    couplings: np.ndarray
    fields: np.ndarray

    def __post_init__(self):
        J = np.array(self.couplings, dtype=np.float64, copy=True)
        h = np.array(self.fields, dtype=np.float64, copy=True)
        if J.ndim != 2 or J.shape[0] != J.shape[1] or J.shape[0] < 1:
            raise ContractError(f"couplings must be a square n x n matrix, got shape {J.shape}")
        if h.shape != (J.shape[0],):
            raise ContractError(f"fields must have shape ({J.shape[0]},), got {h.shape}")
        if not (np.all(np.isfinite(J)) and np.all(np.isfinite(h))):
            raise ContractError("couplings and fields must be finite")
        if not np.array_equal(J, J.T):
            raise ContractError("couplings must be exactly symmetric")
        if np.any(np.diag(J) != 0.0):
            raise ContractError("couplings must have a zero diagonal")
        J.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "couplings", J)
        object.__setattr__(self, "fields", h)

    @classmethod
    def _trusted(cls, J: np.ndarray, h: np.ndarray) -> "IsingInstance":
        # skips validation; only for arrays built symmetric/zero-diagonal by construction
        inst = object.__new__(cls)
        J.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(inst, "couplings", J)
        object.__setattr__(inst, "fields", h)
        return inst

    @property
    def n(self) -> int:
        return self.couplings.shape[0]

    def __eq__(self, other):
        if not isinstance(other, IsingInstance):
            return NotImplemented
        return np.array_equal(self.couplings, other.couplings) and np.array_equal(
            self.fields, other.fields
        )

    __hash__ = None


@dataclass(frozen=True)
class GroundTruth:
    energy: float
    config: np.ndarray
    method: str = "exhaustive"


def as_spins(sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=np.float64)
    if s.ndim != 1 or not np.all((s == 1.0) | (s == -1.0)):
        raise ContractError("spin configuration must be a 1-D vector of +-1 entries")
    return s


def ising_energy(inst: IsingInstance, sigma) -> float:
    """Return ``sigma^T J sigma + h^T sigma``.

    Summation order is fixed: row products ``(J sigma)_i`` are accumulated by
    ascending column index, then the rows are accumulated by ascending ``i``,
    then the field term is added.
    """
    s = as_spins(sigma)
    if s.shape[0] != inst.n:
        raise ContractError(f"spin vector has length {s.shape[0]}, instance has n={inst.n}")
    return _quadratic_form(inst.couplings, inst.fields, s)


def _quadratic_form(J: np.ndarray, h: np.ndarray, z: np.ndarray) -> float:
    # cumsum is strictly sequential, which pins the order to ascending indices
    rows = np.cumsum(J * z[None, :], axis=1)[:, -1]
    quad = np.cumsum(z * rows)[-1]
    field = np.cumsum(h * z)[-1]
    return float(quad + field)


def batch_energy(J: np.ndarray, h: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Vectorized energies for stacked configurations ``S`` of shape ``(B, n)``.

    ``J`` is either shared ``(n, n)`` or per-row ``(B, n, n)``. Used on hot
    paths; agrees with :func:`ising_energy` to rounding.
    """
    if J.ndim == 2:
        JS = S @ J
    else:
        JS = np.matmul(J, S[..., None])[..., 0]
    field = S @ h if h.ndim == 1 else np.einsum("bi,bi->b", S, h)
    return np.einsum("bi,bi->b", S, JS) + field


def generate_sk(n: int, seed: int) -> IsingInstance:
    """SK instance: ``J_ij = J_ji = g / sqrt(n)`` with ``g ~ N(0, 1)`` for ``i < j``, ``h = 0``.

    Upper-triangle entries are drawn in row-major order from a PCG64 stream
    seeded by ``seed``.
    """
    if int(n) != n or n < 2:
        raise SizeError(f"SK instances need n >= 2, got {n}")
    n = int(n)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & (2**64 - 1))))
    upper = _upper_flat_indices(n)
    J = np.zeros(n * n)
    J[upper] = rng.standard_normal(upper.shape[0]) / np.sqrt(n)
    J = J.reshape(n, n)
    return IsingInstance._trusted(J + J.T, np.zeros(n))


@functools.lru_cache(maxsize=16)
def _upper_flat_indices(n: int) -> np.ndarray:
    i, j = np.triu_indices(n, k=1)
    return i * n + j


def _all_configs(n: int) -> np.ndarray:
    # row k is the configuration whose bit i (LSB first) set means spin i = -1
    k = np.arange(2**n, dtype=np.int64)[:, None]
    bits = (k >> np.arange(n, dtype=np.int64)) & 1
    return 1.0 - 2.0 * bits


def brute_force_ground_state(inst: IsingInstance) -> GroundTruth:
    """Exhaustive minimum over all ``2**n`` configurations.

    Configurations are indexed by the integer whose bit ``i`` marks spin ``i``
    as -1, so index 0 is all +1; ties go to the lowest index.
    """
    n = inst.n
    if n > BRUTE_FORCE_MAX_N:
        raise SizeError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}, got n={n}")
    best_e = np.inf
    best_k = -1
    chunk_bits = min(n, 16)
    block = _all_configs(chunk_bits)
    for hi in range(2 ** (n - chunk_bits)):
        hi_bits = 1.0 - 2.0 * ((hi >> np.arange(n - chunk_bits)) & 1)
        S = np.hstack([block, np.broadcast_to(hi_bits, (block.shape[0], n - chunk_bits))])
        E = batch_energy(inst.couplings, inst.fields, S)
        k = int(np.argmin(E))
        if E[k] < best_e:
            best_e, best_k = float(E[k]), (hi << chunk_bits) + k
    config = 1.0 - 2.0 * ((best_k >> np.arange(n)) & 1)
    # re-evaluate with the reference summation order so energy == ising_energy(config)
    return GroundTruth(ising_energy(inst, config), config.astype(np.float64))


def write_instance(inst: IsingInstance, path, header: list[str] | None = None) -> None:
    """Write the text instance format (``n``, ``J i j v`` for i<j nonzeros, ``h i v``)."""
    lines = [f"# {c}" for c in (header or [])]
    lines.append(f"n {inst.n}")
    J = inst.couplings
    for i in range(inst.n):
        for j in range(i + 1, inst.n):
            if J[i, j] != 0.0:
                lines.append(f"J {i} {j} {J[i, j]:.17g}")
    for i in range(inst.n):
        if inst.fields[i] != 0.0:
            lines.append(f"h {i} {inst.fields[i]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_instance(path) -> IsingInstance:
    n = None
    J = h = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "n" and n is None:
                n = int(parts[1])
                if n < 1:
                    raise ValueError
                J, h = np.zeros((n, n)), np.zeros(n)
            elif parts[0] == "J" and n is not None and len(parts) == 4:
                i, j, v = int(parts[1]), int(parts[2]), float(parts[3])
                if not 0 <= i < j < n:
                    raise ValueError
                J[i, j] = J[j, i] = v
            elif parts[0] == "h" and n is not None and len(parts) == 3:
                i, v = int(parts[1]), float(parts[2])
                if not 0 <= i < n:
                    raise ValueError
                h[i] = v
            else:
                raise ValueError
        except (ValueError, IndexError):
            raise ContractError(f"{path}:{lineno}: malformed instance line {raw!r}") from None
    if n is None:
        raise ContractError(f"{path}: missing 'n <int>' line")
    return IsingInstance(J, h)
