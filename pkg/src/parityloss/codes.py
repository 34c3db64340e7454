"""Constructors for parity/redundancy code states and the gate resource states.

All states can be synthesized directly as amplitude vectors (deterministic,
used as protocol inputs and test fixtures) and instantiated into a
``PhotonRegister``.  Port photons of resource states are tagged on the
returned handle rather than by positional convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .qstate import PhotonRegister, parity_basis_vector


@dataclass(frozen=True)
class CodeLayout:
    """Parity length n (photons per parity qubit) and redundancy width q."""

    n: int
    q: int

    def __post_init__(self):
        if self.n < 1 or self.q < 1:
            raise ValueError("layout requires n >= 1 and q >= 1")

    @property
    def photons(self) -> int:
        return self.n * self.q


@dataclass(frozen=True)
class LogicalQubitSpec:
    """Logical amplitudes (alpha, beta) with |alpha|^2 + |beta|^2 = 1."""

    alpha: complex
    beta: complex

    def __post_init__(self):
        nrm = abs(self.alpha) ** 2 + abs(self.beta) ** 2
        if abs(nrm - 1.0) > 1e-12:
            raise ValueError(f"spec is not normalized: |a|^2+|b|^2 = {nrm}")

    @staticmethod
    def of(alpha, beta) -> "LogicalQubitSpec":
        nrm = np.sqrt(abs(alpha) ** 2 + abs(beta) ** 2)
        return LogicalQubitSpec(alpha / nrm, beta / nrm)


ZERO = LogicalQubitSpec(1.0, 0.0)
ONE = LogicalQubitSpec(0.0, 1.0)
PLUS = LogicalQubitSpec.of(1.0, 1.0)


@dataclass
class ResourceHandle:
    """Photon ids of an instantiated resource, by role."""

    port: int | None = None  # fusion port (C)
    port_d: int | None = None  # second port (D) for the CNOT resource
    blocks: list[list[int]] = field(default_factory=list)
    all_ids: list[int] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Amplitude synthesis
# ---------------------------------------------------------------------------


def make_parity(spec: LogicalQubitSpec, n: int) -> np.ndarray:
    """alpha |0>^(n) + beta |1>^(n): support only on even/odd parity strings."""
    if n < 1:
        raise ValueError("parity encoding needs n >= 1")
    return spec.alpha * parity_basis_vector(n, 0) + spec.beta * parity_basis_vector(n, 1)


def _redundant_basis(n: int, q: int, value: int) -> np.ndarray:
    blk = parity_basis_vector(n, value)
    out = blk
    for _ in range(q - 1):
        out = np.kron(out, blk)
    return out


def make_redundant(spec: LogicalQubitSpec, n: int, q: int) -> np.ndarray:
    """alpha |0>^(n,q) + beta |1>^(n,q) over n*q photons (block-major order)."""
    if n < 1 or q < 1:
        raise ValueError("redundant encoding needs n, q >= 1")
    return spec.alpha * _redundant_basis(n, q, 0) + spec.beta * _redundant_basis(n, q, 1)


@lru_cache(maxsize=128)
def _memory_resource_cached(n: int, q: int) -> np.ndarray:
    zero = np.kron(np.array([1, 0], dtype=complex), _redundant_basis(n, q, 0))
    one = np.kron(np.array([0, 1], dtype=complex), _redundant_basis(n, q, 1))
    vec = (zero + one) / np.sqrt(2)
    vec.flags.writeable = False
    return vec


def make_memory_resource(n: int, q: int) -> np.ndarray:
    """(|0>|0>^(n,q) + |1>|1>^(n,q)) / sqrt2, port photon first."""
    if n < 1 or q < 1:
        raise ValueError("memory resource needs n, q >= 1")
    return _memory_resource_cached(n, q)


def make_R1(n: int) -> np.ndarray:
    """Parity resource for the Z_theta gate: |0>^(n+1), any photon may serve as port."""
    if n < 1:
        raise ValueError("R1 needs n >= 1")
    return parity_basis_vector(n + 1, 0)


def make_R2(n: int, q: int) -> np.ndarray:
    """Redundancy resource for the X_90 gate; identical in form to the memory resource."""
    return make_memory_resource(n, q)


def make_R3(n: int) -> np.ndarray:
    """CNOT resource: two parity qubits with the gate pre-applied between them.

    Photon order: [C, n-part (n), m-part (m), D] with m = floor(n/2).  The
    printed expression is unnormalized; the returned vector has unit norm.
    """
    if n < 2:
        raise ValueError("R3 needs n >= 2 (target parity length floor(n/2) would vanish)")
    return _r3_cached(n)


@lru_cache(maxsize=64)
def _r3_cached(n: int) -> np.ndarray:
    m = n // 2
    bit = {0: np.array([1, 0], dtype=complex), 1: np.array([0, 1], dtype=complex)}
    out = np.zeros(2 ** (1 + n + m + 1), dtype=complex)
    for c in (0, 1):
        for t in (0, 1):
            term = np.kron(
                np.kron(bit[c], parity_basis_vector(n, c)),
                np.kron(parity_basis_vector(m, (t + c) % 2), bit[t]),
            )
            out = out + term
    out /= np.linalg.norm(out)
    out.flags.writeable = False
    return out


# ---------------------------------------------------------------------------
# Instantiation into a register
# ---------------------------------------------------------------------------


def new_logical(reg: PhotonRegister, spec: LogicalQubitSpec, layout: CodeLayout, age: str = "old") -> list[list[int]]:
    """Add a freshly encoded logical qubit; returns its blocks (lists of photon ids)."""
    vec = make_redundant(spec, layout.n, layout.q)
    ids = reg.add_photons(vec, layout.photons, age=age)
    blocks = [ids[i * layout.n : (i + 1) * layout.n] for i in range(layout.q)]
    for b, blk in enumerate(blocks):
        for i, pid in enumerate(blk):
            reg.slots[pid].block = (b, i)
    return blocks

def new_memory_resource(reg: PhotonRegister, n: int, q: int) -> ResourceHandle:
    ids = reg.add_photons(make_memory_resource(n, q), 1 + n * q, age="new")
    h = ResourceHandle(port=ids[0], all_ids=ids)
    h.blocks = [ids[1 + i * n : 1 + (i + 1) * n] for i in range(q)]
    reg.slots[ids[0]].block = "C"
    return h


def new_R1(reg: PhotonRegister, n: int) -> ResourceHandle:
    ids = reg.add_photons(make_R1(n), n + 1, age="new")
    h = ResourceHandle(port=ids[0], blocks=[ids[1:]], all_ids=ids)
    reg.slots[ids[0]].block = "C"
    return h


def new_R2(reg: PhotonRegister, n: int, q: int) -> ResourceHandle:
    h = new_memory_resource(reg, n, q)
    return h


def new_R3(reg: PhotonRegister, n: int) -> ResourceHandle:
    m = n // 2
    ids = reg.add_photons(make_R3(n), 1 + n + m + 1, age="new")
    h = ResourceHandle(port=ids[0], port_d=ids[-1], all_ids=ids)
    h.blocks = [ids[1 : 1 + n], ids[1 + n : 1 + n + m]]
    reg.slots[ids[0]].block = "C"
    reg.slots[ids[-1]].block = "D"
    return h


# ---------------------------------------------------------------------------
# Decoding helpers (shared by protocols, tests and the service layer)
# ---------------------------------------------------------------------------


def basis_vector_for(reg: PhotonRegister, blocks: list[list[int]], value: int) -> np.ndarray:
    """|value>^(n,q) as a vector over the register's current present-photon axes.

    Photons not belonging to ``blocks`` must not exist (decode expects the
    carrier to be the whole register).
    """
    carrier = [p for blk in blocks for p in blk]
    if sorted(carrier) != sorted(reg.order):
        raise ValueError("decode expects the carrier blocks to cover the register")
    k = len(reg.order)
    idx = np.arange(2**k)
    axis_of = {p: reg.order.index(p) for p in carrier}
    amp = np.ones(2**k)
    ok = np.ones(2**k, dtype=bool)
    for blk in blocks:
        par = np.zeros(2**k, dtype=int)
        for p in blk:
            par ^= (idx >> (k - 1 - axis_of[p])) & 1
        ok &= par == value
        amp = amp / np.sqrt(2 ** (len(blk) - 1))
    vec = np.where(ok, amp, 0.0).astype(complex)
    return vec / np.linalg.norm(vec)


def logical_amplitudes(reg: PhotonRegister, blocks: list[list[int]]):
    """Decode (a, b, residual): state = a |0_L> + b |1_L> + residual outside code space."""
    v0 = basis_vector_for(reg, blocks, 0)
    v1 = basis_vector_for(reg, blocks, 1)
    a = complex(np.vdot(v0, reg.amps))
    b = complex(np.vdot(v1, reg.amps))
    residual = 1.0 - (abs(a) ** 2 + abs(b) ** 2)
    return a, b, residual
