"""Exact pure-state engine for a register of polarization qubits.

Photons are abstract qubits (|0> = H, |1> = V).  The register keeps one
axis of a dense complex amplitude vector per *present* photon, so the
state dimension is always 2^(number of present photons).  Photon loss is
modeled as a computational-basis measurement performed by the environment:
the outcome is recorded but hidden from protocol code, which only ever
sees the photon's status change to "lost".

Measurement outcomes, fusion outcomes and hidden loss values are drawn
from an outcome source.  ``SampledOutcomes`` draws from a counter-based
RNG stream keyed by (master seed, run id) so trials are reproducible and
can be partitioned across workers.  ``ScriptedOutcomes`` forces specific
branches for deterministic tests.
"""

from __future__ import annotations

import cmath
import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

SQRT1_2 = 1.0 / math.sqrt(2.0)

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = SQRT1_2 * np.array([[1, 1], [1, -1]], dtype=complex)


def x_rotation(theta_deg: float) -> np.ndarray:
    """X_theta = cos(theta/2) I - i sin(theta/2) X."""
    half = math.radians(theta_deg) / 2.0
    return math.cos(half) * PAULI_I - 1j * math.sin(half) * PAULI_X


def z_phase(theta_deg: float) -> np.ndarray:
    """diag(1, e^{i theta}), the phase gate used by the logical Z_theta."""
    return np.array([[1, 0], [0, cmath.exp(1j * math.radians(theta_deg))]], dtype=complex)


class PhotonStatus(Enum):
    PRESENT = "present"
    LOST = "lost"
    MEASURED = "measured"


class Basis(Enum):
    COMPUTATIONAL = "computational"
    DIAGONAL = "diagonal"


class EngineError(Exception):
    """Base class for state-engine errors."""


class PhotonStateError(EngineError):
    """Operation on a photon that is not present (lost vs measured is reported)."""

    def __init__(self, photon: int, status: PhotonStatus, op: str):
        self.photon = photon
        self.status = status
        super().__init__(f"{op}: photon {photon} is {status.value}, not present")


class CapacityError(EngineError):
    """Register would exceed the configured photon bound."""


class ForcedOutcomeError(EngineError):
    """A scripted outcome has (numerically) zero probability."""


@dataclass
class PhotonSlot:
    id: int
    status: PhotonStatus = PhotonStatus.PRESENT
    block: object = None  # (redundancy index, parity index) or resource tag
    age: str = "new"  # "old" or "new"; drives eta1 vs eta2 detection


@dataclass
class MeasurementRecord:
    photon: int
    basis: Basis
    result: Optional[int]  # None when hidden from protocol code
    hidden: bool = False


class FusionKind(Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    LOSS_DETECTED = "loss_detected"


@dataclass
class FusionOutcome:
    kind: FusionKind
    sign: int = 0  # +1 / -1 for success
    bits: tuple = ()  # (b_a, b_b) for failure
    photons_seen: int = 2  # for loss_detected: photons still present at the attempt


# ---------------------------------------------------------------------------
# Outcome sources
# ---------------------------------------------------------------------------


class SampledOutcomes:
    """Counter-based random outcomes keyed by (master seed, run id)."""

    def __init__(self, seed: int, run_id: int = 0):
        self.seed = seed
        self.run_id = run_id
        self._rng = np.random.Generator(np.random.Philox(key=[seed % (2**64), run_id % (2**64)]))

    def bernoulli(self, p: float, label: str = "") -> bool:
        return self._rng.random() < p

    def pick(self, probs: Sequence[float], label: str = "") -> int:
        r = self._rng.random()
        acc = 0.0
        for i, p in enumerate(probs):
            acc += p
            if r < acc:
                return i
        return len(probs) - 1

    def hidden_bit(self, p0: float) -> int:
        return 0 if self._rng.random() < p0 else 1


class ScriptedOutcomes:
    """Deterministic outcome source for branch-forcing tests.

    Queued entries force the corresponding draw (an error is raised when the
    forced branch has probability below ``tol``).  When a queue is empty the
    most probable outcome is taken, ties resolved toward index 0, so runs are
    fully deterministic.
    """

    def __init__(
        self,
        fusion: Iterable = (),
        measurements: Iterable[int] = (),
        hidden: Iterable[int] = (),
        fusion_default: Optional[str] = "+",
        tol: float = 1e-9,
    ):
        self.fusion_queue = deque(fusion)
        self.measure_queue = deque(measurements)
        self.hidden_queue = deque(hidden)
        self.fusion_default = fusion_default
        self.tol = tol

    def bernoulli(self, p: float, label: str = "") -> bool:
        return p >= 0.5

    def pick(self, probs: Sequence[float], label: str = "") -> int:
        if label == "fusion":
            forced = bool(self.fusion_queue)
            want = self.fusion_queue.popleft() if forced else self.fusion_default
            if want is not None:
                idx = {"+": 0, "-": 1, "fail01": 2, "fail10": 3}[want] if isinstance(want, str) else int(want)
                if probs[idx] >= self.tol:
                    return idx
                if forced:
                    raise ForcedOutcomeError(f"forced fusion outcome {want!r} has probability {probs[idx]:.3e}")
        if label == "measure" and self.measure_queue:
            idx = int(self.measure_queue.popleft())
            if probs[idx] < self.tol:
                raise ForcedOutcomeError(f"forced measurement outcome {idx} has probability {probs[idx]:.3e}")
            return idx
        return self._argmax(probs)

    @staticmethod
    def _argmax(probs: Sequence[float]) -> int:
        # most probable branch, ties broken toward the lowest index
        best = max(probs)
        for i, p in enumerate(probs):
            if p >= best - 1e-9:
                return i
        return int(np.argmax(probs))

    def hidden_bit(self, p0: float) -> int:
        if self.hidden_queue:
            bit = int(self.hidden_queue.popleft())
            prob = p0 if bit == 0 else 1.0 - p0
            if prob < self.tol:
                raise ForcedOutcomeError(f"forced hidden value {bit} has probability {prob:.3e}")
            return bit
        return 0 if p0 >= 0.5 - 1e-9 else 1


# ---------------------------------------------------------------------------
# The engine
# ---------------------------------------------------------------------------


class PhotonRegister:
    """Ordered photon registry plus the amplitude vector over present photons.

    Basis strings are big-endian in photon creation order: the earliest
    present photon is the most significant bit of the state index.
    """

    NORM_TOL = 1e-12

    def __init__(self, outcomes=None, max_photons: int = 24):
        self.outcomes = outcomes if outcomes is not None else SampledOutcomes(0)
        self.max_photons = max_photons
        self.slots: dict[int, PhotonSlot] = {}
        self.order: list[int] = []  # present photons, creation order
        self.amps = np.ones(1, dtype=complex)
        self._next_id = 0
        self._hidden_results: list[tuple[int, int]] = []
        self.measurements: list[MeasurementRecord] = []

    # -- construction -------------------------------------------------------

    def add_photons(self, vector: np.ndarray, count: int, block=None, age: str = "new") -> list[int]:
        """Append ``count`` photons in joint state ``vector`` (length 2^count)."""
        if len(self.order) + count > self.max_photons:
            raise CapacityError(
                f"register would hold {len(self.order) + count} present photons "
                f"(bound {self.max_photons})"
            )
        vector = np.asarray(vector, dtype=complex).reshape(-1)
        if vector.size != 2**count:
            raise ValueError("vector length does not match photon count")
        if abs(np.vdot(vector, vector).real - 1.0) > 1e-9:
            raise ValueError("photon state vector must be normalized")
        ids = []
        for _ in range(count):
            pid = self._next_id
            self._next_id += 1
            self.slots[pid] = PhotonSlot(pid, block=block, age=age)
            self.order.append(pid)
            ids.append(pid)
        self.amps = np.multiply.outer(self.amps, vector).reshape(-1)
        return ids

    def n_present(self) -> int:
        return len(self.order)

    def status(self, photon: int) -> PhotonStatus:
        return self.slots[photon].status

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def reveal_hidden_results(self) -> list[tuple[int, int]]:
        """Hidden loss outcomes, for the test harness only."""
        return list(self._hidden_results)

    # -- internals -----------------------------------------------------------

    def _axis(self, photon: int) -> int:
        try:
            return self.order.index(photon)
        except ValueError:
            slot = self.slots.get(photon)
            if slot is None:
                raise KeyError(f"unknown photon id {photon}") from None
            raise PhotonStateError(photon, slot.status, "operation")

    def _require_present(self, photon: int, op: str):
        slot = self.slots.get(photon)
        if slot is None:
            raise KeyError(f"unknown photon id {photon}")
        if slot.status is not PhotonStatus.PRESENT:
            raise PhotonStateError(photon, slot.status, op)

    def _renormalize(self):
        nrm = np.linalg.norm(self.amps)
        if nrm < 1e-14:
            raise EngineError("state norm vanished (projection onto zero-probability branch)")
        self.amps = self.amps / nrm

    def _split(self, axis: int):
        k = len(self.order)
        a = 2**axis
        b = 2 ** (k - axis - 1)
        return self.amps.reshape(a, 2, b)

    def _remove_axis(self, photon: int, collapsed: np.ndarray, status: PhotonStatus, weight: float):
        self.slots[photon].status = status
        self.order.remove(photon)
        if weight < 1e-28:
            raise EngineError("projection onto a zero-probability branch")
        self.amps = collapsed.reshape(-1) / math.sqrt(weight)

    # -- operations ----------------------------------------------------------

    def apply_1q(self, photon: int, unitary: np.ndarray):
        """Apply a single-qubit unitary to one present photon."""
        self._require_present(photon, "apply_1q")
        u = np.asarray(unitary, dtype=complex)
        if not np.allclose(u @ u.conj().T, PAULI_I, atol=1e-12):
            raise ValueError("matrix is not unitary to 1e-12")
        t = self._split(self._axis(photon))
        self.amps = np.einsum("ij,ajb->aib", u, t).reshape(-1)

    def measure(self, photon: int, basis: Basis = Basis.COMPUTATIONAL, forced: Optional[int] = None) -> int:
        """Projective measurement; the photon leaves the register.

        Diagonal-basis results use the convention |+> -> 0, |-> -> 1.
        """
        self._require_present(photon, "measure")
        if basis is Basis.DIAGONAL:
            self.apply_1q(photon, HADAMARD)
        t = self._split(self._axis(photon))
        b0, b1 = t[:, 0, :], t[:, 1, :]
        p0 = float(np.vdot(b0, b0).real)
        p1 = float(np.vdot(b1, b1).real)
        total = p0 + p1
        p0, p1 = p0 / total, p1 / total
        if forced is not None:
            if (p0, p1)[forced] < 1e-9:
                raise ForcedOutcomeError(f"forced outcome {forced} has probability {(p0, p1)[forced]:.3e}")
            bit = forced
        else:
            bit = self.outcomes.pick([p0, p1], label="measure")
        self._remove_axis(photon, (b0, b1)[bit], PhotonStatus.MEASURED, (p0, p1)[bit] * total)
        self.measurements.append(MeasurementRecord(photon, basis, bit, hidden=False))
        return bit

    def lose_photon(self, photon: int) -> None:
        """Loss channel: hidden computational measurement by the environment."""
        self._require_present(photon, "lose_photon")
        t = self._split(self._axis(photon))
        b0, b1 = t[:, 0, :], t[:, 1, :]
        p0 = float(np.vdot(b0, b0).real)
        p1 = float(np.vdot(b1, b1).real)
        total = p0 + p1
        p0 /= total
        bit = self.outcomes.hidden_bit(p0)
        if (p0, 1.0 - p0)[bit] < 1e-14:
            bit = 1 - bit  # environment cannot pick a zero-probability branch
        self._remove_axis(photon, (b0, b1)[bit], PhotonStatus.LOST, (p0, 1.0 - p0)[bit] * total)
        self._hidden_results.append((photon, bit))
        self.measurements.append(MeasurementRecord(photon, Basis.COMPUTATIONAL, None, hidden=True))

    def discard_photon(self, photon: int) -> None:
        """Trace out a photon that is product with the rest (no detection involved).

        Mechanically identical to the loss channel; used by protocols to drop
        collapsed resource remnants without charging a detector.
        """
        self.lose_photon(photon)
        self.slots[photon].status = PhotonStatus.MEASURED

    def fusion_type_II(self, photon_a: int, photon_b: int, forced=None) -> FusionOutcome:
        """Complete projective measurement onto {(|00>+|11>)/sqrt2, (|00>-|11>)/sqrt2, |01>, |10>}.

        Both photons leave the register.  If one or both photons are already
        absent the attempt only heralds a loss: any surviving photon is
        consumed by a hidden computational measurement.
        """
        if photon_a == photon_b:
            raise ValueError("fusion requires two distinct photons")
        present = [p for p in (photon_a, photon_b) if self.slots[p].status is PhotonStatus.PRESENT]
        if len(present) < 2:
            for p in present:
                self.lose_photon(p)
                self.slots[p].status = PhotonStatus.MEASURED
            return FusionOutcome(FusionKind.LOSS_DETECTED, photons_seen=len(present))

        ia, ib = self._axis(photon_a), self._axis(photon_b)
        swap = ia > ib
        if swap:
            ia, ib = ib, ia
        k = len(self.order)
        a = 2**ia
        m = 2 ** (ib - ia - 1)
        c = 2 ** (k - ib - 1)
        t = self.amps.reshape(a, 2, m, 2, c)
        s00, s01, s10, s11 = t[:, 0, :, 0, :], t[:, 0, :, 1, :], t[:, 1, :, 0, :], t[:, 1, :, 1, :]
        plus = (s00 + s11) * SQRT1_2
        minus = (s00 - s11) * SQRT1_2
        branches = (plus, minus, s01, s10)
        weights = [float(np.vdot(v, v).real) for v in branches]
        total = sum(weights)
        probs = [w / total for w in weights]
        if forced is not None:
            idx = {"+": 0, "-": 1, "fail01": 2, "fail10": 3}[forced] if isinstance(forced, str) else int(forced)
            if probs[idx] < 1e-9:
                raise ForcedOutcomeError(f"forced fusion outcome {forced!r} has probability {probs[idx]:.3e}")
        else:
            idx = self.outcomes.pick(probs, label="fusion")
        if weights[idx] < 1e-28:
            raise EngineError("projection onto a zero-probability branch")

        for p in (photon_a, photon_b):
            self.slots[p].status = PhotonStatus.MEASURED
            self.order.remove(p)
        self.amps = branches[idx].reshape(-1) / math.sqrt(weights[idx])

        if idx == 0:
            return FusionOutcome(FusionKind.SUCCESS, sign=+1)
        if idx == 1:
            return FusionOutcome(FusionKind.SUCCESS, sign=-1)
        bits = (0, 1) if idx == 2 else (1, 0)
        if swap:
            bits = (bits[1], bits[0])
        # bits are reported in (photon_a, photon_b) argument order
        self.measurements.append(MeasurementRecord(photon_a, Basis.COMPUTATIONAL, bits[0]))
        self.measurements.append(MeasurementRecord(photon_b, Basis.COMPUTATIONAL, bits[1]))
        return FusionOutcome(FusionKind.FAILURE, bits=bits)

    def fusion_type_I_join(self, block_a: Sequence[int], block_b: Sequence[int], forced=None):
        """Join two even-parity blocks |0>^(a), |0>^(b) into |0>^(a+b-1).

        Succeeds with probability 1/2.  Failure destroys both blocks (all
        photons consumed with hidden results).  The inputs must actually be
        disjoint parity-zero states; this is checked by overlap.
        """
        ids_a, ids_b = list(block_a), list(block_b)
        if set(ids_a) & set(ids_b):
            raise ValueError("type-I join requires disjoint blocks")
        for p in ids_a + ids_b:
            self._require_present(p, "fusion_type_I_join")
        input_vec = np.kron(parity_basis_vector(len(ids_a), 0), parity_basis_vector(len(ids_b), 0))
        fid = self._subsystem_overlap(ids_a + ids_b, input_vec)
        if fid < 1.0 - 1e-9:
            raise ValueError("type-I join inputs are not parity-zero blocks")

        if forced is not None:
            success = bool(forced)
        else:
            success = self.outcomes.pick([0.5, 0.5], label="fusion") == 0
        if success:
            # one photon is consumed; the pair of blocks collapses to |0>^(a+b-1)
            consumed = ids_b[0]
            survivors = [p for p in ids_a + ids_b if p != consumed]
            self._replace_subsystem(
                ids_a + ids_b, input_vec, consumed, survivors, parity_basis_vector(len(survivors), 0)
            )
            return True, survivors
        for p in ids_a + ids_b:
            self.lose_photon(p)
            self.slots[p].status = PhotonStatus.MEASURED
        return False, []

    # -- helpers for the type-I effective map --------------------------------

    def _subsystem_overlap(self, ids: Sequence[int], vec: np.ndarray) -> float:
        """Probability weight of |vec> on the given photons (product check)."""
        axes = [self._axis(p) for p in ids]
        k = len(self.order)
        t = self.amps.reshape((2,) * k)
        t2 = np.tensordot(vec.reshape((2,) * len(ids)).conj(), t, axes=(list(range(len(ids))), axes))
        return float(np.sum(np.abs(t2) ** 2))

    def _replace_subsystem(self, ids, old_vec, consumed, survivors, new_vec):
        """Project the ids subsystem onto |old_vec> and re-emit |new_vec> on survivors."""
        k = len(self.order)
        t = self.amps.reshape((2,) * k)
        axes = [self._axis(p) for p in ids]
        rest_axes = [i for i in range(k) if i not in axes]
        rest_ids = [self.order[i] for i in rest_axes]
        t_perm = np.transpose(t, axes=rest_axes + axes)
        flat = t_perm.reshape(2 ** len(rest_axes), -1)
        coeff = flat @ old_vec.conj()
        joined = np.outer(coeff, new_vec)  # rest x survivors
        self.slots[consumed].status = PhotonStatus.MEASURED
        self.order.remove(consumed)
        t3 = joined.reshape((2,) * len(rest_ids) + (2,) * len(survivors))
        current = rest_ids + list(survivors)
        perm = [current.index(p) for p in self.order]
        self.amps = np.transpose(t3, axes=perm).reshape(-1)
        self._renormalize()


@lru_cache(maxsize=256)
def _parity_basis_cached(n: int, parity: int) -> np.ndarray:
    idx = np.arange(2**n)
    bits = idx[:, None] >> np.arange(n - 1, -1, -1) & 1
    par = bits.sum(axis=1) % 2
    vec = np.where(par == parity, 1.0, 0.0).astype(complex)
    vec /= np.linalg.norm(vec)
    vec.flags.writeable = False
    return vec


def parity_basis_vector(n: int, parity: int) -> np.ndarray:
    """|0>^(n) (parity=0) or |1>^(n) (parity=1): uniform over fixed-parity strings."""
    if n < 1:
        raise ValueError("parity state needs n >= 1")
    return _parity_basis_cached(n, parity)
