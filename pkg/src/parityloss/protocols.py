"""Executable protocols on the state engine.

Implements re-encoding, the active-memory (identity) cycle, the logical
Z_theta and X_90 rotations, and the logical CNOT, all with loss detection
and recovery.  Every run produces an ``OutcomeRecord`` event trace.

Conventions used throughout:

* Loss detection draws happen at the moment a photon would hit a detector
  (fusion or measurement), never at creation.
* Corrections are applied eagerly and are always Pauli-level: Z on every
  photon of one block (logical/parity Z), X on one photon of a block
  (parity-level bit flip), X on one photon of every block (logical X).
* Disentangling a block means measuring each of its present photons in the
  diagonal basis; the first detected outcome fixes the phase correction
  (later outcomes are redundant, hidden losses in between do not matter).
* A block is never re-encoded from its final photon: a fusion failure
  there would measure that photon in the computational basis and collapse
  the logical qubit.  When only one photon is left, the block is
  disentangled and another block takes over.  The rotation gates, which
  have no other way forward when the last block runs out, gamble on a
  final fusion instead of giving up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .codes import (
    CodeLayout,
    LogicalQubitSpec,
    ResourceHandle,
    new_R1,
    new_R2,
    new_R3,
    new_logical,
    new_memory_resource,
)
from .qstate import (
    Basis,
    FusionKind,
    PAULI_X,
    PAULI_Z,
    PhotonRegister,
    PhotonStatus,
    x_rotation,
    z_phase,
)

X90_GATE = x_rotation(90.0)


class AlwaysDetect:
    """Detector model for eta = 1: every photon is seen."""

    def detect(self, reg: PhotonRegister, photon: int) -> bool:
        return True


ALWAYS = AlwaysDetect()


class Terminal(Enum):
    SUCCESS = "success"
    RECOVERED_THEN_SUCCESS = "recovered_then_success"
    NO_PROGRESS = "no_progress"
    LOGICAL_FAILURE = "logical_failure"


@dataclass
class CorrectionPlan:
    """Pending deterministic Pauli corrections (applied eagerly, kept for the trace)."""

    logical_x: bool = False
    logical_z: bool = False
    block_phase_flips: int = 0


@dataclass
class OutcomeRecord:
    protocol: str
    events: list = field(default_factory=list)
    terminal: Terminal | None = None
    reason: str = ""
    fusion_failures: int = 0  # k of the encoder description
    fusion_attempts: int = 0
    recoveries: int = 0
    gate_attempts: int = 0

    def log(self, event: str, **info):
        self.events.append({"event": event, **info})

    def finish(self, terminal: Terminal, reason: str = ""):
        self.terminal = terminal
        self.reason = reason
        self.log("terminal", status=terminal.value, reason=reason)
        return self

    def finish_success(self):
        t = Terminal.RECOVERED_THEN_SUCCESS if self.recoveries else Terminal.SUCCESS
        return self.finish(t)

    @property
    def succeeded(self) -> bool:
        return self.terminal in (Terminal.SUCCESS, Terminal.RECOVERED_THEN_SUCCESS)


@dataclass
class LogicalCarrier:
    """Which photons currently hold a logical qubit, block by block."""

    blocks: list[list[int]]
    layout: CodeLayout

    @property
    def q_intact(self) -> int:
        return len(self.blocks)

    def photons(self) -> list[int]:
        return [p for blk in self.blocks for p in blk]


def prepare_logical(reg: PhotonRegister, spec: LogicalQubitSpec, layout: CodeLayout) -> LogicalCarrier:
    return LogicalCarrier(new_logical(reg, spec, layout), layout)


# ---------------------------------------------------------------------------
# Deterministic Pauli-level operations
# ---------------------------------------------------------------------------


def _require_intact(reg, block, op):
    for p in block:
        if reg.status(p) is not PhotonStatus.PRESENT:
            raise ValueError(f"{op}: block photon {p} is {reg.status(p).value}")


def _z_all(reg: PhotonRegister, block: list[int]):
    for p in block:
        reg.apply_1q(p, PAULI_Z)


def pauli_z_logical(reg: PhotonRegister, carrier: LogicalCarrier):
    """Logical Z: physical Z on every photon of one parity block."""
    block = carrier.blocks[0]
    _require_intact(reg, block, "pauli_z_logical")
    _z_all(reg, block)


def pauli_x_logical(reg: PhotonRegister, carrier: LogicalCarrier):
    """Logical X: physical X on one photon of every parity block."""
    for block in carrier.blocks:
        _require_intact(reg, block, "pauli_x_logical")
    for block in carrier.blocks:
        reg.apply_1q(block[0], PAULI_X)


def x_theta_parity(reg: PhotonRegister, block: list[int], theta_deg: float):
    """Parity-level X rotation: X_theta applied to any one photon of the block."""
    _require_intact(reg, block, "x_theta_parity")
    reg.apply_1q(block[0], x_rotation(theta_deg))


# ---------------------------------------------------------------------------
# Shared recovery machinery
# ---------------------------------------------------------------------------


@dataclass
class SeverResult:
    detected: bool
    flip: bool  # first detected diagonal outcome was |->


def _sever(reg, photons, det, rec, what="block") -> SeverResult:
    """Diagonal-basis disentangling of the given photons (loss-tolerant)."""
    first = None
    for p in list(photons):
        if reg.status(p) is not PhotonStatus.PRESENT:
            continue
        if det.detect(reg, p):
            bit = reg.measure(p, Basis.DIAGONAL)
            if first is None:
                first = bit
        else:
            reg.lose_photon(p)
    rec.log("disentangle", what=what, detected=first is not None, flip=bool(first))
    return SeverResult(first is not None, first == 1)


def _discard(reg, photons, rec=None):
    """Drop photons that have factored into a product state (no detector involved)."""
    for p in list(photons):
        if reg.status(p) is PhotonStatus.PRESENT:
            reg.discard_photon(p)


def _alive(reg, handle: ResourceHandle) -> list[int]:
    return [p for p in handle.all_ids if reg.status(p) is PhotonStatus.PRESENT]


def _fuse(reg, det, rec, old_photon, new_photon):
    """Detection draws for both photons, then the type-II fusion."""
    ok_a = det.detect(reg, old_photon)
    ok_b = det.detect(reg, new_photon)
    if not ok_a:
        reg.lose_photon(old_photon)
    if not ok_b:
        reg.lose_photon(new_photon)
    out = reg.fusion_type_II(old_photon, new_photon)
    rec.fusion_attempts += 1
    rec.log(
        "fusion",
        kind=out.kind.value,
        sign=out.sign,
        bits=list(out.bits),
        photons=[old_photon, new_photon],
    )
    return out


def disentangle_block(reg: PhotonRegister, carrier: LogicalCarrier, index: int = 0, det=ALWAYS) -> OutcomeRecord:
    """Remove one parity block from the logical state via diagonal measurements.

    The phase correction implied by the measurement record is applied to the
    remaining blocks.  Forbidden when the carrier has a single block.
    """
    rec = OutcomeRecord("disentangle_block")
    if carrier.q_intact <= 1:
        raise ValueError("cannot disentangle the only remaining parity block")
    block = carrier.blocks.pop(index)
    sev = _sever(reg, block, det, rec)
    if not sev.detected:
        return rec.finish(Terminal.LOGICAL_FAILURE, "no photon of the block was detected")
    if sev.flip:
        _z_all(reg, carrier.blocks[0])
        rec.log("correction", kind="logical_z")
    return rec.finish(Terminal.SUCCESS)


# ---------------------------------------------------------------------------
# Parity-level re-encoding (length extension)
# ---------------------------------------------------------------------------


def reencode_parity(reg: PhotonRegister, block: list[int], resource: ResourceHandle, det=ALWAYS, rec=None):
    """Extend a parity qubit by fusing one of its photons onto a parity resource.

    Success turns |psi>^(m) plus an (n+2)-photon resource into |psi>^(m+n)
    (phase corrected).  Failure shortens the block by one and leaves the
    resource one photon shorter but reusable.  A detected loss is reported
    for the caller to recover from.
    """
    rec = rec if rec is not None else OutcomeRecord("reencode_parity")
    res_rest = [p for p in resource.all_ids if p != resource.port]
    out = _fuse(reg, det, rec, block[0], resource.port)
    if out.kind is FusionKind.SUCCESS:
        if out.sign == -1:
            _z_all(reg, res_rest)
            rec.log("correction", kind="phase_on_new_segment")
        merged = [p for p in block[1:]] + res_rest
        rec.finish(Terminal.SUCCESS)
        return rec, merged, None
    if out.kind is FusionKind.FAILURE:
        rec.fusion_failures += 1
        b_block, b_port = out.bits
        shrunk = list(block[1:])
        if b_block == 1 and shrunk:
            reg.apply_1q(shrunk[0], PAULI_X)
            rec.log("correction", kind="bit_flip_block")
        if b_port == 1 and res_rest:
            reg.apply_1q(res_rest[0], PAULI_X)
            rec.log("correction", kind="bit_flip_resource")
        rec.finish(Terminal.NO_PROGRESS, "fusion failure; block shortened, resource reusable")
        reusable = ResourceHandle(port=res_rest[0], blocks=[res_rest[1:]], all_ids=res_rest)
        return rec, shrunk, reusable
    rec.finish(Terminal.LOGICAL_FAILURE, "loss detected during fusion")
    return rec, [p for p in block[1:]], None


# ---------------------------------------------------------------------------
# Active memory (identity) cycle
# ---------------------------------------------------------------------------


class _BlockResult(Enum):
    SUCCESS = "success"
    RETRY = "retry"
    FAILED = "failed"
    EXHAUSTED = "exhausted"


def _reencode_block(reg, block, rest_blocks, res_factory, det, rec):
    """Try to re-encode the logical qubit from one parity block.

    Returns (_BlockResult, new_blocks).  ``block`` is mutated as photons are
    consumed.  ``rest_blocks`` are the untouched blocks that still hold the
    qubit if this block is abandoned.
    """
    res = res_factory()
    while True:
        if len(block) == 1:
            if not rest_blocks:
                _discard(reg, _alive(reg, res))
                return _BlockResult.EXHAUSTED, None
            p = block.pop()
            _discard(reg, _alive(reg, res))
            if det.detect(reg, p):
                bit = reg.measure(p, Basis.DIAGONAL)
                rec.log("disentangle", what="exhausted_block", detected=True, flip=bool(bit))
                if bit == 1:
                    _z_all(reg, rest_blocks[0])
                rec.recoveries += 1
                return _BlockResult.RETRY, None
            reg.lose_photon(p)
            rec.log("loss", where="final_block_photon")
            return _BlockResult.FAILED, None

        old = block[0]
        out = _fuse(reg, det, rec, old, res.port)

        if out.kind is FusionKind.LOSS_DETECTED:
            block.remove(old)
            _discard(reg, _alive(reg, res))
            if not rest_blocks:
                return _BlockResult.FAILED, None
            sev = _sever(reg, block, det, rec, what="damaged_block")
            block.clear()
            if not sev.detected:
                return _BlockResult.FAILED, None
            if sev.flip:
                _z_all(reg, rest_blocks[0])
            rec.recoveries += 1
            return _BlockResult.RETRY, None

        if out.kind is FusionKind.FAILURE:
            rec.fusion_failures += 1
            block.remove(old)
            if out.bits[0] == 1:
                reg.apply_1q(block[0], PAULI_X)
            _discard(reg, _alive(reg, res))
            res = res_factory()
            continue

        # fusion success
        if out.sign == -1:
            _z_all(reg, res.blocks[0])
        block.remove(old)
        remainder = list(block)
        block.clear()
        parity = 0
        for j, p in enumerate(remainder):
            if det.detect(reg, p):
                parity ^= reg.measure(p, Basis.COMPUTATIONAL)
                continue
            reg.lose_photon(p)
            if not rest_blocks:
                return _BlockResult.FAILED, None
            sev = _sever(reg, remainder[j + 1 :], det, rec, what="old_remainder")
            if sev.detected:
                # the fresh redundancy state factored off; drop it unmeasured
                if sev.flip:
                    _z_all(reg, rest_blocks[0])
                _discard(reg, _alive(reg, res))
                rec.recoveries += 1
                return _BlockResult.RETRY, None
            flip = False
            for rb in res.blocks:
                s2 = _sever(reg, rb, det, rec, what="new_redundancy_block")
                if not s2.detected:
                    return _BlockResult.FAILED, None
                flip ^= s2.flip
            if flip:
                _z_all(reg, rest_blocks[0])
            rec.recoveries += 1
            return _BlockResult.RETRY, None

        if parity == 1:
            for rb in res.blocks:
                reg.apply_1q(rb[0], PAULI_X)
            rec.log("correction", kind="logical_x_on_new")
        return _BlockResult.SUCCESS, [list(rb) for rb in res.blocks]


def active_memory_cycle(reg: PhotonRegister, carrier: LogicalCarrier, det=ALWAYS, rec=None) -> OutcomeRecord:
    """One loss-detecting identity cycle: re-encode the qubit onto fresh photons."""
    rec = rec if rec is not None else OutcomeRecord("memory")
    n, q = carrier.layout.n, carrier.layout.q
    blocks = [list(b) for b in carrier.blocks]
    idx = 0
    while idx < len(blocks):
        block = blocks[idx]
        rest = blocks[idx + 1 :]
        result, new_blocks = _reencode_block(
            reg, block, rest, lambda: new_memory_resource(reg, n, q), det, rec
        )
        if result is _BlockResult.SUCCESS:
            for rb in rest:
                sev = _sever(reg, rb, det, rec, what="untouched_old_block")
                if not sev.detected:
                    carrier.blocks = new_blocks
                    return rec.finish(Terminal.LOGICAL_FAILURE, "an old block was lost whole")
                if sev.flip:
                    _z_all(reg, new_blocks[0])
            carrier.blocks = new_blocks
            for blk in new_blocks:
                for p in blk:
                    reg.slots[p].age = "old"
            return rec.finish_success()
        if result is _BlockResult.RETRY:
            idx += 1
            continue
        if result is _BlockResult.EXHAUSTED:
            carrier.blocks = [block] if block else []
            return rec.finish(Terminal.NO_PROGRESS, "last block ran out of fusion attempts")
        carrier.blocks = [b for b in blocks[idx:] if b]
        return rec.finish(Terminal.LOGICAL_FAILURE, "unrecoverable loss pattern")
    carrier.blocks = []
    return rec.finish(Terminal.LOGICAL_FAILURE, "all parity blocks consumed")


# ---------------------------------------------------------------------------
# Logical Z_theta
# ---------------------------------------------------------------------------


class _GateStep(Enum):
    APPLIED = "applied"
    APPLIED_CONJUGATE = "applied_conjugate"
    BLOCK_LOST = "block_lost"
    NOTHING = "nothing"
    FAILED = "failed"


def _z_attempt(reg, carrier, theta_deg, det, rec):
    n = carrier.layout.n
    block = carrier.blocks[0]
    rest = carrier.blocks[1:]
    while True:
        gamble = len(block) == 1
        if gamble and rest:
            # never fuse the last photon while safer blocks exist
            p = block.pop()
            if det.detect(reg, p):
                bit = reg.measure(p, Basis.DIAGONAL)
                if bit == 1:
                    _z_all(reg, rest[0])
                carrier.blocks.pop(0)
                rec.recoveries += 1
                return _GateStep.NOTHING
            reg.lose_photon(p)
            return _GateStep.FAILED

        b = block[-1]
        reg.apply_1q(b, z_phase(theta_deg))
        res = new_R1(reg, n)
        out = _fuse(reg, det, rec, b, res.port)

        if out.kind is FusionKind.LOSS_DETECTED:
            block.remove(b)
            _discard(reg, _alive(reg, res))
            if not rest or not block:
                return _GateStep.FAILED
            sev = _sever(reg, block, det, rec, what="damaged_gate_block")
            block.clear()
            if not sev.detected:
                return _GateStep.FAILED
            if sev.flip:
                _z_all(reg, rest[0])
            carrier.blocks.pop(0)
            rec.recoveries += 1
            return _GateStep.BLOCK_LOST

        if out.kind is FusionKind.FAILURE:
            rec.fusion_failures += 1
            block.remove(b)
            if not block:
                return _GateStep.FAILED  # gamble lost: the logical bit was read out
            if out.bits[0] == 1:
                reg.apply_1q(block[0], PAULI_X)
            _discard(reg, _alive(reg, res))
            continue

        # success: the rotated amplitude now rides the resource block
        new_block = list(res.blocks[0])
        if out.sign == -1:
            _z_all(reg, new_block)
        block.remove(b)
        remainder = list(block)
        block.clear()
        parity = 0
        for j, p in enumerate(remainder):
            if det.detect(reg, p):
                parity ^= reg.measure(p, Basis.COMPUTATIONAL)
                continue
            reg.lose_photon(p)
            if not rest:
                return _GateStep.FAILED
            sev = _sever(reg, remainder[j + 1 :], det, rec, what="old_remainder")
            if sev.detected:
                if sev.flip:
                    _z_all(reg, rest[0])
                _discard(reg, new_block)
                carrier.blocks.pop(0)
                rec.recoveries += 1
                return _GateStep.BLOCK_LOST
            if theta_deg % 360.0 == 180.0:
                # +180 and -180 coincide, so the branch parity does not matter
                s2 = _sever(reg, new_block, det, rec, what="new_block")
                if not s2.detected:
                    return _GateStep.FAILED
                carrier.blocks.pop(0)
                rec.recoveries += 1
                return _GateStep.APPLIED if not s2.flip else _GateStep.NOTHING
            return _GateStep.FAILED  # the sign of the rotation is irrecoverably hidden

        carrier.blocks[0] = new_block
        if parity == 1:
            reg.apply_1q(new_block[0], PAULI_X)
            rec.log("correction", kind="bit_flip_new_block")
            return _GateStep.APPLIED_CONJUGATE
        return _GateStep.APPLIED


def z_theta_logical(reg: PhotonRegister, carrier: LogicalCarrier, theta_deg: float, det=ALWAYS, rec=None) -> OutcomeRecord:
    """Logical Z_theta = diag(1, e^{i theta}).

    An odd-parity branch applies Z_{-theta}; the gate is then re-attempted
    with the doubled angle, so theta = 180 never needs a retry and theta = 90
    needs at most one.
    """
    rec = rec if rec is not None else OutcomeRecord("z_theta", events=[{"event": "target", "theta": theta_deg}])
    remaining = theta_deg % 360.0
    while True:
        if remaining == 0.0:
            for blk in carrier.blocks:
                for p in blk:
                    reg.slots[p].age = "old"
            return rec.finish_success()
        if not carrier.blocks:
            return rec.finish(Terminal.LOGICAL_FAILURE, "no parity blocks left")
        rec.gate_attempts += 1
        step = _z_attempt(reg, carrier, remaining, det, rec)
        if step is _GateStep.APPLIED:
            remaining = 0.0
        elif step is _GateStep.APPLIED_CONJUGATE:
            remaining = (2.0 * remaining) % 360.0
        elif step in (_GateStep.BLOCK_LOST, _GateStep.NOTHING):
            continue
        else:
            return rec.finish(Terminal.LOGICAL_FAILURE, "unrecoverable event during Z_theta")


# ---------------------------------------------------------------------------
# Logical X_90
# ---------------------------------------------------------------------------


def _x90_attempt(reg, carrier, det, rec):
    n, q_full = carrier.layout.n, carrier.layout.q
    block = carrier.blocks[0]
    rest = carrier.blocks[1:]
    rotated = False
    while True:
        if len(block) == 1 and rest:
            p = block.pop()
            if det.detect(reg, p):
                bit = reg.measure(p, Basis.DIAGONAL)
                if bit == 1:
                    _z_all(reg, rest[0])
                carrier.blocks.pop(0)
                rec.recoveries += 1
                return _GateStep.NOTHING
            reg.lose_photon(p)
            return _GateStep.FAILED

        if not rotated:
            reg.apply_1q(block[-1], X90_GATE)
            rotated = True
        b = block[-1]
        res = new_R2(reg, n, q_full)
        out = _fuse(reg, det, rec, b, res.port)

        if out.kind is FusionKind.LOSS_DETECTED:
            block.remove(b)
            _discard(reg, _alive(reg, res))
            if not rest or not block:
                return _GateStep.FAILED
            sev = _sever(reg, block, det, rec, what="damaged_gate_block")
            block.clear()
            if not sev.detected:
                return _GateStep.FAILED
            if sev.flip:
                _z_all(reg, rest[0])
            carrier.blocks.pop(0)
            rec.recoveries += 1
            return _GateStep.BLOCK_LOST

        if out.kind is FusionKind.FAILURE:
            rec.fusion_failures += 1
            block.remove(b)
            if not block:
                return _GateStep.FAILED
            if out.bits[0] == 1:
                reg.apply_1q(block[0], PAULI_X)
            _discard(reg, _alive(reg, res))
            continue  # the rotation has moved onto the surviving block photons

        if out.sign == -1:
            _z_all(reg, res.blocks[0])
        block.remove(b)
        remainder = list(block)
        block.clear()
        parity = 0
        for j, p in enumerate(remainder):
            if det.detect(reg, p):
                parity ^= reg.measure(p, Basis.COMPUTATIONAL)
                continue
            reg.lose_photon(p)
            if not rest:
                return _GateStep.FAILED
            sev = _sever(reg, remainder[j + 1 :], det, rec, what="old_remainder")
            if sev.detected:
                if sev.flip:
                    _z_all(reg, rest[0])
                _discard(reg, _alive(reg, res))
                carrier.blocks.pop(0)
                rec.recoveries += 1
                return _GateStep.BLOCK_LOST
            flip = False
            ok = True
            for rb in res.blocks:
                s2 = _sever(reg, rb, det, rec, what="new_redundancy_block")
                if not s2.detected:
                    ok = False
                    break
                flip ^= s2.flip
            if not ok:
                return _GateStep.FAILED
            if flip:
                _z_all(reg, rest[0])
            carrier.blocks.pop(0)
            rec.recoveries += 1
            return _GateStep.BLOCK_LOST  # rotation cancelled; try again

        minus_blocks = 0
        for rb in rest:
            sev = _sever(reg, rb, det, rec, what="other_old_block")
            if not sev.detected:
                return _GateStep.FAILED
            minus_blocks ^= int(sev.flip)
        if parity ^ minus_blocks:
            for rb in res.blocks:
                reg.apply_1q(rb[0], PAULI_X)
            rec.log("correction", kind="logical_x")
        if minus_blocks:
            _z_all(reg, res.blocks[0])
            rec.log("correction", kind="logical_z")
        carrier.blocks[:] = [list(rb) for rb in res.blocks]
        return _GateStep.APPLIED


def x90_logical(reg: PhotonRegister, carrier: LogicalCarrier, det=ALWAYS, rec=None) -> OutcomeRecord:
    """Logical X_90 = (I - iX)/sqrt2, via rotation of one photon plus re-encoding."""
    rec = rec if rec is not None else OutcomeRecord("x90")
    while True:
        if not carrier.blocks:
            return rec.finish(Terminal.LOGICAL_FAILURE, "no parity blocks left")
        rec.gate_attempts += 1
        step = _x90_attempt(reg, carrier, det, rec)
        if step is _GateStep.APPLIED:
            for blk in carrier.blocks:
                for p in blk:
                    reg.slots[p].age = "old"
            return rec.finish_success()
        if step in (_GateStep.BLOCK_LOST, _GateStep.NOTHING):
            continue
        return rec.finish(Terminal.LOGICAL_FAILURE, "unrecoverable event during X_90")


# ---------------------------------------------------------------------------
# Logical CNOT
# ---------------------------------------------------------------------------


class _IterResult(Enum):
    PROGRESS = "progress"
    NO_PROGRESS = "no_progress"
    TARGET_BLOCK_LOST = "target_block_lost"
    TARGET_RETRY = "target_retry"
    FAILED = "failed"


def _cnot_iteration(reg, ctrl, tgt, tblock, det, rec):
    """One parity-level CNOT: re-encode a control block through the CNOT
    resource, then fuse the resource's target port into a target block."""
    n = ctrl.layout.n
    cblock = ctrl.blocks[0]
    crest = ctrl.blocks[1:]
    res = new_R3(reg, n)

    # control phase: re-encode the chosen control block through port C
    while True:
        gamble = len(cblock) == 1
        if gamble and crest:
            p = cblock.pop()
            _discard(reg, _alive(reg, res))
            if det.detect(reg, p):
                bit = reg.measure(p, Basis.DIAGONAL)
                if bit == 1:
                    _z_all(reg, crest[0])
                ctrl.blocks.pop(0)
                rec.recoveries += 1
                return _IterResult.NO_PROGRESS
            reg.lose_photon(p)
            return _IterResult.FAILED

        old = cblock[0]
        out = _fuse(reg, det, rec, old, res.port)

        if out.kind is FusionKind.LOSS_DETECTED:
            cblock.remove(old)
            _discard(reg, _alive(reg, res))
            if not crest or not cblock:
                return _IterResult.FAILED
            sev = _sever(reg, cblock, det, rec, what="damaged_control_block")
            cblock.clear()
            if not sev.detected:
                return _IterResult.FAILED
            if sev.flip:
                _z_all(reg, crest[0])
            ctrl.blocks.pop(0)
            rec.recoveries += 1
            return _IterResult.NO_PROGRESS

        if out.kind is FusionKind.FAILURE:
            rec.fusion_failures += 1
            cblock.remove(old)
            if not cblock:
                return _IterResult.FAILED
            if out.bits[0] == 1:
                reg.apply_1q(cblock[0], PAULI_X)
            _discard(reg, _alive(reg, res))
            res = new_R3(reg, n)
            continue

        # success
        if out.sign == -1:
            _z_all(reg, res.blocks[0])
        cblock.remove(old)
        remainder = list(cblock)
        cblock.clear()
        parity = 0
        clean = True
        for j, p in enumerate(remainder):
            if det.detect(reg, p):
                parity ^= reg.measure(p, Basis.COMPUTATIONAL)
                continue
            reg.lose_photon(p)
            if not crest:
                return _IterResult.FAILED
            sev = _sever(reg, remainder[j + 1 :], det, rec, what="old_remainder")
            if sev.detected:
                if sev.flip:
                    _z_all(reg, crest[0])
                _discard(reg, _alive(reg, res))
            else:
                s_n = _sever(reg, res.blocks[0], det, rec, what="resource_parity")
                if not s_n.detected:
                    return _IterResult.FAILED
                s_m = _sever(reg, res.blocks[1] + [res.port_d], det, rec, what="resource_target_side")
                if not s_m.detected:
                    return _IterResult.FAILED
                if s_n.flip ^ s_m.flip:
                    _z_all(reg, crest[0])
            ctrl.blocks.pop(0)
            rec.recoveries += 1
            return _IterResult.NO_PROGRESS

        if parity == 1:
            reg.apply_1q(res.blocks[0][0], PAULI_X)
            reg.apply_1q(res.blocks[1][0], PAULI_X)
            rec.log("correction", kind="bit_flip_control_and_image")
        ctrl.blocks[0] = list(res.blocks[0])
        break

    # target phase: fuse port D into the chosen target block
    tp = tblock[0]
    out = _fuse(reg, det, rec, res.port_d, tp)

    if out.kind is FusionKind.LOSS_DETECTED:
        s_m = _sever(reg, res.blocks[1], det, rec, what="resource_target_parity")
        if not s_m.detected:
            return _IterResult.FAILED
        if s_m.flip:
            _z_all(reg, ctrl.blocks[0])
        tblock.remove(tp)
        trest = [b for b in tgt.blocks if b is not tblock]
        if not trest:
            return _IterResult.FAILED
        sev = _sever(reg, tblock, det, rec, what="damaged_target_block")
        if not sev.detected:
            return _IterResult.FAILED
        if sev.flip:
            _z_all(reg, trest[0])
        rec.recoveries += 1
        return _IterResult.TARGET_BLOCK_LOST

    if out.kind is FusionKind.FAILURE:
        rec.fusion_failures += 1
        b_d, b_t = out.bits
        tblock.remove(tp)
        if b_t == 1 and tblock:
            reg.apply_1q(tblock[0], PAULI_X)
        s_m = _sever(reg, res.blocks[1], det, rec, what="resource_target_parity")
        if not s_m.detected:
            return _IterResult.FAILED
        if s_m.flip:
            _z_all(reg, ctrl.blocks[0])
        rec.recoveries += 1
        return _IterResult.TARGET_RETRY

    if out.sign == -1:
        _z_all(reg, res.blocks[1])
        _z_all(reg, ctrl.blocks[0])
        rec.log("correction", kind="phase_on_target_and_control")
    tblock.remove(tp)
    merged = list(res.blocks[1]) + list(tblock)
    tblock[:] = merged
    return _IterResult.PROGRESS


def cnot_logical(reg: PhotonRegister, control: LogicalCarrier, target: LogicalCarrier, det=ALWAYS, rec=None) -> OutcomeRecord:
    """Logical CNOT between two redundancy qubits of the same layout.

    One parity-level CNOT is run per target block, each consuming one CNOT
    resource and re-encoding one control block.  After a no-progress
    iteration the control qubit is re-encoded with a full memory cycle
    before the retry.
    """
    rec = rec if rec is not None else OutcomeRecord("cnot")
    if control.layout.n != target.layout.n or control.layout.n < 2:
        raise ValueError("cnot requires matching layouts with n >= 2")
    pending = list(target.blocks)
    while pending:
        tblock = pending[0]
        if len(tblock) == 1:
            others = [b for b in target.blocks if b is not tblock]
            if not others:
                return rec.finish(Terminal.LOGICAL_FAILURE, "target reduced to a bare photon")
            sev = _sever(reg, tblock, det, rec, what="short_target_block")
            if not sev.detected:
                return rec.finish(Terminal.LOGICAL_FAILURE, "short target block lost")
            if sev.flip:
                _z_all(reg, others[0])
            target.blocks.remove(tblock)
            pending.pop(0)
            rec.recoveries += 1
            continue
        if not control.blocks:
            return rec.finish(Terminal.LOGICAL_FAILURE, "control qubit lost")
        rec.gate_attempts += 1
        result = _cnot_iteration(reg, control, target, tblock, det, rec)
        if result is _IterResult.PROGRESS:
            pending.pop(0)
            control.blocks.append(control.blocks.pop(0))  # rotate so each block gets refreshed
            continue
        if result is _IterResult.NO_PROGRESS:
            sub = OutcomeRecord("memory")
            active_memory_cycle(reg, control, det, sub)
            rec.log("reencode_control", outcome=sub.terminal.value)
            rec.recoveries += 1
            if not sub.succeeded:
                return rec.finish(Terminal.LOGICAL_FAILURE, "control re-encode failed after no-progress")
            continue
        if result is _IterResult.TARGET_BLOCK_LOST:
            target.blocks.remove(tblock)
            pending.pop(0)
            continue
        if result is _IterResult.TARGET_RETRY:
            continue
        return rec.finish(Terminal.LOGICAL_FAILURE, "unrecoverable event during CNOT")
    for carrier in (control, target):
        for blk in carrier.blocks:
            for p in blk:
                reg.slots[p].age = "old"
    return rec.finish_success()
