"""Efficiency parameterization, loss injection, Monte Carlo, and exact event trees.

Detection model: an old photon (carried over from the previous encoding
cycle) is seen by a detector with probability eta1 = eta_s * eta_m * eta_d;
a freshly supplied resource photon with probability eta2 = eta_s * eta_d.
Draws happen at the moment a photon would be detected.  A fusion on two
detected photons succeeds or fails with probability 1/2 each (the engine's
Born rule supplies the coin), so a fusion attempt succeeds or fails with
probability eta1*eta2/2 and heralds a loss with probability 1 - eta1*eta2.

Two independent evaluations of the stochastic model live here:

* ``enumerate_event_tree`` walks every event sequence of the protocols'
  recovery policy with exact branch probabilities (memory), or sums the
  per-iteration event classes of the CNOT model, including the published
  form's small-n idiosyncrasies, composed through the absorbing chain
  (K / (1 - M))^q.
* ``run_monte_carlo`` runs the actual protocols on the state engine with
  per-photon detection draws and classifies each trial.
"""

from __future__ import annotations

import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import protocols
from .codes import CodeLayout, LogicalQubitSpec, PLUS, ZERO, logical_amplitudes
from .qstate import PhotonRegister, SampledOutcomes


@dataclass(frozen=True)
class EfficiencyParams:
    """Source, memory and detector efficiencies with the derived products."""

    eta_s: float = 1.0
    eta_m: float = 1.0
    eta_d: float = 1.0

    def __post_init__(self):
        for name in ("eta_s", "eta_m", "eta_d"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} = {v} outside [0, 1]")

    @property
    def eta1(self) -> float:
        return self.eta_s * self.eta_m * self.eta_d

    @property
    def eta2(self) -> float:
        return self.eta_s * self.eta_d

    @staticmethod
    def uniform(eta: float) -> "EfficiencyParams":
        return EfficiencyParams(eta, eta, eta)


class EfficiencyDetector:
    """Per-photon detection draws: eta1 for old photons, eta2 for new ones."""

    def __init__(self, eff: EfficiencyParams, source):
        self.eff = eff
        self.source = source

    def detect(self, reg, photon) -> bool:
        eta = self.eff.eta1 if reg.slots[photon].age == "old" else self.eff.eta2
        if eta >= 1.0:
            return True
        return self.source.bernoulli(eta, label="detect")


class CountingDetector:
    """Perfect detection except for one injected loss at a chosen draw index."""

    def __init__(self, inject_at: int | None = None):
        self.count = 0
        self.inject_at = inject_at

    def detect(self, reg, photon) -> bool:
        self.count += 1
        return self.count != self.inject_at


# ---------------------------------------------------------------------------
# Exact event-tree enumeration
# ---------------------------------------------------------------------------

MAX_TREE_N = 6
MAX_TREE_Q = 4


@dataclass
class EventTreeNode:
    label: str
    branches: list = field(default_factory=list)  # (name, probability, node or class string)

    def add(self, name: str, prob: float, child):
        self.branches.append((name, prob, child))
        return self

    def check(self, tol: float = 1e-12):
        total = sum(p for _, p, _ in self.branches)
        if abs(total - 1.0) > tol:
            raise AssertionError(f"{self.label}: branch probabilities sum to {total}")
        for _, _, child in self.branches:
            if isinstance(child, EventTreeNode):
                child.check(tol)


@dataclass
class EnumerationResult:
    protocol: str
    layout: CodeLayout
    success_probability: float
    classes: dict
    root: EventTreeNode | None = None


def _memory_tree(n: int, q: int, eff: EfficiencyParams) -> EventTreeNode:
    """Event tree of one active-memory cycle under the recovery policy."""
    e1, e2 = eff.eta1, eff.eta2
    x = e1 * e2 / 2.0

    def sever_chain(count, eta, found, exhausted):
        node = exhausted
        for i in range(count):
            node = EventTreeNode(f"sever[{count - i} left]").add("detected", eta, found).add(
                "lost", 1.0 - eta, node
            )
        return node if count else exhausted

    def resource_fallback(cont_qf):
        # every block of the fresh redundancy state needs one detection
        node = cont_qf
        for _ in range(q):
            node = sever_chain(n, e2, node, "failure")
        return node

    def block(m, rest, cont_qf, cont_qs):
        """rest: number of untouched old blocks behind this one."""
        last = rest == 0
        if m == 1:
            if last:
                return EventTreeNode("exhausted").add("stop", 1.0, "no_progress")
            return EventTreeNode("final_photon").add("detected", e1, cont_qf).add(
                "lost", 1.0 - e1, "failure"
            )

        def measure_off_loss(s):
            if last:
                return "failure"
            return sever_chain(s, e1, cont_qf, resource_fallback(cont_qf))

        mo = cont_qs
        r = m - 1
        for j in range(r - 1, -1, -1):
            mo = EventTreeNode(f"measure_off[{r - j} left]").add("detected", e1, mo).add(
                "lost", 1.0 - e1, measure_off_loss(r - j - 1)
            )

        loss_rec = "failure" if last else sever_chain(m - 1, e1, cont_qf, "failure")
        return (
            EventTreeNode(f"fusion[m={m}]")
            .add("success", x, mo)
            .add("failure", x, block(m - 1, rest, cont_qf, cont_qs))
            .add("loss", 1.0 - e1 * e2, loss_rec)
        )

    def rest_severs(count):
        node = "success"
        for _ in range(count):
            node = sever_chain(n, e1, node, "failure")
        return node

    # build blocks from the last to the first
    node = None
    for j in range(q - 1, -1, -1):
        rest = q - 1 - j
        cont_qf = node if node is not None else "no_progress"
        node = block(n, rest, cont_qf, rest_severs(rest))
    return node


def _accumulate(node, p, classes):
    if isinstance(node, str):
        classes[node] = classes.get(node, 0.0) + p
        return
    for _, prob, child in node.branches:
        _accumulate(child, p * prob, classes)


def _cnot_iteration_masses(n: int, eff: EfficiencyParams, p_e: float):
    """Per-iteration class masses of the CNOT success model, as published.

    Event sums are accumulated term by term; the target-side parity length
    is floor(n/2), exact for even n.
    """
    e1, e2 = eff.eta1, eff.eta2
    x = e1 * e2 / 2.0
    mh = n // 2
    m1 = x ** (n - 1) * e1
    m2 = 0.0
    for i in range(0, n - 1):
        m2 += x**i * (1.0 - e1 * e2) * (1.0 - (1.0 - e1) ** (n - i - 1))
    m3 = 0.0
    for i in range(1, n - 1):
        for j in range(0, n - i - 1):
            m3 += x**i * e1**j * (1.0 - e1) * (1.0 - (1.0 - e1) ** (n - i - j - 1))
    m4 = 0.0
    sever_new = (1.0 - (1.0 - e2) ** n) * (1.0 - (1.0 - e2) ** (mh + 1))
    for i in range(1, n):
        for j in range(0, n - i):
            m4 += x**i * e1**j * (1.0 - e1) ** (n - i - j) * sever_new
    m5 = 0.0
    for i in range(1, n):
        m5 += x**i * e1 ** (n - i) * (1.0 - e1) * x * (1.0 - (1.0 - e1) ** (mh + 1))
    k = 0.0
    bracket = x + (1.0 - e1 * e2) * (1.0 - (1.0 - e1) ** (n - 1)) * (1.0 - (1.0 - e2) ** mh)
    for i in range(0, n):
        k += x**i * e1 ** (n - i) * bracket
    m = p_e * (m1 + m2 + m3 + m4) + m5
    return {"m1": m1, "m2": m2, "m3": m3, "m4": m4, "m5": m5, "m": m, "k": k}


def enumerate_event_tree(protocol: str, layout: CodeLayout, eff: EfficiencyParams) -> EnumerationResult:
    """Exact success probability of the stochastic model behind the closed forms."""
    n, q = layout.n, layout.q
    if n > MAX_TREE_N or q > MAX_TREE_Q:
        raise ValueError(f"enumeration bounded to n <= {MAX_TREE_N}, q <= {MAX_TREE_Q}")
    if protocol == "memory":
        if n < 2:
            raise ValueError("memory model needs n >= 2")
        root = _memory_tree(n, q, eff)
        classes: dict = {}
        _accumulate(root, 1.0, classes)
        return EnumerationResult("memory", layout, classes.get("success", 0.0), classes, root)
    if protocol == "cnot":
        if n < 2:
            raise ValueError("cnot model needs n >= 2")
        mem = enumerate_event_tree("memory", layout, eff)
        masses = _cnot_iteration_masses(n, eff, mem.success_probability)
        per_block = masses["k"] / (1.0 - masses["m"])
        total = per_block**q
        classes = dict(masses)
        classes["per_block"] = per_block
        return EnumerationResult("cnot", layout, total, classes, None)
    raise ValueError(f"unknown protocol {protocol!r}")


# ---------------------------------------------------------------------------
# Monte Carlo over the state engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialPlan:
    protocol: str  # memory | cnot | z90 | z180 | x90
    layout: CodeLayout
    trials: int
    seed: int
    theta_deg: float = 90.0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trial count must be >= 1")


@dataclass
class MCEstimate:
    plan: TrialPlan
    eff: EfficiencyParams
    successes: int
    taxonomy: dict
    fidelity_checked: int = 0

    @property
    def p_hat(self) -> float:
        return self.successes / self.plan.trials

    @property
    def std_err(self) -> float:
        p = self.p_hat
        return float(np.sqrt(max(p * (1.0 - p), 1e-300) / self.plan.trials))


def _one_trial(plan: TrialPlan, eff: EfficiencyParams, trial_idx: int) -> str:
    spec = LogicalQubitSpec.of(1.0, 1.0)
    outcomes = SampledOutcomes(plan.seed, trial_idx)
    reg = PhotonRegister(outcomes, max_photons=26)
    det = EfficiencyDetector(eff, outcomes)
    layout = plan.layout
    if plan.protocol == "memory":
        car = protocols.prepare_logical(reg, spec, layout)
        rec = protocols.active_memory_cycle(reg, car, det)
    elif plan.protocol == "cnot":
        ctrl = protocols.prepare_logical(reg, PLUS, layout)
        tgt = protocols.prepare_logical(reg, ZERO, layout)
        rec = protocols.cnot_logical(reg, ctrl, tgt, det)
    elif plan.protocol in ("z90", "z180", "z45"):
        car = protocols.prepare_logical(reg, spec, layout)
        theta = {"z90": 90.0, "z180": 180.0, "z45": 45.0}[plan.protocol]
        rec = protocols.z_theta_logical(reg, car, theta, det)
    elif plan.protocol == "x90":
        car = protocols.prepare_logical(reg, spec, layout)
        rec = protocols.x90_logical(reg, car, det)
    else:
        raise ValueError(f"unknown protocol {plan.protocol!r}")
    return rec.terminal.value


def _run_chunk(args) -> Counter:
    plan, eff, start, stop = args
    counts: Counter = Counter()
    for t in range(start, stop):
        counts[_one_trial(plan, eff, t)] += 1
    return counts


def run_monte_carlo(plan: TrialPlan, eff: EfficiencyParams, workers: int | None = None) -> MCEstimate:
    """Estimate the protocol success probability by seeded engine trials.

    Trials are keyed by (seed, trial index) so the estimate does not depend
    on how they are partitioned across worker processes.
    """
    workers = workers if workers is not None else min(os.cpu_count() or 1, 8)
    counts: Counter = Counter()
    if workers <= 1 or plan.trials < 256:
        counts = _run_chunk((plan, eff, 0, plan.trials))
    else:
        chunk = max(256, plan.trials // (workers * 8))
        spans = [(plan, eff, s, min(s + chunk, plan.trials)) for s in range(0, plan.trials, chunk)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for c in pool.map(_run_chunk, spans):
                counts.update(c)
    successes = counts["success"] + counts["recovered_then_success"]
    taxonomy = {
        "success": counts["success"],
        "recovered": counts["recovered_then_success"],
        "no_progress": counts["no_progress"],
        "logical_failure": counts["logical_failure"],
    }
    return MCEstimate(plan, eff, successes, taxonomy)
