"""Closed-form success probabilities, optimal redundancy search, and thresholds.

The active-memory model: a re-encoding attempt on one parity qubit of
length n ends in clean success (p_qs), total failure (p_ff) or a recovered
partial failure (p_qf = 1 - p_qs - p_ff), and the cycle succeeds when some
block re-encodes cleanly and every remaining old block disentangles:

    p_e = sum_{j=0}^{q-1} p_qf^j p_qs [1 - (1-eta1)^n]^(q-1-j)

The CNOT model classifies each iteration as no-progress (m terms, the
first four multiplied by the re-encode success p_e), progress (k), or
failure, giving p_total = (k / (1-m))^q.  Formulas are evaluated exactly
as published; for small n the published k and m masses are known to
overlap (k + m can exceed 1), so p_total is reported raw alongside a
clamped companion, and the event-tree enumerator serves as the arbiter of
the underlying process probability.

Everything here must stay finite for n up to ~1024 near threshold, where
individual factors underflow; the *_log variants evaluate in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_LOG_EPS = -745.0  # exp() underflows to 0 below this


def _pow_log(log_base_terms: float) -> float:
    return math.exp(log_base_terms) if log_base_terms > _LOG_EPS else 0.0


def _logsumexp(terms) -> float:
    arr = np.asarray(list(terms), dtype=float)
    if arr.size == 0:
        return -math.inf
    hi = arr.max()
    if hi == -math.inf:
        return -math.inf
    return float(hi + np.log(np.exp(arr - hi).sum()))


def _log1m_exp(log_x: float) -> float:
    """log(1 - e^{log_x}) for log_x < 0."""
    if log_x >= 0.0:
        return -math.inf
    if log_x > -0.693:
        return math.log(-math.expm1(log_x))
    return math.log1p(-math.exp(log_x))


def _validate(n: int, eta1: float, eta2: float, q: float | None = None):
    if n < 2:
        raise ValueError("parity length n must be >= 2")
    for name, v in (("eta1", eta1), ("eta2", eta2)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} = {v} outside [0, 1]")
    if q is not None and q < 1:
        raise ValueError("redundancy q must be >= 1")


# ---------------------------------------------------------------------------
# Memory (re-encoding) formulas
# ---------------------------------------------------------------------------


def p_qs(n: int, eta1: float, eta2: float) -> float:
    """Clean re-encode: fusion success on one of the first n-1 photons, rest measured."""
    _validate(n, eta1, eta2)
    x = 0.5 * eta1 * eta2
    return float(sum(x**i * eta1 ** (n - i) for i in range(1, n)))


def _log_p_qs(n: int, eta1: float, eta2: float) -> float:
    if eta1 == 0.0 or eta2 == 0.0:
        return -math.inf
    lx = math.log(0.5 * eta1 * eta2)
    l1 = math.log(eta1)
    return _logsumexp(i * lx + (n - i) * l1 for i in range(1, n))


def recovery_R(n: int, q: int, eta2: float) -> float:
    """Failure to disentangle via the fresh resource: some new block is lost whole."""
    if n < 1 or q < 1:
        raise ValueError("recovery_R needs n, q >= 1")
    miss = (1.0 - eta2) ** n
    return float(sum(math.comb(q, k) * miss**k * (1.0 - miss) ** (q - k) for k in range(1, q + 1)))


def _recovery_R_cont(n: int, q: float, eta2: float) -> float:
    """Continuous-q evaluation: R = 1 - (1 - (1-eta2)^n)^q."""
    if eta2 >= 1.0:
        return 0.0
    log_miss = n * math.log1p(-eta2)
    return -math.expm1(q * _log1m_exp(log_miss))


@dataclass(frozen=True)
class _MemoryPieces:
    """q-independent pieces of p_ff and p_e for one (n, eta) point, in log space."""

    n: int
    eta1: float
    eta2: float
    log_pqs: float
    log_t1: float  # loss during fusion, block lost whole
    log_t2: float  # loss while measuring off, coefficient of R
    log_t3: float  # fusion failures all the way down, last photon lost
    log_miss_old: float  # n*log(1-eta1)

    def log_p_ff(self, q: float) -> float:
        r = _recovery_R_cont(self.n, q, self.eta2)
        lr = math.log(r) if r > 0.0 else -math.inf
        return _logsumexp([self.log_t1, lr + self.log_t2, self.log_t3])

    def p_e(self, q: float) -> float:
        pqs = _pow_log(self.log_pqs)
        pff = _pow_log(self.log_p_ff(q))
        s = pqs + pff
        if s >= 1.0:
            return 0.0
        lqf = math.log1p(-s)
        lb = (
            _log1m_exp(self.log_miss_old) if self.log_miss_old > -math.inf else 0.0
        )  # log of 1-(1-eta1)^n
        d = lb - lqf
        # sum_{j=0}^{q-1} qf^j b^{q-1-j} = b^{q-1} (1 - r^q)/(1 - r), r = qf/b
        if abs(d) < 1e-12:
            log_sum = (q - 1.0) * lb + math.log(q)
        else:
            num = -math.expm1(-q * d)
            den = -math.expm1(-d)
            if num <= 0.0 or den <= 0.0:
                num, den = math.expm1(q * d), math.expm1(d)
            log_sum = (q - 1.0) * lqf + math.log(num) - math.log(den)
        return _pow_log(self.log_pqs + log_sum)


def _memory_pieces(n: int, eta1: float, eta2: float) -> _MemoryPieces:
    _validate(n, eta1, eta2)
    if eta1 == 0.0 or eta2 == 0.0:
        return _MemoryPieces(n, eta1, eta2, -math.inf, 0.0, -math.inf, -math.inf, 0.0)
    lx = math.log(0.5 * eta1 * eta2) if eta1 * eta2 > 0 else -math.inf
    l1 = math.log(eta1)
    lm1 = math.log1p(-eta1) if eta1 < 1.0 else -math.inf
    l_loss = math.log1p(-eta1 * eta2) if eta1 * eta2 < 1.0 else -math.inf
    t1 = _logsumexp((j - 1) * lx + l_loss + (n - j) * lm1 for j in range(1, n))
    t2 = _logsumexp(
        (j + 1) * lx + k * l1 + (n - 1 - j - k) * lm1
        for j in range(0, n - 1)
        for k in range(0, n - 1 - j)
    )
    t3 = (n - 1) * lx + lm1
    return _MemoryPieces(n, eta1, eta2, _log_p_qs(n, eta1, eta2), t1, t2, t3, n * lm1)


def p_ff(n: int, q: int, eta1: float, eta2: float) -> float:
    """Total failure of one re-encoding attempt (three published event classes)."""
    _validate(n, eta1, eta2, q)
    x = 0.5 * eta1 * eta2
    t1 = sum(x ** (j - 1) * (1 - eta1 * eta2) * (1 - eta1) ** (n - j) for j in range(1, n))
    t2 = sum(
        x ** (j + 1) * eta1**k * (1 - eta1) ** (n - 1 - j - k)
        for j in range(0, n - 1)
        for k in range(0, n - 1 - j)
    )
    t3 = x ** (n - 1) * (1 - eta1)
    return float(t1 + recovery_R(n, q, eta2) * t2 + t3)


def p_qf(n: int, q: int, eta1: float, eta2: float) -> float:
    """Recovered partial failure: the complement of clean success and total failure."""
    return 1.0 - p_qs(n, eta1, eta2) - p_ff(n, q, eta1, eta2)


def p_e(n: int, q, eta1: float, eta2: float) -> float:
    """Success probability of one active-memory cycle with redundancy q."""
    _validate(n, eta1, eta2, q)
    if isinstance(q, int) and q <= 64 and eta1 > 1e-6:
        pqs = p_qs(n, eta1, eta2)
        pqf = p_qf(n, q, eta1, eta2)
        b = 1.0 - (1.0 - eta1) ** n
        return float(sum(pqf**j * pqs * b ** (q - 1 - j) for j in range(q)))
    return _memory_pieces(n, eta1, eta2).p_e(q)


# ---------------------------------------------------------------------------
# Optimal redundancy
# ---------------------------------------------------------------------------


@dataclass
class OptimalQ:
    q_int: int
    q_continuous: float
    p_e: float
    boundary: bool = False  # p_e still increasing at the search bound


Q_SEARCH_CAP = 1e12


def optimal_q(n: int, eta1: float, eta2: float) -> OptimalQ:
    """Redundancy width maximizing p_e at fixed n (ties toward smaller q).

    The stationary point of the continuous-q extension is located by golden
    section on log q; nearby integers are then compared exactly.  When p_e
    keeps increasing up to the search cap (as at eta = 1) the report flags a
    boundary result.
    """
    pieces = _memory_pieces(n, eta1, eta2)

    def f(logq: float) -> float:
        return pieces.p_e(math.exp(logq))

    lo, hi = 0.0, math.log(4.0)
    while f(hi) > f(hi - 1e-4) and hi < math.log(Q_SEARCH_CAP):
        lo, hi = hi - 1.0, hi + 1.0
    if hi >= math.log(Q_SEARCH_CAP):
        q_cont = math.exp(hi)
        return OptimalQ(int(q_cont), q_cont, f(hi), boundary=True)
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(200):
        if b - a < 1e-10:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    q_cont = math.exp((a + b) / 2.0)
    if q_cont < 1e6:
        lo_i = max(1, int(math.floor(q_cont)) - 2)
        cands = [(pieces.p_e(qi), -qi) for qi in range(lo_i, int(math.ceil(q_cont)) + 3)]
        best, neg_q = max(cands)
        return OptimalQ(-neg_q, q_cont, best)
    q_int = int(round(q_cont))
    return OptimalQ(q_int, q_cont, pieces.p_e(q_cont))


# ---------------------------------------------------------------------------
# CNOT formulas
# ---------------------------------------------------------------------------


@dataclass
class CnotTerms:
    m1: float
    m2: float
    m3: float
    m4: float
    m5: float
    m: float
    k: float
    odd_n: bool = False

    def as_dict(self):
        return {"m1": self.m1, "m2": self.m2, "m3": self.m3, "m4": self.m4, "m5": self.m5, "m": self.m, "k": self.k}


def m_terms(n: int, q, eta1: float, eta2: float) -> CnotTerms:
    """No-progress and progress masses of one CNOT iteration, as published.

    Exponents n/2 and n/2+1 are evaluated with real arithmetic; odd n is
    permitted but flagged, since the published forms are only integral for
    even n.
    """
    _validate(n, eta1, eta2, q)
    x = 0.5 * eta1 * eta2
    nh = n / 2.0
    m1 = x ** (n - 1) * eta1
    m2 = sum(x**i * (1 - eta1 * eta2) * (1 - (1 - eta1) ** (n - i - 1)) for i in range(0, n - 1))
    m3 = sum(
        x**i * eta1**j * (1 - eta1) * (1 - (1 - eta1) ** (n - i - j - 1))
        for i in range(1, n - 1)
        for j in range(0, n - i - 1)
    )
    m4 = sum(
        x**i * eta1**j * (1 - eta1) ** (n - i - j) * (1 - (1 - eta2) ** n) * (1 - (1 - eta2) ** (nh + 1))
        for i in range(1, n)
        for j in range(0, n - i)
    )
    m5 = sum(
        x**i * eta1 ** (n - i) * (1 - eta1) * x * (1 - (1 - eta1) ** (nh + 1)) for i in range(1, n)
    )
    k = sum(
        x**i
        * eta1 ** (n - i)
        * (x + (1 - eta1 * eta2) * (1 - (1 - eta1) ** (n - 1)) * (1 - (1 - eta2) ** nh))
        for i in range(0, n)
    )
    m = p_e(n, q, eta1, eta2) * (m1 + m2 + m3 + m4) + m5
    return CnotTerms(m1, m2, m3, m4, m5, m, k, odd_n=bool(n % 2))


def progress_K(n: int, eta1: float, eta2: float) -> float:
    return m_terms(n, 1, eta1, eta2).k


def p_total(n: int, q, eta1: float, eta2: float) -> float:
    """Published CNOT success probability (k/(1-m))^q, reported raw."""
    t = m_terms(n, q, eta1, eta2)
    ratio = t.k / (1.0 - t.m)
    return float(ratio ** float(q))


def p_total_clamped(n: int, q, eta1: float, eta2: float) -> float:
    return float(min(1.0, max(0.0, p_total(n, q, eta1, eta2))))


# ---------------------------------------------------------------------------
# Threshold search
# ---------------------------------------------------------------------------


DEFAULT_SCHEDULE = tuple(2**k for k in range(2, 11))  # 4 ... 1024


@dataclass
class ThresholdReport:
    protocol: str
    eta_lower: float
    eta_upper: float
    eta_star: float | None
    schedule: tuple
    converged: bool
    trace: list = field(default_factory=list)

    @property
    def bracket(self):
        return (self.eta_lower, self.eta_upper)


def _schedule_success(protocol: str, eta_s: float, eta_m: float, eta_d: float, schedule) -> list[float]:
    eta1 = eta_s * eta_m * eta_d
    eta2 = eta_s * eta_d
    out = []
    for n in schedule:
        opt = optimal_q(n, eta1, eta2)
        if protocol == "memory":
            out.append(opt.p_e)
        elif protocol == "cnot":
            out.append(p_total(n, opt.q_continuous, eta1, eta2))
        else:
            raise ValueError(f"unknown protocol {protocol!r}")
    return out


def threshold_predicate(values: list[float], target: float = 1e-3) -> bool:
    """Success is driveable toward one: nondecreasing along the schedule, final above 1-target."""
    for a, b in zip(values, values[1:]):
        if b < a - 1e-12:
            return False
    return values[-1] > 1.0 - target


def find_threshold(
    protocol: str,
    schedule=DEFAULT_SCHEDULE,
    eta_lower: float = 0.5,
    eta_upper: float = 1.0,
    width: float = 0.005,
    target: float = 1e-3,
    eta_s: float | None = None,
    eta_m: float | None = None,
    eta_d: float | None = None,
) -> ThresholdReport:
    """Bisect the uniform efficiency at which the protocol becomes scalable.

    Components pinned via eta_s/eta_m/eta_d stay fixed (e.g. perfect
    detectors) while the remaining ones share the bisected value.
    """

    def components(eta):
        return (
            eta if eta_s is None else eta_s,
            eta if eta_m is None else eta_m,
            eta if eta_d is None else eta_d,
        )

    trace = []

    def ok(eta: float) -> bool:
        vals = _schedule_success(protocol, *components(eta), schedule)
        good = threshold_predicate(vals, target)
        trace.append({"eta": eta, "values": vals, "ok": good})
        return good

    lo, hi = eta_lower, eta_upper
    if not ok(hi):
        return ThresholdReport(protocol, lo, hi, None, tuple(schedule), False, trace)
    if ok(lo):
        return ThresholdReport(protocol, lo, lo, lo, tuple(schedule), True, trace)
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return ThresholdReport(protocol, lo, hi, 0.5 * (lo + hi), tuple(schedule), True, trace)
