"""Charlie-Alice-Bob link topology: spans, wavelengths, loss and delay bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field

from .constants import NU_REFERENCE, NU_SENSING, propagation_delay
from .noise import NoiseSpec, PhaseTrace

ARMS = ("alice", "bob")
ROLES = ("service", "qkd")


@dataclass(frozen=True)
class FiberSpan:
    length: float  # km
    loss: float  # dB, connectors and DWDM included
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    role: str = "qkd"
    arm: str = "alice"

    def __post_init__(self):
        if self.length < 0 or self.loss < 0:
            raise ValueError(f"{self.arm}/{self.role} span: length and loss must be >= 0")
        if self.role not in ROLES or self.arm not in ARMS:
            raise ValueError(f"bad span label {self.arm}/{self.role}")

    @property
    def delay(self) -> float:
        return propagation_delay(self.length)


@dataclass(frozen=True)
class WavelengthPlan:
    nu_r: float = NU_REFERENCE
    nu_s: float = NU_SENSING

    def __post_init__(self):
        if not (self.nu_r > 0 and self.nu_s > 0):
            raise ValueError("optical frequencies must be > 0")

    # QKD lasers are phase locked to the reference
    @property
    def nu_a(self) -> float:
        return self.nu_r

    @property
    def nu_b(self) -> float:
        return self.nu_r

    @property
    def mismatch(self) -> float:
        """Fractional residual ``(nu_R - nu_S) / nu_S`` left after sensing-wavelength cancellation."""
        return (self.nu_r - self.nu_s) / self.nu_s


@dataclass(frozen=True)
class LinkTopology:
    service_alice: FiberSpan
    qkd_alice: FiberSpan
    service_bob: FiberSpan
    qkd_bob: FiberSpan
    plan: WavelengthPlan = field(default_factory=WavelengthPlan)
    # noise on the QKD path that the sensing laser does not see
    uncommon_alice: NoiseSpec | None = None
    uncommon_bob: NoiseSpec | None = None

    def spans(self) -> dict[str, FiberSpan]:
        return {
            "service_alice": self.service_alice,
            "qkd_alice": self.qkd_alice,
            "service_bob": self.service_bob,
            "qkd_bob": self.qkd_bob,
        }

    def arm_length(self, arm: str) -> float:
        s = self.spans()
        return s[f"service_{arm}"].length + s[f"qkd_{arm}"].length

    @property
    def unbalance(self) -> float:
        """Differential path (km) between the two round trips Charlie -> terminal -> Charlie."""
        return abs(self.arm_length("alice") - self.arm_length("bob"))

    @property
    def qkd_length(self) -> float:
        return self.qkd_alice.length + self.qkd_bob.length

    @property
    def differential_delay(self) -> float:
        return propagation_delay(self.unbalance)


def torino_topology(
    service_noise: tuple[NoiseSpec, NoiseSpec] | None = None,
    qkd_noise: tuple[NoiseSpec, NoiseSpec] | None = None,
) -> LinkTopology:
    """Torino-Bardonecchia (Alice, 114 km, 35 dB) / Torino-Santhia (Bob, 92 km, 30 dB)."""
    sa, sb = service_noise or (NoiseSpec(), NoiseSpec())
    qa, qb = qkd_noise or (NoiseSpec(), NoiseSpec())
    return LinkTopology(
        FiberSpan(114.0, 35.0, sa, "service", "alice"),
        FiberSpan(114.0, 35.0, qa, "qkd", "alice"),
        FiberSpan(92.0, 30.0, sb, "service", "bob"),
        FiberSpan(92.0, 30.0, qb, "qkd", "bob"),
    )


@dataclass(frozen=True)
class LossBudget:
    alice_db: float
    bob_db: float
    total_db: float
    total_km: float
    alice_db_per_km: float
    bob_db_per_km: float
    average_db_per_km: float


def _per_km(db: float, km: float) -> float:
    return db / km if km > 0 else 0.0


def loss_budget(topology: LinkTopology) -> LossBudget:
    """Alice-to-Bob loss through the two QKD spans."""
    a, b = topology.qkd_alice, topology.qkd_bob
    total_km = a.length + b.length
    return LossBudget(
        a.loss, b.loss, a.loss + b.loss, total_km,
        _per_km(a.loss, a.length), _per_km(b.loss, b.length), _per_km(a.loss + b.loss, total_km),
    )


@dataclass(frozen=True)
class TimingSkew:
    span_delays: dict
    alice_qkd: float
    bob_qkd: float
    skew: float  # Alice minus Bob arrival time of QKD pulses at Charlie
    round_trip_skew: float  # sensing-path differential delay


def timing_skew(topology: LinkTopology) -> TimingSkew:
    delays = {k: s.delay for k, s in topology.spans().items()}
    a, b = delays["qkd_alice"], delays["qkd_bob"]
    rt = (delays["service_alice"] + a) - (delays["service_bob"] + b)
    return TimingSkew(delays, a, b, a - b, rt)


def _check_compatible(*traces: PhaseTrace) -> None:
    f0, n0 = traces[0].f_s, len(traces[0])
    for t in traces[1:]:
        if t.f_s != f0:
            raise ValueError(f"sample-rate mismatch: {t.f_s} vs {f0}")
        if len(t) != n0:
            raise ValueError(f"length mismatch: {len(t)} vs {n0}")


@dataclass
class SensedPhase:
    alice: PhaseTrace
    bob: PhaseTrace

    @property
    def error(self) -> PhaseTrace:
        return self.alice.with_samples(self.alice.samples - self.bob.samples, "loop error")


def sensed_phase(
    topology: LinkTopology,
    service_noise: tuple[PhaseTrace, PhaseTrace],
    qkd_noise: tuple[PhaseTrace, PhaseTrace],
    correction: PhaseTrace | None = None,
) -> SensedPhase:
    """Round-trip sensing-laser phase of each arm; AOMa correction acts on Alice's arm only.

    Fiber traces are expressed at the sensing wavelength.
    """
    sa, sb = service_noise
    qa, qb = qkd_noise
    traces = [sa, sb, qa, qb] + ([correction] if correction is not None else [])
    _check_compatible(*traces)
    alice = sa.samples + qa.samples
    if correction is not None:
        alice = alice + correction.samples
    return SensedPhase(sa.with_samples(alice, "sensed alice"), sb.with_samples(sb.samples + qb.samples, "sensed bob"))


def residual_after_correction(fiber_phase_at_sensing: PhaseTrace, plan: WavelengthPlan) -> PhaseTrace:
    """QKD-wavelength phase left when a correction nulls the same fiber at the sensing wavelength."""
    return fiber_phase_at_sensing.with_samples(fiber_phase_at_sensing.samples * plan.mismatch, "nu residual")

