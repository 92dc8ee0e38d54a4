"""Synthetic cohort, in-home sensor streams, agitation episodes and alert log.

Stands in for the private study data. Every draw comes from a generator keyed
on ``(spec.seed, participant index, purpose)`` so a participant's stream does
not depend on how many other participants were generated.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from .core import (
    CHANNEL_INDEX,
    CHANNELS,
    DIAGNOSES,
    VITAL_INDEX,
    AgitationAlert,
    EventStream,
    Participant,
    VitalStream,
    from_epoch,
    local_hour,
)

log = logging.getLogger(__name__)

HOUR = 3600
DAY = 24 * HOUR

# (diagnosis, sex) -> share of the cohort; Table 3 percentages, renormalised
DEFAULT_DIAGNOSIS_MIX = {
    ("alzheimers", "M"): 0.39,
    ("alzheimers", "F"): 0.15,
    ("parkinsons_dementia", "M"): 0.02,
    ("parkinsons_dementia", "F"): 0.02,
    ("frontotemporal_dementia", "M"): 0.02,
    ("frontotemporal_dementia", "F"): 0.02,
    ("vascular_dementia", "M"): 0.04,
    ("vascular_dementia", "F"): 0.04,
    ("other", "M"): 0.22,
    ("other", "F"): 0.07,
}

# evening hours get double weight when placing episodes and alerts
EVENING_HOURS = range(15, 22)

_PURPOSE = {"cohort": 0, "routine": 1, "stream": 2, "episodes": 3, "alerts": 4, "allocation": 5}


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


@dataclass
class CohortSpec:
    n_participants: int = 46
    days: int = 180
    seed: int = 1
    label_mix: tuple[float, float, float] = (0.157, 0.419, 0.424)
    n_true_episodes: int = 100
    late_fraction: float = 0.10
    start: str = "2019-04-01"
    tz_offset_hours: float = 0.0
    age_mean: float = 82.5
    age_sd: float = 7.2
    age_range: tuple[int, int] = (61, 99)
    mmse_mean: float = 23.8
    mmse_sd: float = 3.6
    mmse_range: tuple[int, int] = (15, 30)
    diagnosis_mix: dict = field(default_factory=lambda: dict(DEFAULT_DIAGNOSIS_MIX))

    def __post_init__(self):
        self.label_mix = tuple(float(x) for x in self.label_mix)
        self.age_range = tuple(self.age_range)
        self.mmse_range = tuple(self.mmse_range)
        if isinstance(self.diagnosis_mix, dict):
            self.diagnosis_mix = {
                (tuple(k.split(":")) if isinstance(k, str) else tuple(k)): float(v)
                for k, v in self.diagnosis_mix.items()
            }

    def validate(self):
        if self.n_participants < 3:
            raise ValueError("a cohort needs at least 3 participants to form train/validation/test splits")
        if len(self.label_mix) != 3 or abs(sum(self.label_mix) - 1.0) > 1e-9:
            raise ValueError(f"label_mix must be 3 proportions summing to 1, got {self.label_mix}")
        if min(self.label_mix) < 0:
            raise ValueError("label_mix proportions must be non-negative")
        if self.days < 8:
            raise ValueError("need at least 8 days of observation to place episodes")
        if self.n_true_episodes < 0:
            raise ValueError("n_true_episodes must be non-negative")
        if not 0.0 <= self.late_fraction <= 1.0:
            raise ValueError("late_fraction must lie in [0, 1]")
        for diag, _sex in self.diagnosis_mix:
            if diag not in DIAGNOSES:
                raise ValueError(f"unknown diagnosis {diag!r}")

    @property
    def start_epoch(self) -> int:
        day = datetime.fromisoformat(self.start).replace(tzinfo=timezone.utc)
        # day boundaries are local midnights
        return int(day.timestamp()) - int(round(self.tz_offset_hours * HOUR))

    @property
    def end_epoch(self) -> int:
        return self.start_epoch + self.days * DAY

    def participant_ids(self) -> list[str]:
        width = max(2, len(str(self.n_participants)))
        return [f"p{i + 1:0{width}d}" for i in range(self.n_participants)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label_mix"] = list(self.label_mix)
        d["age_range"] = list(self.age_range)
        d["mmse_range"] = list(self.mmse_range)
        d["diagnosis_mix"] = {f"{k[0]}:{k[1]}": v for k, v in sorted(self.diagnosis_mix.items())}
        return d

    @classmethod
    def from_dict(cls, data: dict | None) -> CohortSpec:
        return cls(**(data or {}))


@dataclass(frozen=True)
class EpisodeSignature:
    """How an agitation episode perturbs the home's sensor streams."""

    movement_multiplier: float
    entropy_boost: float
    pulse_offset: float
    systolic_offset: float
    diastolic_offset: float
    duration_hours: int

    def __post_init__(self):
        if self.duration_hours < 1:
            raise ValueError("episode duration must be at least 1 hour")
        if self.movement_multiplier < 1:
            raise ValueError("movement multiplier must be >= 1")
        if not 0.0 <= self.entropy_boost <= 1.0:
            raise ValueError("entropy boost is a mixing weight in [0, 1]")


@dataclass(frozen=True)
class Episode:
    participant_id: str
    start: int  # epoch seconds, on an hour boundary
    end: int
    signature: EpisodeSignature

    def hours(self) -> range:
        return range(self.start, self.end, HOUR)


# ---------------------------------------------------------------------------
# cohort


def _moment_matched(rng, n, mean, sd, lo, hi) -> np.ndarray:
    raw = rng.standard_normal(n)
    if n > 1:
        raw = (raw - raw.mean()) / raw.std(ddof=1)
    return np.clip(np.rint(mean + sd * raw), lo, hi).astype(int)


def _quota(weights: np.ndarray, n: int) -> np.ndarray:
    """Largest-remainder apportionment of ``n`` items to ``weights``."""
    exact = weights / weights.sum() * n
    counts = np.floor(exact).astype(int)
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[: n - counts.sum()]] += 1
    return counts


def generate_cohort(spec: CohortSpec) -> list[Participant]:
    spec.validate()
    n = spec.n_participants
    rng = _rng(spec.seed, _PURPOSE["cohort"])
    ages = _moment_matched(rng, n, spec.age_mean, spec.age_sd, *spec.age_range)
    mmse = _moment_matched(rng, n, spec.mmse_mean, spec.mmse_sd, *spec.mmse_range)

    keys = sorted(spec.diagnosis_mix)
    counts = _quota(np.array([spec.diagnosis_mix[k] for k in keys]), n)
    labels = [k for k, c in zip(keys, counts) for _ in range(c)]
    labels = [labels[i] for i in rng.permutation(n)]

    return [
        Participant(pid, int(a), int(m), sex, diag)
        for pid, a, m, (diag, sex) in zip(spec.participant_ids(), ages, mmse, labels)
    ]


# ---------------------------------------------------------------------------
# routine model

# expected sensor firings per hour of day for an average participant
_BASE_RATE = np.array(
    [1.6, 1.3, 1.2, 1.2, 1.3, 1.6, 2.5, 5.0, 6.5, 6.0, 5.0, 5.0,
     6.0, 5.5, 4.5, 4.0, 4.5, 5.5, 6.0, 5.0, 4.5, 3.5, 2.5, 1.5]
)

_BLOCK_PREFS = {
    # back, bath, bed, dining, fridge, hall, kitchen, living, entrance, micro, study
    "night": [0.0, 0.20, 0.70, 0.0, 0.01, 0.07, 0.01, 0.01, 0.0, 0.0, 0.0],
    "morning": [0.02, 0.15, 0.10, 0.06, 0.08, 0.12, 0.22, 0.12, 0.04, 0.06, 0.03],
    "day": [0.04, 0.08, 0.04, 0.07, 0.06, 0.12, 0.15, 0.28, 0.06, 0.03, 0.07],
    "evening": [0.02, 0.10, 0.06, 0.08, 0.07, 0.12, 0.17, 0.30, 0.02, 0.05, 0.01],
    "late": [0.0, 0.20, 0.40, 0.0, 0.02, 0.12, 0.04, 0.20, 0.0, 0.01, 0.01],
}

_ALWAYS_PRESENT = ("bathroom", "bedroom", "hallway", "kitchen", "living_room", "entrance_door", "fridge_door")


def _block(hour: int) -> str:
    if hour < 6:
        return "night"
    if hour < 11:
        return "morning"
    if hour < 17:
        return "day"
    if hour < 22:
        return "evening"
    return "late"


@dataclass
class Routine:
    """Per-participant hour-of-day movement profile and vital baselines."""

    rate: np.ndarray  # (24,) expected firings per hour
    prefs: np.ndarray  # (24, 11) room distribution per hour
    stay: float  # probability the next firing repeats the current room
    present: np.ndarray  # (11,) bool, sensors installed in the home
    pulse: float
    systolic: float
    diastolic: float


def participant_routine(index: int, spec: CohortSpec) -> Routine:
    rng = _rng(spec.seed, _PURPOSE["routine"], index)
    present = np.ones(len(CHANNELS), dtype=bool)
    for ch in ("back_door", "dining_room", "microwave", "study"):
        present[CHANNEL_INDEX[ch]] = rng.random() < 0.75
    for ch in _ALWAYS_PRESENT:
        present[CHANNEL_INDEX[ch]] = True

    rate = _BASE_RATE * rng.lognormal(0.0, 0.25) * rng.lognormal(0.0, 0.1, size=24)
    rate[:6] = np.maximum(rate[:6], 1.2)
    prefs = np.empty((24, len(CHANNELS)))
    jitter = rng.lognormal(0.0, 0.35, size=len(CHANNELS))
    for h in range(24):
        p = np.array(_BLOCK_PREFS[_block(h)]) * jitter * rng.lognormal(0.0, 0.15, size=len(CHANNELS))
        p = np.where(present, p, 0.0)
        p = p / p.sum()
        if _block(h) == "night":
            # nights are spent mostly in the bedroom whatever the jitter
            bed = np.eye(len(CHANNELS))[CHANNEL_INDEX["bedroom"]]
            p = 0.5 * p + 0.5 * bed
        prefs[h] = p
    return Routine(
        rate=rate,
        prefs=prefs,
        stay=float(rng.uniform(0.25, 0.5)),
        present=present,
        pulse=float(rng.normal(72.0, 5.0)),
        systolic=float(rng.normal(130.0, 8.0)),
        diastolic=float(rng.normal(78.0, 5.0)),
    )


def _index_of(participant: Participant, spec: CohortSpec) -> int:
    try:
        return spec.participant_ids().index(participant.participant_id)
    except ValueError:
        raise ValueError(f"{participant.participant_id} is not part of this cohort") from None


def _walk(rng, hours_local: np.ndarray, counts: np.ndarray, routine: Routine) -> np.ndarray:
    """First-order room-transition chain over the firings of consecutive hours."""
    total = int(counts.sum())
    cum = np.cumsum(routine.prefs, axis=1)
    cum[:, -1] = 1.0
    cum_lists = [row.tolist() for row in cum]
    u_stay = rng.random(total).tolist()
    u_room = rng.random(total).tolist()
    out = np.empty(total, dtype=np.int8)
    room = CHANNEL_INDEX["bedroom"]
    k = 0
    stay = routine.stay
    for h, n in zip(hours_local.tolist(), counts.tolist()):
        row = cum_lists[h]
        for _ in range(n):
            if u_stay[k] >= stay:
                room = bisect.bisect_right(row, u_room[k])
            out[k] = room
            k += 1
    return out


def _hour_offsets(rng, counts: np.ndarray) -> np.ndarray:
    total = int(counts.sum())
    secs = rng.integers(0, HOUR, size=total)
    # sort within each hour
    starts = np.repeat(np.arange(len(counts)) * HOUR, counts)
    return np.sort(starts + secs)


def generate_event_stream(participant: Participant, spec: CohortSpec) -> tuple[EventStream, VitalStream]:
    """Baseline (episode-free) movement and vital streams for one participant."""
    index = _index_of(participant, spec)
    routine = participant_routine(index, spec)
    rng = _rng(spec.seed, _PURPOSE["stream"], index)
    n_hours = spec.days * 24
    hours_local = np.arange(n_hours) % 24

    counts = rng.poisson(routine.rate[hours_local])
    offsets = _hour_offsets(rng, counts)
    rooms = _walk(rng, hours_local, counts, routine)
    events = EventStream(participant.participant_id, spec.start_epoch + offsets, rooms)

    # pulse: one reading per hour; blood pressure: morning and evening cuff readings
    p_times = np.arange(n_hours) * HOUR + rng.integers(0, HOUR, size=n_hours)
    p_vals = np.rint(rng.normal(routine.pulse, 5.0, size=n_hours))
    bp_times = []
    for day in range(spec.days):
        for hour in (8, 20):
            if rng.random() < 0.85:
                bp_times.append(day * DAY + hour * HOUR + int(rng.integers(-1800, 1800)))
    bp_times = np.array(bp_times, dtype=np.int64)
    sys_vals = np.rint(rng.normal(routine.systolic, 8.0, size=len(bp_times)))
    dia_vals = np.rint(rng.normal(routine.diastolic, 5.0, size=len(bp_times)))

    times = np.concatenate([p_times, bp_times, bp_times])
    kinds = np.concatenate([
        np.full(n_hours, VITAL_INDEX["pulse"]),
        np.full(len(bp_times), VITAL_INDEX["systolic"]),
        np.full(len(bp_times), VITAL_INDEX["diastolic"]),
    ])
    values = np.maximum(np.concatenate([p_vals, sys_vals, dia_vals]), 1.0)
    vitals = _sorted_vitals(participant.participant_id, spec.start_epoch + times, kinds, values)
    return events, vitals


def _sorted_vitals(pid, times, kinds, values) -> VitalStream:
    order = np.lexsort((kinds, times))
    return VitalStream(pid, np.asarray(times)[order], np.asarray(kinds)[order], np.asarray(values)[order])


# ---------------------------------------------------------------------------
# episodes


def _hour_weights() -> np.ndarray:
    w = np.ones(24)
    w[list(EVENING_HOURS)] = 2.0
    return w / w.sum()


def allocate_episodes(spec: CohortSpec) -> dict[str, int]:
    """Number of agitation episodes per participant; everyone with data gets one."""
    ids = spec.participant_ids()
    total = spec.n_true_episodes
    rng = _rng(spec.seed, _PURPOSE["allocation"])
    base = min(1, total // len(ids)) if total else 0
    counts = np.full(len(ids), base)
    rest = total - counts.sum()
    if rest > 0:
        propensity = rng.lognormal(0.0, 0.6, size=len(ids))
        counts += rng.multinomial(rest, propensity / propensity.sum())
    return dict(zip(ids, counts.tolist()))


def draw_signature(rng) -> EpisodeSignature:
    return EpisodeSignature(
        movement_multiplier=float(rng.uniform(1.3, 2.5)),
        entropy_boost=float(rng.uniform(0.1, 0.5)),
        pulse_offset=float(rng.uniform(5.0, 25.0)),
        systolic_offset=float(rng.uniform(5.0, 25.0)),
        diastolic_offset=float(rng.uniform(3.0, 12.0)),
        duration_hours=int(rng.integers(6, 10)),
    )


def place_episodes(participant: Participant, spec: CohortSpec, n_episodes: int) -> list[Episode]:
    """Non-overlapping episodes at least a day apart, skewed toward the evening.

    Episodes start no earlier than day 4 so every derived sample has a full
    three-day history.
    """
    index = _index_of(participant, spec)
    rng = _rng(spec.seed, _PURPOSE["episodes"], index)
    weights = _hour_weights()
    episodes: list[Episode] = []
    attempts = 0
    while len(episodes) < n_episodes:
        attempts += 1
        if attempts > 1000 * (n_episodes + 1):
            raise ValueError(f"cannot fit {n_episodes} episodes into {spec.days} days")
        sig = draw_signature(rng)
        day = int(rng.integers(4, spec.days - 1))
        end_hour = int(rng.choice(24, p=weights)) + 1  # alert hour is end_hour - 1
        end = spec.start_epoch + day * DAY + end_hour * HOUR
        start = end - sig.duration_hours * HOUR
        if end > spec.end_epoch or start < spec.start_epoch + 4 * DAY:
            continue
        if any(start < e.end + DAY and e.start < end + DAY for e in episodes):
            continue
        episodes.append(Episode(participant.participant_id, start, end, sig))
    return sorted(episodes, key=lambda e: e.start)


def inject_episodes(
    stream: tuple[EventStream, VitalStream],
    participant: Participant,
    spec: CohortSpec,
    n_episodes: int | None = None,
    episodes: list[Episode] | None = None,
) -> tuple[tuple[EventStream, VitalStream], list[Episode]]:
    """Overlay agitation episodes onto a baseline stream.

    Extra firings are added in every episode hour (at least one per hour, drawn
    from a flattened room distribution) and pulse/blood-pressure readings are
    raised. The returned episode list is ground truth for evaluation only.
    Pre-placed ``episodes`` bypass the random placement.
    """
    events, vitals = stream
    if episodes is None:
        if n_episodes is None:
            n_episodes = allocate_episodes(spec)[participant.participant_id]
        if n_episodes == 0:
            return (events, vitals), []
        episodes = place_episodes(participant, spec, n_episodes)
    elif not episodes:
        return (events, vitals), []

    index = _index_of(participant, spec)
    routine = participant_routine(index, spec)
    rng = _rng(spec.seed, _PURPOSE["episodes"], index, 1)
    uniform = routine.present / routine.present.sum()

    new_t, new_c = [events.times], [events.channels]
    v_times, v_kinds, v_vals = vitals.times.copy(), vitals.kinds.copy(), vitals.values.copy()
    add_t, add_k, add_v = [], [], []
    for ep in episodes:
        sig = ep.signature
        for h0 in ep.hours():
            h = int(local_hour(h0, spec.tz_offset_hours))
            n = 1 + int(rng.poisson((sig.movement_multiplier - 1.0) * routine.rate[h]))
            p = (1.0 - sig.entropy_boost) * routine.prefs[h] + sig.entropy_boost * uniform
            new_c.append(rng.choice(len(CHANNELS), size=n, p=p / p.sum()).astype(np.int8))
            new_t.append(h0 + rng.integers(0, HOUR, size=n))

            # agitation-related readings: extra pulse samples and an occasional cuff reading
            for _ in range(3):
                add_t.append(h0 + int(rng.integers(0, HOUR)))
                add_k.append(VITAL_INDEX["pulse"])
                add_v.append(routine.pulse + sig.pulse_offset * rng.uniform(1.0, 2.0) + rng.normal(0, 3.0))
            if rng.random() < 0.5:
                t = h0 + int(rng.integers(0, HOUR))
                scale = rng.uniform(1.0, 2.0)
                add_t += [t, t]
                add_k += [VITAL_INDEX["systolic"], VITAL_INDEX["diastolic"]]
                add_v += [
                    routine.systolic + sig.systolic_offset * scale + rng.normal(0, 4.0),
                    routine.diastolic + sig.diastolic_offset * scale + rng.normal(0, 3.0),
                ]
        inside = (v_times >= ep.start) & (v_times < ep.end)
        offsets = np.select(
            [v_kinds == VITAL_INDEX["pulse"], v_kinds == VITAL_INDEX["systolic"]],
            [sig.pulse_offset, sig.systolic_offset],
            sig.diastolic_offset,
        )
        v_vals = np.where(inside, v_vals + offsets, v_vals)

    times = np.concatenate(new_t)
    chans = np.concatenate(new_c)
    order = np.argsort(times, kind="stable")
    out_events = EventStream(events.participant_id, times[order], chans[order])

    out_vitals = _sorted_vitals(
        vitals.participant_id,
        np.concatenate([v_times, np.array(add_t, dtype=np.int64)]),
        np.concatenate([v_kinds, np.array(add_k, dtype=np.int8)]),
        np.concatenate([v_vals, np.rint(np.array(add_v, dtype=float))]),
    )
    return (out_events, out_vitals), episodes


# ---------------------------------------------------------------------------
# alert log


def _alert_window(raised_at: int) -> tuple[int, int]:
    # the six hours a derived sample set covers, ending with the alert's hour
    h = raised_at - raised_at % HOUR
    return h - 5 * HOUR, h + HOUR


def generate_alert_log(episodes: list[Episode], spec: CohortSpec) -> list[AgitationAlert]:
    """Alerts for all episodes plus false and unverified alerts elsewhere.

    True alerts are raised during the last hour of their episode. False and
    non-validated alerts are placed at least 12 hours away from any episode.
    Exactly ``round(late_fraction * n_validated)`` validated alerts take longer
    than three days to verify.
    """
    spec.validate()
    rng = _rng(spec.seed, _PURPOSE["alerts"])
    n_true = len(episodes)
    share_true, share_false, _ = spec.label_mix
    if n_true == 0 or share_true == 0:
        n_total = 0
    else:
        n_total = int(round(n_true / share_true))
    n_false = int(round(n_total * share_false))
    n_nv = max(0, n_total - n_true - n_false)

    by_pid: dict[str, list[Episode]] = {}
    for ep in episodes:
        by_pid.setdefault(ep.participant_id, []).append(ep)

    raw: list[tuple[str, int, str]] = []
    for ep in episodes:
        raw.append((ep.participant_id, ep.end - HOUR + int(rng.integers(0, HOUR)), "validated_true"))

    ids = spec.participant_ids()
    weights = _hour_weights()
    margin = 12 * HOUR
    for status, count in (("validated_false", n_false), ("not_validated", n_nv)):
        placed = 0
        while placed < count:
            pid = ids[int(rng.integers(len(ids)))]
            day = int(rng.integers(2, spec.days))
            hour = int(rng.choice(24, p=weights))
            t = spec.start_epoch + day * DAY + hour * HOUR + int(rng.integers(0, HOUR))
            lo, hi = _alert_window(t)
            if any(lo < ep.end + margin and ep.start - margin < hi for ep in by_pid.get(pid, ())):
                continue
            raw.append((pid, t, status))
            placed += 1

    raw.sort(key=lambda r: (r[0], r[1], r[2]))
    validated = [i for i, r in enumerate(raw) if r[2] != "not_validated"]
    n_late = int(round(spec.late_fraction * len(validated)))
    late = set(rng.choice(validated, size=n_late, replace=False).tolist()) if n_late else set()

    alerts = []
    for i, (pid, t, status) in enumerate(raw):
        validated_at = None
        if status != "not_validated":
            if i in late:
                latency = int(rng.integers(72 * HOUR + 1, 10 * DAY))
            else:
                latency = int(rng.integers(10 * 60, 60 * HOUR))
            validated_at = from_epoch(t + latency)
        alerts.append(AgitationAlert(f"a{i + 1:05d}", pid, from_epoch(t), status, validated_at))
    return alerts


# ---------------------------------------------------------------------------
# whole dataset


@dataclass
class Dataset:
    spec: CohortSpec
    participants: list[Participant]
    events: dict[str, EventStream]
    vitals: dict[str, VitalStream]
    alerts: list[AgitationAlert]
    episodes: list[Episode] = field(default_factory=list)


def generate_dataset(spec: CohortSpec) -> Dataset:
    participants = generate_cohort(spec)
    allocation = allocate_episodes(spec)
    events, vitals, episodes = {}, {}, []
    for p in participants:
        base = generate_event_stream(p, spec)
        (ev, vi), eps = inject_episodes(base, p, spec, allocation[p.participant_id])
        events[p.participant_id] = ev
        vitals[p.participant_id] = vi
        episodes.extend(eps)
        log.debug("%s: %d events, %d vitals, %d episodes", p.participant_id, len(ev), len(vi), len(eps))
    alerts = generate_alert_log(episodes, spec)
    return Dataset(spec, participants, events, vitals, alerts, episodes)
