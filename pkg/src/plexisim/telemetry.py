"""Telemetry ingestion, attack injection, and flexibility estimation.

Dataset rows carry site net power, ambient temperature, HVAC draw, and the
theoretical demand-response headroom, sampled every 30 minutes. Injection
attacks are additive at the core (attacked = original + delta); the
percent-based variants derive their deltas from the original readings.
Samples signed at ingestion can be re-verified later to flag any
post-signing mutation.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from enum import Enum
from typing import Callable, Optional, Sequence, Union

from .errors import ConfigurationError, IngestionError, ValidationError
from . import identity

CSV_HEADER = ["time", "net", "tamb", "hvac", "hvac_demand_res"]
SAMPLE_MINUTES = 30
SAMPLES_PER_DAY = 24 * 60 // SAMPLE_MINUTES

TARGET_FIELDS = ("net_kw", "tamb_c", "hvac_kw")


@dataclass(frozen=True)
class TelemetrySample:
    time: datetime
    net_kw: float
    tamb_c: float
    hvac_kw: float
    hvac_demand_res_kw: float


class AttackKind(Enum):
    FDI = "fdi"
    MADIOT = "madiot"


@dataclass(frozen=True)
class AttackProfile:
    kind: AttackKind
    target_field: str
    magnitude: float                     # percent of the original reading
    window: Optional[tuple] = None       # (start, end) sample indices


# ---------------------------------------------------------------------------
# Ingestion and synthesis
# ---------------------------------------------------------------------------

def load_dataset(path) -> list:
    """Parse and validate a telemetry CSV; errors carry the row number."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError("empty file") from None
        if header != CSV_HEADER:
            missing = [c for c in CSV_HEADER if c not in header]
            if missing:
                raise IngestionError(f"missing column {missing[0]!r}")
            raise IngestionError(f"header must be exactly {','.join(CSV_HEADER)}")
        series: list[TelemetrySample] = []
        stride = timedelta(minutes=SAMPLE_MINUTES)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise IngestionError("wrong column count", row=row_no)
            try:
                sample = TelemetrySample(
                    time=datetime.fromisoformat(row[0]),
                    net_kw=float(row[1]),
                    tamb_c=float(row[2]),
                    hvac_kw=float(row[3]),
                    hvac_demand_res_kw=float(row[4]),
                )
            except ValueError as exc:
                raise IngestionError(f"unparsable row: {exc}", row=row_no) from None
            if sample.hvac_kw < 0:
                raise IngestionError("hvac consumption cannot be negative", row=row_no)
            if series:
                if sample.time <= series[-1].time:
                    raise IngestionError("timestamps not strictly increasing", row=row_no)
                if sample.time - series[-1].time != stride:
                    raise IngestionError("stride is not 30 minutes", row=row_no)
            series.append(sample)
    return series


def write_dataset(path, series: Sequence[TelemetrySample]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for s in series:
            writer.writerow(
                [s.time.isoformat(), repr(s.net_kw), repr(s.tamb_c),
                 repr(s.hvac_kw), repr(s.hvac_demand_res_kw)]
            )


def generate_synthetic(
    days: int,
    seed: int = 0,
    start: Optional[datetime] = None,
    base_load_kw: float = 60.0,
    solar_peak_kw: float = 25.0,
) -> list:
    """Schema-identical synthetic series: diurnal HVAC cycle, seasonal tamb.

    Defaults keep net stay positive (rooftop generation below base load).
    """
    if days < 1:
        raise ValidationError("need at least one day")
    rng = random.Random(seed)
    start = start or datetime(2021, 1, 1)
    series = []
    for i in range(days * SAMPLES_PER_DAY):
        t = start + timedelta(minutes=SAMPLE_MINUTES * i)
        hour = t.hour + t.minute / 60.0
        day_of_year = t.timetuple().tm_yday
        seasonal = 6.0 * math.sin(2 * math.pi * (day_of_year - 15) / 365.0)
        diurnal = 5.0 * math.sin(2 * math.pi * (hour - 9) / 24.0)
        tamb = 20.0 + seasonal + diurnal + rng.uniform(-0.5, 0.5)
        # HVAC chases the deviation from the comfort band, office hours only.
        occupancy = 1.0 if 8 <= hour < 18 else 0.25
        hvac = occupancy * (8.0 + 2.2 * abs(tamb - 21.0)) + rng.uniform(0.0, 1.5)
        solar = solar_peak_kw * max(0.0, math.sin(math.pi * (hour - 6) / 12.0))
        net = base_load_kw + hvac - solar + rng.uniform(-2.0, 2.0)
        dr = 0.6 * hvac
        series.append(
            TelemetrySample(
                time=t,
                net_kw=round(net, 3),
                tamb_c=round(tamb, 3),
                hvac_kw=round(hvac, 3),
                hvac_demand_res_kw=round(dr, 3),
            )
        )
    return series


# ---------------------------------------------------------------------------
# Attack injection
# ---------------------------------------------------------------------------

def _check_window(series: Sequence, window: Optional[tuple]) -> tuple:
    if window is None:
        return (0, len(series))
    lo, hi = window
    if not (0 <= lo <= hi <= len(series)):
        raise ValidationError(f"window {window} outside series bounds")
    return (lo, hi)


def inject_additive(
    series: Sequence[TelemetrySample],
    deltas: Sequence[float],
    target_field: str,
    window: Optional[tuple] = None,
) -> list:
    """Additive attack primitive; the input series is never mutated."""
    if target_field not in TARGET_FIELDS:
        raise ValidationError(f"cannot attack field {target_field!r}")
    lo, hi = _check_window(series, window)
    if len(deltas) != hi - lo:
        raise ValidationError("need one delta per attacked sample")
    out = list(series)
    for offset, i in enumerate(range(lo, hi)):
        s = out[i]
        out[i] = replace(s, **{target_field: getattr(s, target_field) + deltas[offset]})
    return out


def fdi_inject(
    series: Sequence[TelemetrySample],
    fraction: float,
    target_field: str = "net_kw",
    window: Optional[tuple] = None,
) -> list:
    """Scale the target readings up by ``fraction`` percent of themselves."""
    if not 0 < fraction <= 100:
        raise ValidationError("fraction must be in (0, 100]")
    lo, hi = _check_window(series, window)
    deltas = [getattr(series[i], target_field) * fraction / 100.0 for i in range(lo, hi)]
    return inject_additive(series, deltas, target_field, (lo, hi))


def madiot_inject(
    series: Sequence[TelemetrySample],
    fraction: float,
    target_field: str = "tamb_c",
    window: Optional[tuple] = None,
) -> list:
    """Synchronized sensor manipulation: readings scaled by (1 + f/100)."""
    return fdi_inject(series, fraction, target_field, window)


def apply_profile(series: Sequence[TelemetrySample], profile: AttackProfile) -> list:
    """Run the injection described by an attack profile."""
    inject = fdi_inject if profile.kind is AttackKind.FDI else madiot_inject
    return inject(series, profile.magnitude, profile.target_field, profile.window)


def madiot_gain(deltas: Sequence[float], t: int) -> float:
    """Cumulative gain after the first ``t`` attack steps."""
    if not 0 <= t <= len(deltas):
        raise IndexError(f"t={t} outside 0..{len(deltas)}")
    return sum(deltas[:t])


def per_step_deltas(
    original: Sequence[TelemetrySample],
    attacked: Sequence[TelemetrySample],
    target_field: str,
) -> list:
    if len(original) != len(attacked):
        raise ValidationError("series lengths differ")
    return [
        getattr(a, target_field) - getattr(o, target_field)
        for o, a in zip(original, attacked)
    ]


# ---------------------------------------------------------------------------
# Flexibility estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimatorConfig:
    """Linear headroom model: a*net + b*hvac - c*(tamb - t_ref), floored at 0."""

    a: float = 0.05
    b: float = 0.5
    c: float = 1.0
    t_ref: float = 22.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0 or self.c <= 0:
            raise ConfigurationError("estimator coefficients must be positive")


def estimate_flexibility(
    series: Sequence[TelemetrySample],
    estimator: Union[EstimatorConfig, Callable[[TelemetrySample], float], None] = None,
) -> list:
    """Per-sample demand-flexibility estimate in kW.

    Pass an EstimatorConfig for the default linear model or any callable
    mapping a sample to kW for an alternative methodology.
    """
    if estimator is None:
        estimator = EstimatorConfig()
    if isinstance(estimator, EstimatorConfig):
        cfg = estimator

        def estimator(s: TelemetrySample) -> float:
            return max(0.0, cfg.a * s.net_kw + cfg.b * s.hvac_kw - cfg.c * (s.tamb_c - cfg.t_ref))

    return [float(estimator(s)) for s in series]


# ---------------------------------------------------------------------------
# Stream signing and tamper detection
# ---------------------------------------------------------------------------

def canonical_sample_bytes(sample: TelemetrySample) -> bytes:
    return json.dumps(
        {
            "time": sample.time.isoformat(),
            "net": sample.net_kw,
            "tamb": sample.tamb_c,
            "hvac": sample.hvac_kw,
            "hvac_demand_res": sample.hvac_demand_res_kw,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")


def sign_stream(
    series: Sequence[TelemetrySample],
    key: identity.SigningKey,
    sim_time: int = 0,
) -> list:
    """Sign every sample individually at ingestion."""
    return [identity.sign(canonical_sample_bytes(s), key, sim_time) for s in series]


def detect_tamper(
    series: Sequence[TelemetrySample],
    envelopes: Sequence[identity.SignedEnvelope],
    registry,
) -> list:
    """Indices whose current bytes no longer verify under their envelope.

    Signatures are checked against the sample as stored now, so any
    post-signing mutation of a signed field flips its index to flagged.
    Mutations made before signing are invisible by construction.
    """
    if len(series) != len(envelopes):
        raise ValidationError("series and envelope counts differ")
    flagged = []
    for i, (sample, env) in enumerate(zip(series, envelopes)):
        token = registry.query(env.token_id)
        if token is None or token.constraints.revoked:
            flagged.append(i)
            continue
        if not identity.signature_valid(
            token.public_key, canonical_sample_bytes(sample), env.signature
        ):
            flagged.append(i)
    return flagged
