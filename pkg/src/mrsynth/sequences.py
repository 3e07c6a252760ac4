"""Pulse sequences as ordered event lists, with canonical builders and a file format.

A sequence is a flat list of events (RF pulse, delay, gradient, ADC) executed
strictly one after another, repeated ``n_repetitions`` times.  Units are fixed:
durations in ms, angles in degrees, gradient amplitudes in mT/m.

RF pulses carry a ``refocus`` flag.  Builders set it on the 180 degree pulses
of echo trains; the simulation engine treats flagged pulses as ideal
refocusing (transverse phase reversal about the pulse axis, longitudinal
magnetization untouched), which is what makes echo amplitudes follow the
closed-form contrast equations exactly.  Unflagged pulses are full rotations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

from .errors import InvalidTimingError, SequenceSemanticError, SequenceSyntaxError

#: default ADC window per sample, ms; a dyadic value keeps event-time sums exact
DEFAULT_ADC_DWELL = 0.0078125

GRADIENT_AXES = ("x", "y")


@dataclass(frozen=True)
class RfPulse:
    flip: float            # degrees
    phase: float = 0.0     # degrees, axis angle in the transverse plane
    duration: float = 0.0  # ms; 0 means instantaneous hard pulse
    refocus: bool = False

    def _check(self):
        if not 0.0 <= self.flip <= 360.0:
            raise SequenceSemanticError(f"flip {self.flip} outside [0, 360]")
        if self.duration < 0:
            raise SequenceSemanticError(f"negative duration {self.duration}")


@dataclass(frozen=True)
class Delay:
    duration: float  # ms

    def _check(self):
        if self.duration < 0:
            raise SequenceSemanticError(f"negative duration {self.duration}")


@dataclass(frozen=True)
class Gradient:
    axis: str          # "x" or "y"
    amplitude: float   # mT/m
    duration: float    # ms

    def _check(self):
        if self.axis not in GRADIENT_AXES:
            raise SequenceSemanticError(f"gradient axis must be one of {GRADIENT_AXES}, got {self.axis!r}")
        if self.duration < 0:
            raise SequenceSemanticError(f"negative duration {self.duration}")


@dataclass(frozen=True)
class Adc:
    n_samples: int
    dwell: float  # ms per sample; the event lasts n_samples * dwell

    def _check(self):
        if self.n_samples < 1:
            raise SequenceSemanticError(f"ADC needs at least 1 sample, got {self.n_samples}")
        if self.dwell <= 0:
            raise SequenceSemanticError(f"ADC dwell must be > 0, got {self.dwell}")


SequenceEvent = Union[RfPulse, Delay, Gradient, Adc]

_EVENT_TAGS = {RfPulse: "rf_pulse", Delay: "delay", Gradient: "gradient", Adc: "adc"}
_TAG_TYPES = {v: k for k, v in _EVENT_TAGS.items()}
_EVENT_FIELDS = {
    "rf_pulse": ("flip", "phase", "duration", "refocus"),
    "delay": ("duration",),
    "gradient": ("axis", "amplitude", "duration"),
    "adc": ("n_samples", "dwell"),
}


def _event_duration(event: SequenceEvent) -> float:
    if isinstance(event, Adc):
        return event.n_samples * event.dwell
    return event.duration


@dataclass(frozen=True)
class Sequence:
    """Ordered event list plus repetition count.  Immutable once built."""

    events: tuple[SequenceEvent, ...]
    n_repetitions: int = 1
    name: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if self.n_repetitions < 1:
            raise SequenceSemanticError(f"n_repetitions must be >= 1, got {self.n_repetitions}")
        for i, event in enumerate(self.events):
            try:
                event._check()
            except SequenceSemanticError as exc:
                raise SequenceSemanticError(f"event {i}: {exc}") from None

    @property
    def duration(self) -> float:
        """Duration of one repetition, ms."""
        return sum(_event_duration(e) for e in self.events)

    @property
    def tr(self) -> float:
        return self.duration

    @property
    def echo_times(self) -> tuple[float, ...]:
        """Start times of each ADC event within a repetition, ms."""
        times, now = [], 0.0
        for event in self.events:
            if isinstance(event, Adc):
                times.append(now)
            now += _event_duration(event)
        return tuple(times)

    @property
    def te(self) -> float | None:
        """Time of the first ADC sample within a repetition, ms."""
        times = self.echo_times
        return times[0] if times else None

    @property
    def n_samples_per_repetition(self) -> int:
        return sum(e.n_samples for e in self.events if isinstance(e, Adc))

    @property
    def n_samples(self) -> int:
        return self.n_samples_per_repetition * self.n_repetitions

    @property
    def has_adc(self) -> bool:
        return self.n_samples_per_repetition > 0


def build_spin_echo(te: float, tr: float, n_repetitions: int = 1,
                    adc_dwell: float = DEFAULT_ADC_DWELL) -> Sequence:
    """Single spin echo: 90x - te/2 - 180y - te/2 - sample - recovery.

    The echo is sampled at exactly ``te``; the trailing delay fills the
    repetition to ``tr``.
    """
    if te <= 0:
        raise InvalidTimingError(f"te must be > 0, got {te}")
    if te >= tr:
        raise InvalidTimingError(f"te ({te}) must be smaller than tr ({tr})")
    if te + adc_dwell > tr:
        raise InvalidTimingError(f"ADC window does not fit between te={te} and tr={tr}")
    events = (
        RfPulse(flip=90.0, phase=0.0),
        Delay(duration=te / 2),
        RfPulse(flip=180.0, phase=90.0, refocus=True),
        Delay(duration=te / 2),
        Adc(n_samples=1, dwell=adc_dwell),
        Delay(duration=tr - te - adc_dwell),
    )
    return Sequence(events=events, n_repetitions=n_repetitions, name="spin_echo",
                    metadata={"te_ms": te, "tr_ms": tr})


def build_multi_echo(echo_times: list[float], tr: float, n_repetitions: int = 1,
                     adc_dwell: float = DEFAULT_ADC_DWELL) -> Sequence:
    """CPMG-style echo train: one 90x excitation, then a refocusing 180y per echo.

    Each refocusing pulse sits midway between the previous echo (or the
    excitation) and the next echo, so an echo forms at every requested time.
    """
    echo_times = [float(t) for t in echo_times]
    if not echo_times:
        raise InvalidTimingError("echo_times must be non-empty")
    if any(t <= 0 for t in echo_times):
        raise InvalidTimingError(f"echo times must be > 0, got {echo_times}")
    if any(b <= a for a, b in zip(echo_times, echo_times[1:])):
        raise InvalidTimingError(f"echo times must be strictly increasing, got {echo_times}")
    if echo_times[-1] + adc_dwell > tr:
        raise InvalidTimingError(f"last echo {echo_times[-1]} does not fit in tr={tr}")

    events: list[SequenceEvent] = [RfPulse(flip=90.0, phase=0.0)]
    now = 0.0
    prev_echo = 0.0
    for tau in echo_times:
        pulse_at = (prev_echo + tau) / 2
        if pulse_at <= now:
            raise InvalidTimingError(f"echo spacing too tight around {tau} ms for the ADC window")
        events.append(Delay(duration=pulse_at - now))
        events.append(RfPulse(flip=180.0, phase=90.0, refocus=True))
        events.append(Delay(duration=tau - pulse_at))
        events.append(Adc(n_samples=1, dwell=adc_dwell))
        now = tau + adc_dwell
        prev_echo = tau
    events.append(Delay(duration=tr - now))
    return Sequence(events=tuple(events), n_repetitions=n_repetitions, name="multi_echo",
                    metadata={"echo_times_ms": list(echo_times), "tr_ms": tr})


def serialize_sequence(seq: Sequence) -> str:
    """Stable JSON text; serialize -> parse -> serialize is byte-identical."""
    events = []
    for event in seq.events:
        tag = _EVENT_TAGS[type(event)]
        obj = {"type": tag}
        for name in _EVENT_FIELDS[tag]:
            obj[name] = getattr(event, name)
        events.append(obj)
    doc = {
        "name": seq.name,
        "n_repetitions": seq.n_repetitions,
        "events": events,
        "metadata": seq.metadata,
    }
    return json.dumps(doc, indent=2) + "\n"


def parse_sequence(text: str) -> Sequence:
    """Parse and validate a sequence file.

    Syntax errors report line/column; semantic violations report the event
    index.  Unknown fields anywhere are rejected.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SequenceSyntaxError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise SequenceSemanticError("top level must be an object")
    allowed = {"name", "n_repetitions", "events", "metadata"}
    unknown = set(doc) - allowed
    if unknown:
        raise SequenceSemanticError(f"unknown top-level field(s): {sorted(unknown)}")
    if "events" not in doc or not isinstance(doc["events"], list):
        raise SequenceSemanticError("missing or non-array 'events' field")

    events: list[SequenceEvent] = []
    for i, obj in enumerate(doc["events"]):
        if not isinstance(obj, dict) or "type" not in obj:
            raise SequenceSemanticError(f"event {i}: not an object with a 'type' tag")
        tag = obj["type"]
        if tag not in _TAG_TYPES:
            raise SequenceSemanticError(f"event {i}: unknown event type {tag!r}")
        fields = _EVENT_FIELDS[tag]
        unknown = set(obj) - {"type", *fields}
        if unknown:
            raise SequenceSemanticError(f"event {i}: unknown field(s) {sorted(unknown)}")
        kwargs = {name: obj[name] for name in fields if name in obj}
        try:
            event = _TAG_TYPES[tag](**kwargs)
            event._check()
        except SequenceSemanticError as exc:
            raise SequenceSemanticError(f"event {i}: {exc}") from None
        except TypeError:
            missing = [name for name in fields if name not in obj]
            raise SequenceSemanticError(
                f"event {i}: missing or ill-typed field(s), required {list(fields)}, "
                f"absent {missing}") from None
        events.append(event)

    n_repetitions = doc.get("n_repetitions", 1)
    if not isinstance(n_repetitions, int) or isinstance(n_repetitions, bool):
        raise SequenceSemanticError(f"n_repetitions must be an integer, got {n_repetitions!r}")
    name = doc.get("name", "")
    if not isinstance(name, str):
        raise SequenceSemanticError(f"name must be a string, got {name!r}")
    metadata = doc.get("metadata", {})
    if not isinstance(metadata, dict):
        raise SequenceSemanticError(f"metadata must be an object, got {metadata!r}")
    return Sequence(events=tuple(events), n_repetitions=n_repetitions,
                    name=name, metadata=metadata)
