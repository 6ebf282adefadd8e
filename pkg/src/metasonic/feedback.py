"""Hotspot-scan feedback protocol.

Confirms command execution on the victim by watching for an
appearance - disappearance - reappearance of its Wi-Fi hotspot across
four scan snapshots (L1..L4), with set arithmetic on the snapshots and a
sudden-transition filter that discards gradually ramping bystander
signals.  Scan sources and command sinks are duck-typed: a scan source
provides ``scan() -> ScanSnapshot``, ``wait(seconds)`` and a ``now``
attribute; a command sink provides ``send(Command)``.  Two sources ship:
the scripted world in :mod:`metasonic.sim` and the scan-log replayer
below.
"""

import enum
import json
import math
from dataclasses import dataclass, field


class CommandKind(enum.Enum):
    MUTE = "mute"
    ATTACK = "attack"
    FEEDBACK1 = "feedback1"
    FEEDBACK2 = "feedback2"
    RESET = "reset"


#: Symbolic payload tokens; the simulator interprets tokens, no audio
#: rendering is involved on the control path.
DEFAULT_PAYLOADS = {
    CommandKind.MUTE: "set volume 1",
    CommandKind.ATTACK: "attack payload",
    CommandKind.FEEDBACK1: "turn on hotspot",
    CommandKind.FEEDBACK2: "turn off hotspot",
    CommandKind.RESET: "set volume 5",
}


@dataclass(frozen=True)
class Command:
    kind: CommandKind
    payload: str | None = None


def make_command(kind: CommandKind, payload: str | None = None) -> Command:
    return Command(kind, payload if payload is not None else DEFAULT_PAYLOADS[kind])


class ScanSourceExhausted(RuntimeError):
    """Raised when a scan source cannot produce another snapshot."""


@dataclass(frozen=True)
class HotspotRecord:
    ssid: str
    bssid: str
    rssi_dbm: float
    t: float

    def __post_init__(self):
        if not self.bssid:
            raise ValueError("bssid must be non-empty")
        if not math.isfinite(self.rssi_dbm):
            raise ValueError("rssi must be finite")


@dataclass(frozen=True)
class ScanSnapshot:
    t: float
    records: tuple

    def __post_init__(self):
        records = tuple(self.records)
        seen = set()
        for rec in records:
            if rec.bssid in seen:
                raise ValueError(f"duplicate bssid {rec.bssid!r} in snapshot at t={self.t}")
            seen.add(rec.bssid)
            if rec.t != self.t:
                raise ValueError(f"record timestamp {rec.t} != snapshot timestamp {self.t}")
        object.__setattr__(self, "records", records)

    def bssids(self) -> frozenset:
        return frozenset(rec.bssid for rec in self.records)

    def rssi_of(self, bssid: str) -> float | None:
        for rec in self.records:
            if rec.bssid == bssid:
                return rec.rssi_dbm
        return None


def snapshot_diff(a: ScanSnapshot, b: ScanSnapshot) -> frozenset:
    """Identifiers present in ``a`` and absent in ``b`` (keyed by bssid)."""
    return a.bssids() - b.bssids()


@dataclass(frozen=True)
class AbruptFilterParams:
    """Tuning of the sudden-transition filter.

    A candidate is victim-like (KEEP) when its transitions are abrupt: a
    jump of at least ``delta_db_threshold`` between consecutive
    observations, or appearing from absence straight at or above
    ``strong_floor_dbm`` with no weak sighting in the preceding
    ``ramp_window`` snapshots (symmetrically for vanishing).  Gradually
    ramping signals are bystanders and are dropped.
    """

    delta_db_threshold: float = 20.0
    ramp_window: int = 3
    strong_floor_dbm: float = -65.0


DEFAULT_FILTER_PARAMS = AbruptFilterParams()


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str


def abrupt_filter(history, candidate: str,
                  params: AbruptFilterParams = DEFAULT_FILTER_PARAMS) -> FilterDecision:
    """Classify one candidate against the scan history (ordered by time)."""
    series = [snap.rssi_of(candidate) for snap in history]
    observed = [(i, r) for i, r in enumerate(series) if r is not None]
    if not observed:
        return FilterDecision(False, "unseen")

    # Jumps between consecutive sightings (absent gaps skipped).
    for (_, r_prev), (_, r_next) in zip(observed, observed[1:]):
        if abs(r_next - r_prev) >= params.delta_db_threshold:
            return FilterDecision(True, f"rssi jump {abs(r_next - r_prev):.1f} dB")

    def weak_inside(window_indices):
        return any(series[j] is not None and series[j] < params.strong_floor_dbm
                   for j in window_indices)

    for i in range(1, len(series)):
        appeared = series[i - 1] is None and series[i] is not None
        if appeared and series[i] >= params.strong_floor_dbm:
            if not weak_inside(range(max(0, i - params.ramp_window), i)):
                return FilterDecision(True, f"sudden appearance at {series[i]:.1f} dBm")
        vanished = series[i - 1] is not None and series[i] is None
        if vanished and series[i - 1] >= params.strong_floor_dbm:
            if not weak_inside(range(i, min(len(series), i + params.ramp_window))):
                return FilterDecision(True, f"sudden disappearance from {series[i - 1]:.1f} dBm")

    return FilterDecision(False, "gradual transitions")


@dataclass
class FeedbackOutcome:
    """Result of one feedback round, with everything needed for export."""

    success: bool
    target_ids: frozenset = frozenset()
    lists: dict = field(default_factory=dict)  # "L1".."L4" -> ScanSnapshot
    filtered_ids: frozenset = frozenset()
    dif1: frozenset = frozenset()
    dif2: frozenset = frozenset()
    decisions: dict = field(default_factory=dict)  # bssid -> FilterDecision
    commands: list = field(default_factory=list)  # (t, kind value)
    aborted: bool = False
    reason: str = ""

    def to_dict(self) -> dict:
        def snap_dict(snap):
            return {
                "t": snap.t,
                "records": [
                    {"bssid": r.bssid, "ssid": r.ssid, "rssi": r.rssi_dbm, "t": r.t}
                    for r in sorted(snap.records, key=lambda r: r.bssid)
                ],
            }

        return {
            "schema": "feedback-outcome/1",
            "success": self.success,
            "aborted": self.aborted,
            "reason": self.reason,
            "target_bssids": sorted(self.target_ids),
            "filtered_bssids": sorted(self.filtered_ids),
            "dif1": sorted(self.dif1),
            "dif2": sorted(self.dif2),
            "lists": {name: snap_dict(snap) for name, snap in sorted(self.lists.items())},
            "filter_decisions": {
                b: {"keep": d.keep, "reason": d.reason}
                for b, d in sorted(self.decisions.items())
            },
            "commands": [{"t_s": t, "kind": kind} for t, kind in self.commands],
        }


def feedback_round(scanner, tx, window_s: float = 10.0,
                   params: AbruptFilterParams = DEFAULT_FILTER_PARAMS) -> FeedbackOutcome:
    """Run one appearance - disappearance - reappearance confirmation round.

    Sequence: record L1; send hotspot-on; wait the window; record L2; send
    hotspot-off; wait; record L3.  If L2 == L3 nothing reacted and the
    round fails early.  Otherwise send hotspot-on again; wait; record L4.
    Candidates are ``(L2 - L3) & (L4 - L3)`` surviving the
    sudden-transition filter; success means at least one survivor.  The
    same window is applied after every feedback command (the off command
    needs the settle time just as much as the on commands do).

    A scan source failure mid-round yields an aborted outcome retaining
    the partial lists; no feedback command is sent before L1 is captured.
    """
    if window_s < 0:
        raise ValueError("window_s must be >= 0")
    lists: dict = {}
    commands: list = []

    def send(kind: CommandKind):
        tx.send(make_command(kind))
        commands.append((getattr(scanner, "now", len(commands)), kind.value))

    try:
        lists["L1"] = scanner.scan()
        send(CommandKind.FEEDBACK1)
        scanner.wait(window_s)
        lists["L2"] = scanner.scan()
        send(CommandKind.FEEDBACK2)
        scanner.wait(window_s)
        lists["L3"] = scanner.scan()
        if lists["L2"].bssids() == lists["L3"].bssids():
            return FeedbackOutcome(success=False, lists=lists, commands=commands,
                                   reason="no disappearance between L2 and L3")
        send(CommandKind.FEEDBACK1)
        scanner.wait(window_s)
        lists["L4"] = scanner.scan()
    except ScanSourceExhausted as exc:
        return FeedbackOutcome(success=False, lists=lists, commands=commands,
                               aborted=True, reason=f"scan source exhausted: {exc}")

    dif1 = snapshot_diff(lists["L2"], lists["L3"])
    dif2 = snapshot_diff(lists["L4"], lists["L3"])
    candidates = dif1 & dif2
    history = [lists["L1"], lists["L2"], lists["L3"], lists["L4"]]
    decisions = {b: abrupt_filter(history, b, params) for b in sorted(candidates)}
    target = frozenset(b for b, d in decisions.items() if d.keep)
    filtered = frozenset(candidates) - target
    if target:
        reason = "reappearance confirmed"
    elif candidates:
        reason = "all candidates filtered as gradual"
    else:
        reason = "no reappearance"
    return FeedbackOutcome(success=bool(target), target_ids=target, lists=lists,
                           filtered_ids=filtered, dif1=frozenset(dif1), dif2=frozenset(dif2),
                           decisions=decisions, commands=commands, reason=reason)


def restore(tx, outcome: FeedbackOutcome, l1: ScanSnapshot) -> list[str]:
    """Return the victim to its pre-attack state after a confirmed round.

    Only acts when the net change since L1 is exactly the target list
    (hotspot still on, nothing else changed): sends hotspot-off and the
    volume reset, then the record-clearing action.  Otherwise logs a
    no-op with the reason.  Requires ``outcome.success``.
    """
    if not outcome.success:
        raise ValueError("restore requires a successful feedback outcome")
    l4 = outcome.lists.get("L4")
    if l4 is None:
        raise ValueError("outcome lacks an L4 snapshot")
    if snapshot_diff(l4, l1) == outcome.target_ids:
        tx.send(make_command(CommandKind.FEEDBACK2))
        tx.send(make_command(CommandKind.RESET))
        return ["feedback2", "reset", "clear_records"]
    return ["noop: state mismatch"]


class CommandRecorder:
    """Command sink that just logs what it is asked to send."""

    def __init__(self):
        self.sent: list[Command] = []

    def send(self, command: Command) -> None:
        self.sent.append(command)


class LogReplaySource:
    """Scan source backed by a recorded scan log.

    ``scan()`` returns the earliest snapshot at or after the cursor and
    advances the cursor to it; ``wait(s)`` moves the cursor forward.
    Raises :class:`ScanSourceExhausted` when the log runs out.
    """

    def __init__(self, snapshots):
        self._snapshots = sorted(snapshots, key=lambda s: s.t)
        self._index = 0
        self.now = 0.0

    def scan(self) -> ScanSnapshot:
        while self._index < len(self._snapshots) and self._snapshots[self._index].t < self.now:
            self._index += 1
        if self._index >= len(self._snapshots):
            raise ScanSourceExhausted(f"no snapshot at or after t={self.now:g} s")
        snap = self._snapshots[self._index]
        self._index += 1
        self.now = snap.t
        return snap

    def wait(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("wait must be >= 0")
        self.now += seconds


def load_scan_log(path) -> list[ScanSnapshot]:
    """Parse a JSON-lines scan log into snapshots.

    One object per record: ``{"t": seconds, "ssid": text, "bssid": text,
    "rssi": dBm}``; snapshot boundaries are inferred from equal ``t``
    values.
    """
    by_time: dict = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: bad JSON ({exc})") from None
            unknown = set(obj) - {"t", "ssid", "bssid", "rssi"}
            if unknown:
                raise ValueError(f"{path}:{line_no}: unknown keys {sorted(unknown)}")
            try:
                rec = HotspotRecord(ssid=str(obj["ssid"]), bssid=str(obj["bssid"]),
                                    rssi_dbm=float(obj["rssi"]), t=float(obj["t"]))
            except KeyError as exc:
                raise ValueError(f"{path}:{line_no}: missing field {exc}") from None
            by_time.setdefault(rec.t, []).append(rec)
    return [ScanSnapshot(t, tuple(records)) for t, records in sorted(by_time.items())]
