"""Attack control loop: servo sweep, repeat strategy, delivery model.

The transmitter sweeps its servo in fixed angular steps, fires the mute
and payload commands several times at each bearing, then runs a hotspot
feedback round to learn whether the victim executed them.  Command
delivery is probabilistic, driven by the received ultrasound level at
the victim (free-field propagation from the 142 dB / 0.1 m source
optimum), the beam offset, and ambient noise.  Shipped device profiles
are calibrated against published behavior of the reference build:
50 % delivery at the profile's rated range and roughly 76 % at 8.85 m
for the average device.
"""

import json
import math
from dataclasses import asdict, dataclass

from .acoustics import DEFAULT_AIR_ALPHA_DB_PER_M, propagate_spl
from .feedback import (AbruptFilterParams, CommandKind, FeedbackOutcome,
                       feedback_round, make_command, restore)


@dataclass(frozen=True)
class AttackConfig:
    """Attacker-side knobs for one session."""

    angle_start_deg: float = 0.0
    angle_end_deg: float = 180.0
    angle_step_deg: float = 12.0
    repeats_per_command: int = 5
    window_s: float = 10.0
    distance_m: float = 8.85
    noise_db: float = 55.0
    device_profile: str = "average"

    def __post_init__(self):
        if self.angle_step_deg <= 0:
            raise ValueError(f"angle_step_deg must be > 0, got {self.angle_step_deg}")
        if self.angle_end_deg < self.angle_start_deg:
            raise ValueError("angle_end_deg must be >= angle_start_deg")
        if self.repeats_per_command < 1:
            raise ValueError("repeats_per_command must be >= 1")
        if self.window_s < 0:
            raise ValueError("window_s must be >= 0")
        if self.distance_m <= 0:
            raise ValueError("distance_m must be > 0")


def load_attack_config(path) -> AttackConfig:
    """Strict JSON loader for :class:`AttackConfig` (unknown keys rejected)."""
    with open(path) as fh:
        data = json.load(fh)
    known = set(AttackConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return AttackConfig(**data)


def angle_sweep(config: AttackConfig) -> list[float]:
    """Servo bearings: start, start+step, ... never exceeding end.

    The end angle is included only when it falls on the step grid.
    """
    span = config.angle_end_deg - config.angle_start_deg
    count = int(math.floor(span / config.angle_step_deg + 1e-9)) + 1
    return [config.angle_start_deg + k * config.angle_step_deg for k in range(count)]


def repeated_success_probability(p_single: float, n: int) -> float:
    """Probability that at least one of ``n`` independent tries lands:
    ``1 - (1 - p)**n``."""
    if not 0.0 <= p_single <= 1.0:
        raise ValueError(f"p_single must be in [0, 1], got {p_single}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return 1.0 - (1.0 - p_single) ** n


@dataclass(frozen=True)
class DeviceProfile:
    """Per-device delivery calibration.

    ``rsa_m`` is the range at which on-axis delivery probability crosses
    50 % in quiet (the logistic midpoint); ``logistic_scale_db`` sets how
    sharply delivery falls off with received level.  ``fixed_p`` bypasses
    the acoustic model entirely (useful for scripted calibration runs).
    """

    name: str = "average"
    rsa_m: float = 9.25
    logistic_scale_db: float = 0.8
    base_rate: float = 1.0
    beam_half_width_deg: float = 6.0
    source_spl_db: float = 142.0
    source_ref_m: float = 0.1
    air_alpha_db_per_m: float = DEFAULT_AIR_ALPHA_DB_PER_M
    noise_ref_db: float = 55.0
    noise_slope_db_per_db: float = 0.19
    fixed_p: float | None = None

    @property
    def required_spl_db(self) -> float:
        """Received level at which delivery probability is exactly 50 %."""
        return propagate_spl(self.source_spl_db, self.source_ref_m, self.rsa_m,
                             self.air_alpha_db_per_m)


PROFILES = {
    "average": DeviceProfile(name="average"),
    # Most sensitive handset tested in the reference build: ~90 % at 9.2 m.
    "iphone_14_pro": DeviceProfile(name="iphone_14_pro", rsa_m=10.0),
}


def resolve_profile(profile) -> DeviceProfile:
    if isinstance(profile, DeviceProfile):
        return profile
    try:
        return PROFILES[profile]
    except KeyError:
        raise ValueError(f"unknown device profile {profile!r}; "
                         f"known: {sorted(PROFILES)}") from None


def beam_factor(angle_offset_deg: float, half_width_deg: float = 6.0) -> float:
    """Smooth beam rolloff: raised cosine inside +-half_width, zero beyond."""
    a = abs(angle_offset_deg) / half_width_deg
    if a >= 1.0:
        return 0.0
    return math.cos(0.5 * math.pi * a) ** 2


def delivery_probability(distance_m: float, angle_offset_deg: float,
                         noise_db: float, profile="average",
                         extra_penalty_db: float = 0.0) -> float:
    """Probability that one command transmission is executed by the device.

    ``base_rate * logistic(margin / scale) * beam_factor(offset)`` where
    the margin is the received level (free-field propagation from the
    source) minus the profile's required level, raised by the noise
    penalty above the reference noise floor and by any extra penalty
    (handling motion, pocket occlusion, wind).  Monotone non-increasing
    in distance, |offset|, and noise.
    """
    if distance_m <= 0:
        raise ValueError("distance_m must be > 0")
    prof = resolve_profile(profile)
    if prof.fixed_p is not None:
        return float(prof.fixed_p)
    received = propagate_spl(prof.source_spl_db, prof.source_ref_m,
                             max(distance_m, prof.source_ref_m), prof.air_alpha_db_per_m)
    required = (prof.required_spl_db
                + prof.noise_slope_db_per_db * max(0.0, noise_db - prof.noise_ref_db)
                + extra_penalty_db)
    margin = (received - required) / prof.logistic_scale_db
    p = prof.base_rate * (1.0 / (1.0 + math.exp(-margin))) * beam_factor(
        angle_offset_deg, prof.beam_half_width_deg)
    return min(max(p, 0.0), 1.0)


@dataclass
class AngleResult:
    angle_deg: float
    commands_sent: int
    t_start_s: float
    t_end_s: float
    outcome: FeedbackOutcome


@dataclass
class AttackReport:
    """Everything one session did, serializable byte-for-byte."""

    seed: int | None
    config: AttackConfig
    success: bool
    target_bssids: tuple
    angle_results: list
    command_log: list  # {"t_s", "kind", "angle_deg"}
    restore_actions: list
    aborted: bool
    total_sim_s: float

    def to_dict(self) -> dict:
        return {
            "schema": "attack-report/1",
            "seed": self.seed,
            "success": self.success,
            "aborted": self.aborted,
            "target_bssids": sorted(self.target_bssids),
            "config": asdict(self.config),
            "angles": [
                {
                    "angle_deg": ar.angle_deg,
                    "commands_sent": ar.commands_sent,
                    "t_start_s": ar.t_start_s,
                    "t_end_s": ar.t_end_s,
                    "feedback": ar.outcome.to_dict(),
                }
                for ar in self.angle_results
            ],
            "command_log": self.command_log,
            "restore_actions": self.restore_actions,
            "total_sim_s": self.total_sim_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


class _LoggingTx:
    """Wraps the environment sink, recording (t, kind, angle) per send."""

    def __init__(self, env):
        self._env = env
        self.log: list[dict] = []
        self.angle_deg = 0.0

    def send(self, command) -> None:
        self._env.send(command)
        self.log.append({"t_s": getattr(self._env, "now", 0.0),
                         "kind": command.kind.value,
                         "angle_deg": self.angle_deg})


def run_attack(config: AttackConfig, env, seed: int | None = None,
               filter_params: AbruptFilterParams | None = None) -> AttackReport:
    """Execute the full attack loop against an environment handle.

    Per bearing: the mute command and then the payload command are each
    sent ``repeats_per_command`` times, followed by one feedback round
    (feedback commands are not repeated; the round's own structure covers
    them).  The sweep stops at the first confirmed bearing, after which
    the restore sequence runs.  The environment must expose
    ``reset(seed)``, ``set_angle(deg)``, ``send(cmd)``, ``scan()``,
    ``wait(s)`` and ``now``.  Identical (config, environment script,
    seed) yield identical reports.
    """
    env.reset(seed)
    filter_params = filter_params or AbruptFilterParams()
    tx = _LoggingTx(env)
    angle_results: list[AngleResult] = []
    restore_actions: list[str] = []
    success = False
    aborted = False
    targets: tuple = ()

    for angle in angle_sweep(config):
        env.set_angle(angle)
        tx.angle_deg = angle
        t_start = env.now
        sent_before = len(tx.log)
        for _ in range(config.repeats_per_command):
            tx.send(make_command(CommandKind.MUTE))
        for _ in range(config.repeats_per_command):
            tx.send(make_command(CommandKind.ATTACK))
        outcome = feedback_round(env, tx, config.window_s, filter_params)
        angle_results.append(AngleResult(angle, len(tx.log) - sent_before,
                                         t_start, env.now, outcome))
        if outcome.aborted:
            aborted = True
            break
        if outcome.success:
            success = True
            targets = tuple(sorted(outcome.target_ids))
            restore_actions = restore(tx, outcome, outcome.lists["L1"])
            break

    return AttackReport(seed=seed, config=config, success=success,
                        target_bssids=targets, angle_results=angle_results,
                        command_log=tx.log, restore_actions=restore_actions,
                        aborted=aborted, total_sim_s=env.now)
