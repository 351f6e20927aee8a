"""Deterministic synthetic-trial generator.

Stands in for a private human dataset: each trial walks a locomotion
paradigm, laying down a gait timeline on the 40 Hz pressure grid and
synthesizing 8-channel sEMG as band-limited noise amplitude-modulated by a
mode-specific, gait-phase-locked envelope. Mode boundaries are placed
exactly at the critical gait event of each transition, and the generator
keeps a closed-form event ledger (accounting for the linear upsampling and
the 0.5 contact threshold) that downstream detection must reproduce.

Envelopes crossfade linearly over the 500 ms before each boundary, so
windows shortly before a transition genuinely carry the upcoming mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sps

from .modes import (
    BACK_STEP_TASK,
    MAIN_TASK,
    MUSCLE_GROUPS,
    MUSCLE_NAMES,
    SIDE_STEP_TASK,
    GaitEventKind,
    LocomotionMode,
    TransitionKind,
)
from .recording import (
    EmgRecording,
    ModeAnnotation,
    PressureRecording,
    Segment,
    Trial,
    TransitionEvent,
    ValidationError,
)

FS = 1200
PRESSURE_STEP = 30          # 1200 Hz samples per 40 Hz pressure sample
STANCE_FRACTION = 0.6
CROSSFADE_SAMPLES = 600     # 500 ms at 1200 Hz
MODULATION_DEPTH = 0.25
HEEL_SCALE = 2.0            # exact binary scale factors keep thresholding exact
TOE_SCALE = 0.5
CARRIER_BAND = (20.0, 450.0)

# Mean activation level per muscle [BF, SM, MG, LG, VM, VL, RF, TA] and mode.
DEFAULT_TEMPLATES: dict[LocomotionMode, tuple[float, ...]] = {
    LocomotionMode.ST: (0.08, 0.07, 0.06, 0.06, 0.08, 0.08, 0.07, 0.10),
    LocomotionMode.O:  (0.50, 0.45, 0.40, 0.35, 0.55, 0.50, 0.55, 0.65),
    LocomotionMode.W:  (0.35, 0.30, 0.45, 0.40, 0.35, 0.35, 0.30, 0.50),
    LocomotionMode.SA: (0.55, 0.50, 0.65, 0.60, 0.75, 0.70, 0.65, 0.45),
    LocomotionMode.SD: (0.45, 0.40, 0.55, 0.50, 0.60, 0.65, 0.50, 0.60),
    LocomotionMode.RA: (0.50, 0.45, 0.60, 0.55, 0.65, 0.60, 0.55, 0.55),
    LocomotionMode.RD: (0.40, 0.35, 0.50, 0.45, 0.50, 0.45, 0.40, 0.62),
    LocomotionMode.BS: (0.60, 0.55, 0.35, 0.30, 0.40, 0.38, 0.45, 0.70),
    LocomotionMode.SS: (0.55, 0.60, 0.48, 0.52, 0.45, 0.55, 0.35, 0.40),
}

# Gait-phase offset per muscle, by leg region (antagonists out of phase).
_GROUP_PHASE = {"UF": 0.0, "UB": np.pi, "LF": 0.5 * np.pi, "LB": 1.5 * np.pi}
CHANNEL_PHASES = tuple(
    next(_GROUP_PHASE[g] for g, members in MUSCLE_GROUPS.items() if name in members)
    for name in MUSCLE_NAMES
)

__all__ = ["SynthConfig", "TrialPlan", "plan_timeline", "generate_trial", "generate_dataset"]


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic generator; identical configs give bit-identical trials."""

    seed: int = 0
    gait_cycle_ms: float = 1100.0
    steps_per_mode: int = 4
    activation_templates: dict[LocomotionMode, tuple[float, ...]] = field(
        default_factory=lambda: dict(DEFAULT_TEMPLATES)
    )
    noise_sd: float = 0.1        # additive noise floor, fraction of mean activation
    snr_variability: float = 0.0  # per-channel trial gain spread, fraction
    inject_hum: bool = False      # add a 50 Hz sinusoid to exercise the notch
    subject_id: str = "synth01"

    def __post_init__(self) -> None:
        if self.gait_cycle_ms < 300:
            raise ValidationError("gait_cycle_ms too short (need >= 300 ms)")
        if self.steps_per_mode < 2:
            raise ValidationError("steps_per_mode must be >= 2")
        if self.noise_sd < 0 or self.snr_variability < 0:
            raise ValidationError("noise fractions must be nonnegative")
        templates = self.activation_templates
        if set(templates) != set(LocomotionMode):
            raise ValidationError("activation_templates must cover all 9 modes")
        vectors = {}
        for mode, vec in templates.items():
            arr = tuple(float(v) for v in vec)
            if len(arr) != len(MUSCLE_NAMES):
                raise ValidationError(f"template for {mode.name} must have 8 entries")
            if any(not 0.0 <= v <= 1.0 for v in arr):
                raise ValidationError(f"template for {mode.name} outside [0, 1]")
            if arr in vectors.values():
                raise ValidationError(f"degenerate template: {mode.name} duplicates another mode")
            vectors[mode] = arr


@dataclass(frozen=True)
class TrialPlan:
    """Ground-truth timeline: the oracle downstream detection must reproduce."""

    modes: tuple[LocomotionMode, ...]
    n_pressure_samples: int
    n_samples: int                                   # at 1200 Hz
    contact_grid: np.ndarray                         # bool per pressure sample
    events: tuple[tuple[GaitEventKind, int], ...]    # ledger, 1200 Hz positions
    boundaries: tuple[tuple[int, GaitEventKind], ...]  # per mode junction
    segments: tuple[Segment, ...]
    phase_anchors: tuple[tuple[int, float] | None, ...]  # (anchor sample, phase0) per segment


def _ledger_position(grid_index: int, kind: GaitEventKind) -> int:
    """1200 Hz position where the upsampled, thresholded contact flips.

    ``grid_index`` is the first pressure sample of the new state. Linear
    interpolation crosses the 0.5 threshold mid-ramp: contact begins 15
    samples before a rising grid point and ends 14 samples before a falling
    one (the first sample strictly below threshold).
    """
    if kind is GaitEventKind.HC:
        return grid_index * PRESSURE_STEP - 15
    return grid_index * PRESSURE_STEP - 14


def plan_timeline(config: SynthConfig, modes) -> TrialPlan:
    """Lay out stance/swing actions for a paradigm on the pressure grid."""
    modes = tuple(modes)
    if not modes:
        raise ValidationError("empty paradigm")
    if modes[0] is not LocomotionMode.ST:
        raise ValidationError("paradigm must start from standing")
    for a, b in zip(modes, modes[1:]):
        if a is b:
            raise ValidationError(f"paradigm repeats mode {a.name}")

    cycle_p = int(round(config.gait_cycle_ms / 25.0))
    stance_p = int(round(STANCE_FRACTION * cycle_p))
    swing_p = cycle_p - stance_p
    stand_p = config.steps_per_mode * (cycle_p // 2)
    n_cycles = max(1, config.steps_per_mode // 2)
    tail_p = 24

    # (duration_p, contact) actions plus each segment's action span
    actions: list[tuple[int, bool]] = []
    seg_action_start: list[int] = []
    for i, mode in enumerate(modes):
        seg_action_start.append(len(actions))
        if mode is LocomotionMode.ST:
            actions.append((stand_p, True))
        else:
            if modes[i - 1] is LocomotionMode.ST:
                actions.append((swing_p, False))
                cycles = n_cycles - 1
            else:
                cycles = n_cycles
            for _ in range(cycles):
                actions.append((stance_p, True))
                actions.append((swing_p, False))
            if i + 1 == len(modes):
                actions.append((tail_p, True))

    starts_p = np.concatenate([[0], np.cumsum([d for d, _ in actions])])
    total_p = int(starts_p[-1])
    contact_grid = np.zeros(total_p, dtype=bool)
    for (dur, on), start in zip(actions, starts_p):
        if on:
            contact_grid[int(start):int(start) + dur] = True

    events: list[tuple[GaitEventKind, int]] = []
    for k in range(1, len(actions)):
        if actions[k][1] != actions[k - 1][1]:
            kind = GaitEventKind.HC if actions[k][1] else GaitEventKind.TO
            events.append((kind, _ledger_position(int(starts_p[k]), kind)))

    n_samples = total_p * PRESSURE_STEP
    boundaries: list[tuple[int, GaitEventKind]] = []
    for i in range(1, len(modes)):
        g = int(starts_p[seg_action_start[i]])
        kind = GaitEventKind.TO if modes[i - 1] is LocomotionMode.ST else GaitEventKind.HC
        boundaries.append((_ledger_position(g, kind), kind))

    cuts = [0] + [b for b, _ in boundaries] + [n_samples]
    segments = tuple(Segment(m, cuts[i], cuts[i + 1]) for i, m in enumerate(modes))

    cycle_1200 = cycle_p * PRESSURE_STEP
    anchors: list[tuple[int, float] | None] = []
    for i, mode in enumerate(modes):
        if mode is LocomotionMode.ST:
            anchors.append(None)
        else:
            entry, entry_kind = (0, GaitEventKind.HC) if i == 0 else boundaries[i - 1]
            phase0 = STANCE_FRACTION if entry_kind is GaitEventKind.TO else 0.0
            anchors.append((entry, phase0))
    _ = cycle_1200

    return TrialPlan(
        modes=modes,
        n_pressure_samples=total_p,
        n_samples=n_samples,
        contact_grid=contact_grid,
        events=tuple(events),
        boundaries=tuple(boundaries),
        segments=segments,
        phase_anchors=tuple(anchors),
    )


def _segment_envelope(
    plan: TrialPlan,
    config: SynthConfig,
    seg_index: int,
    lo: int,
    hi: int,
    base: np.ndarray,
) -> np.ndarray:
    """Envelope of segment ``seg_index`` evaluated over samples [lo, hi)."""
    mode = plan.modes[seg_index]
    level = base[int(mode)]
    anchor = plan.phase_anchors[seg_index]
    t = np.arange(lo, hi, dtype=np.float64)[:, None]
    if anchor is None:
        return np.broadcast_to(level, (hi - lo, len(MUSCLE_NAMES))).copy()
    cycle = int(round(config.gait_cycle_ms / 25.0)) * PRESSURE_STEP
    theta = 2 * np.pi * ((t - anchor[0]) / cycle + anchor[1])
    phases = np.asarray(CHANNEL_PHASES, dtype=np.float64)[None, :]
    return level * (1.0 + MODULATION_DEPTH * np.sin(theta + phases))


def _build_envelope(plan: TrialPlan, config: SynthConfig) -> np.ndarray:
    base = np.array(
        [config.activation_templates[LocomotionMode(i)] for i in range(len(LocomotionMode))],
        dtype=np.float64,
    )
    env = np.empty((plan.n_samples, len(MUSCLE_NAMES)), dtype=np.float64)
    for i, seg in enumerate(plan.segments):
        env[seg.start:seg.end] = _segment_envelope(plan, config, i, seg.start, seg.end, base)
    # linear crossfade into the next segment's envelope before each boundary
    for i, (b, _) in enumerate(plan.boundaries):
        lo = max(0, b - CROSSFADE_SAMPLES)
        if lo >= b:
            continue
        w = ((np.arange(lo, b) - (b - CROSSFADE_SAMPLES)) / CROSSFADE_SAMPLES)[:, None]
        nxt = _segment_envelope(plan, config, i + 1, lo, b, base)
        env[lo:b] = (1.0 - w) * env[lo:b] + w * nxt
    return env


def _bandlimited_noise(rng: np.random.Generator, n: int, channels: int) -> np.ndarray:
    """Unit-variance noise band-limited to the sEMG carrier band."""
    sos = sps.butter(4, CARRIER_BAND, btype="bandpass", output="sos", fs=FS)
    noise = sps.sosfilt(sos, rng.standard_normal((n, channels)), axis=0)
    return noise / noise.std(axis=0)


def generate_trial(
    config: SynthConfig,
    paradigm,
    trial_id: str = "synth-trial",
) -> Trial:
    """Synthesize one trial walking the given mode sequence."""
    plan = plan_timeline(config, paradigm)
    rng = np.random.default_rng(config.seed)

    env = _build_envelope(plan, config)
    carrier = _bandlimited_noise(rng, plan.n_samples, len(MUSCLE_NAMES))
    emg = env * carrier
    mean_level = float(
        np.mean([v for vec in config.activation_templates.values() for v in vec])
    )
    if config.noise_sd > 0:
        emg = emg + config.noise_sd * mean_level * _bandlimited_noise(
            rng, plan.n_samples, len(MUSCLE_NAMES)
        )
    if config.snr_variability > 0:
        emg = emg * (1.0 + config.snr_variability * rng.uniform(-1.0, 1.0, len(MUSCLE_NAMES)))
    if config.inject_hum:
        t = np.arange(plan.n_samples)[:, None] / FS
        hum_phase = rng.uniform(0, 2 * np.pi, len(MUSCLE_NAMES))[None, :]
        emg = emg + 0.5 * mean_level * np.sin(2 * np.pi * 50.0 * t + hum_phase)

    heel = np.where(plan.contact_grid, HEEL_SCALE, 0.0).astype(np.float32)
    toe = np.where(plan.contact_grid, TOE_SCALE, 0.0).astype(np.float32)

    transitions = []
    for (b, edge_kind), (prev, nxt) in zip(plan.boundaries, zip(plan.modes, plan.modes[1:])):
        kind = TransitionKind.from_modes(prev, nxt)
        if kind is None:
            continue
        assert kind.event is edge_kind, f"{kind} planned at a {edge_kind} edge"
        transitions.append(TransitionEvent(kind, b, kind.event))

    meta = {
        "generator": "synth",
        "seed": config.seed,
        "events": [[k.value, pos] for k, pos in plan.events],
        "n_steps": sum(1 for k, _ in plan.events if k is GaitEventKind.HC),
        "gait_cycle_ms": config.gait_cycle_ms,
        "noise_sd": config.noise_sd,
    }
    emg_rec = EmgRecording(
        subject_id=config.subject_id,
        trial_id=trial_id,
        samples=emg.astype(np.float32),
    )
    pressure = PressureRecording(heel=heel, toe=toe)
    return Trial(emg_rec, pressure, ModeAnnotation(plan.segments), tuple(transitions), meta=meta)


TASK_PARADIGMS = {
    "main": MAIN_TASK,
    "backstep": BACK_STEP_TASK,
    "sidestep": SIDE_STEP_TASK,
}


def generate_dataset(config: SynthConfig, n_trials_per_task: int) -> list[Trial]:
    """Independently seeded trials: n of the main course plus n each of the
    back-stepping and side-stepping tasks."""
    if n_trials_per_task < 5:
        raise ValidationError("need at least 5 trials per task for five-fold splits")
    seed_rng = np.random.default_rng(config.seed)
    trials = []
    for task, paradigm in TASK_PARADIGMS.items():
        for i in range(n_trials_per_task):
            child = replace(config, seed=int(seed_rng.integers(0, 2**31 - 1)))
            trials.append(generate_trial(child, paradigm, trial_id=f"{task}-{i:02d}"))
    return trials
