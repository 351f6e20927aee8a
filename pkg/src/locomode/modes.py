"""Locomotion-mode taxonomy, transition catalogue, and the recording paradigm.

The integer encoding of :class:`LocomotionMode` is the single source of truth
for labels and classifier output indices; it must never be reordered.
"""

from __future__ import annotations

from enum import Enum, IntEnum

__all__ = [
    "LocomotionMode",
    "GaitEventKind",
    "TransitionKind",
    "MUSCLE_NAMES",
    "MUSCLE_GROUPS",
    "CHANNEL_CONFIGS",
    "MAIN_TASK",
    "BACK_STEP_TASK",
    "SIDE_STEP_TASK",
    "TASK_NAMES",
    "task_modes",
    "mode_sequence_of_paradigm",
]


class LocomotionMode(IntEnum):
    """The nine locomotion modes, with their stable 0..8 encoding."""

    ST = 0  # standing
    O = 1   # obstacle crossing
    W = 2   # level walking
    SA = 3  # stair ascent
    SD = 4  # stair descent
    RA = 5  # ramp ascent
    RD = 6  # ramp descent
    BS = 7  # back stepping
    SS = 8  # side stepping


class GaitEventKind(Enum):
    """Plantar-pressure gait events of the leading leg."""

    HC = "HC"  # heel contact
    TO = "TO"  # toe off

    def __str__(self) -> str:
        return self.value


class TransitionKind(Enum):
    """The 15 tracked mode transitions.

    Each value carries its (source, target) mode pair. The critical gait
    event anchoring the transition point follows a single rule observed
    across the transition catalogue: transitions out of standing anchor at
    the leading leg's toe-off, all others at its heel contact.
    """

    ST_O = (LocomotionMode.ST, LocomotionMode.O)
    O_W = (LocomotionMode.O, LocomotionMode.W)
    W_SA = (LocomotionMode.W, LocomotionMode.SA)
    SA_W = (LocomotionMode.SA, LocomotionMode.W)
    W_RD = (LocomotionMode.W, LocomotionMode.RD)
    RD_W = (LocomotionMode.RD, LocomotionMode.W)
    ST_W = (LocomotionMode.ST, LocomotionMode.W)
    W_RA = (LocomotionMode.W, LocomotionMode.RA)
    RA_W = (LocomotionMode.RA, LocomotionMode.W)
    W_SD = (LocomotionMode.W, LocomotionMode.SD)
    SD_W = (LocomotionMode.SD, LocomotionMode.W)
    W_O = (LocomotionMode.W, LocomotionMode.O)
    O_ST = (LocomotionMode.O, LocomotionMode.ST)
    ST_BS = (LocomotionMode.ST, LocomotionMode.BS)
    ST_SS = (LocomotionMode.ST, LocomotionMode.SS)

    @property
    def source(self) -> LocomotionMode:
        return self.value[0]

    @property
    def target(self) -> LocomotionMode:
        return self.value[1]

    @property
    def event(self) -> GaitEventKind:
        """Critical event anchoring this transition's mode transition point."""
        if self.source is LocomotionMode.ST:
            return GaitEventKind.TO
        return GaitEventKind.HC

    @classmethod
    def from_modes(cls, source: LocomotionMode, target: LocomotionMode) -> "TransitionKind | None":
        """Look up the transition for a mode pair, or None if untracked."""
        return _PAIR_TO_KIND.get((source, target))

    def __str__(self) -> str:
        return f"{self.source.name}->{self.target.name}"


_PAIR_TO_KIND = {kind.value: kind for kind in TransitionKind}

# Recorded muscles of the leading (right) leg, in channel order.
MUSCLE_NAMES = ("BF", "SM", "MG", "LG", "VM", "VL", "RF", "TA")

# Leg regions used by the channel-drop study.
MUSCLE_GROUPS = {
    "UF": ("VM", "VL", "RF"),  # upper front leg
    "UB": ("BF", "SM"),        # upper back leg
    "LF": ("TA",),             # lower front leg
    "LB": ("MG", "LG"),        # lower back leg
}

# Named channel configurations: two-region combinations plus the full set.
CHANNEL_CONFIGS = {
    "UFUB": MUSCLE_GROUPS["UF"] + MUSCLE_GROUPS["UB"],
    "LFLB": MUSCLE_GROUPS["LF"] + MUSCLE_GROUPS["LB"],
    "UFLF": MUSCLE_GROUPS["UF"] + MUSCLE_GROUPS["LF"],
    "UBLB": MUSCLE_GROUPS["UB"] + MUSCLE_GROUPS["LB"],
    "UFLB": MUSCLE_GROUPS["UF"] + MUSCLE_GROUPS["LB"],
    "LFUB": MUSCLE_GROUPS["LF"] + MUSCLE_GROUPS["UB"],
    "ALL": MUSCLE_NAMES,
}

_M = LocomotionMode

# Continuous paradigm: out along the course, stop and turn back (the stop
# into standing is a plain mode change with no tracked transition, since the
# unrecorded turn immediately follows), then the return leg.
MAIN_TASK = (
    _M.ST, _M.O, _M.W, _M.SA, _M.W, _M.RD, _M.W,
    _M.ST,
    _M.W, _M.RA, _M.W, _M.SD, _M.W, _M.O, _M.ST,
)
BACK_STEP_TASK = (_M.ST, _M.BS)
SIDE_STEP_TASK = (_M.ST, _M.SS)

TASK_NAMES = ("main", "backstep", "sidestep")


def task_modes(task: str) -> tuple[LocomotionMode, ...]:
    """Mode sequence for a named task ('main', 'backstep', 'sidestep')."""
    try:
        return {
            "main": MAIN_TASK,
            "backstep": BACK_STEP_TASK,
            "sidestep": SIDE_STEP_TASK,
        }[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}; expected one of {TASK_NAMES}") from None


def mode_sequence_of_paradigm() -> list[tuple[LocomotionMode, TransitionKind | None]]:
    """The full paradigm as (mode, transition-into-next) pairs.

    Covers the main course plus the back-stepping and side-stepping tasks.
    Entries whose following mode change is not a tracked transition (the
    mid-course stop before turning back, task boundaries, and sequence ends)
    carry None.
    """
    out: list[tuple[LocomotionMode, TransitionKind | None]] = []
    for modes in (MAIN_TASK, BACK_STEP_TASK, SIDE_STEP_TASK):
        for i, mode in enumerate(modes):
            if i + 1 < len(modes):
                out.append((mode, TransitionKind.from_modes(mode, modes[i + 1])))
            else:
                out.append((mode, None))
    return out
