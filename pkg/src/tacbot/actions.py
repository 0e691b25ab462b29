"""Discrete action space: a 165-way aim head (11 pitch x 15 yaw deltas)
plus 11 independent key flags.

Aim indices decode pitch-major: ``index = pitch_slot * 15 + yaw_slot``.
The yaw deltas are exactly the sensor yaw angles, so every yaw column of
the visual grid has an action that rotates the crosshair onto it; the
pitch list drops the two steepest sensor angles at each end.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

PITCH_ACTIONS = (20.0, 10.0, 6.0, 3.0, 1.0, 0.0,
                 -1.0, -3.0, -6.0, -10.0, -20.0)
YAW_ACTIONS = (70.0, 45.0, 20.0, 10.0, 6.0, 3.0, 1.0, 0.0,
               -1.0, -3.0, -6.0, -10.0, -20.0, -45.0, -70.0)
N_AIM = len(PITCH_ACTIONS) * len(YAW_ACTIONS)   # 165

KEY_ORDER = ("w", "a", "s", "d", "space", "key4",
             "g", "r", "q", "e", "left_click")
N_KEYS = len(KEY_ORDER)


@dataclass(frozen=True, slots=True)
class KeyAction:
    """The 11 pressable keys; field order is the serialization contract
    (bit 0 = w ... bit 10 = left_click)."""
    w: bool = False
    a: bool = False
    s: bool = False
    d: bool = False
    space: bool = False
    key4: bool = False
    g: bool = False
    r: bool = False
    q: bool = False
    e: bool = False
    left_click: bool = False

    def to_bits(self) -> int:
        bits = 0
        for i, name in enumerate(KEY_ORDER):
            if getattr(self, name):
                bits |= 1 << i
        return bits

    @classmethod
    def from_bits(cls, bits: int) -> "KeyAction":
        return cls(**{name: bool(bits >> i & 1)
                      for i, name in enumerate(KEY_ORDER)})

    def as_tuple(self) -> tuple[bool, ...]:
        return tuple(getattr(self, name) for name in KEY_ORDER)


assert tuple(f.name for f in fields(KeyAction)) == KEY_ORDER


@dataclass(frozen=True, slots=True)
class Action:
    aim_index: int = 82          # (0 deg, 0 deg)
    keys: KeyAction = KeyAction()

    def __post_init__(self):
        if not 0 <= self.aim_index < N_AIM:
            raise ValueError(f"aim index {self.aim_index} outside [0, {N_AIM})")

    def aim_angles(self) -> tuple[float, float]:
        return aim_index_to_angles(self.aim_index)


NOOP_ACTION = Action()


def aim_index_to_angles(index: int) -> tuple[float, float]:
    """(pitch_delta, yaw_delta) in degrees for an aim index."""
    if not 0 <= index < N_AIM:
        raise ValueError(f"aim index {index} outside [0, {N_AIM})")
    p, y = divmod(index, len(YAW_ACTIONS))
    return PITCH_ACTIONS[p], YAW_ACTIONS[y]


def _snap(value: float, table: tuple[float, ...]) -> int:
    """Index of the nearest table angle; exact ties go to the smaller
    absolute angle (favors fine aim)."""
    return min(range(len(table)),
               key=lambda i: (abs(table[i] - value), abs(table[i])))


def angles_to_aim_index(pitch_delta: float, yaw_delta: float) -> int:
    """Snap continuous deltas onto the action grid (clamps beyond the
    extremes) and encode pitch-major."""
    p = _snap(pitch_delta, PITCH_ACTIONS)
    y = _snap(yaw_delta, YAW_ACTIONS)
    return p * len(YAW_ACTIONS) + y
