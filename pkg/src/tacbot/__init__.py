"""tacbot: a desk-scale tactical-shooter bot pipeline.

A 2v2 bomb plant/defuse simulator with ray-cast perception, a coupled
discrete action space, scripted experts for demonstration data, a
conv+LSTM behavior-cloning model family trained with truncated BPTT, and
a distribution-similarity evaluation suite (JS divergence, EMD, ASD,
heatmaps, CPU latency benchmarks).
"""

from .actions import (
    Action,
    KeyAction,
    N_AIM,
    N_KEYS,
    PITCH_ACTIONS,
    YAW_ACTIONS,
    aim_index_to_angles,
    angles_to_aim_index,
)
from .geometry import Hit, HitKind, RayScene, Vec3, raycast, raycast_batch
from .sensors import (
    OBSERVATION_SIZE,
    SENSOR_PITCH,
    SENSOR_YAW,
    Observation,
    observe,
    sense_audio,
    sense_scalar,
    sense_spatial,
    sense_visual,
)
from .world import (
    AreaEffect,
    BombPhase,
    BombState,
    EffectKind,
    EventKind,
    GameEvent,
    Outcome,
    PlayerState,
    Role,
    SimulationError,
    Team,
    WorldState,
    check_round_end,
    new_round,
    step,
)
from .worldmap import MapError, MapGeometry, builtin_map, load_map, load_map_file

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
