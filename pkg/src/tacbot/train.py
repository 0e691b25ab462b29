"""Behavior-cloning trainer: Adam on the mean BC loss over 64-frame
windows in batches of 96, hidden state zero-initialized per window,
held-out split by whole trajectory.

"decay" follows the L2-weight-decay reading (added to gradients); set
``use_lr_decay`` to spend the same constant on a 1/(1+decay*epoch)
learning-rate schedule instead.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .actions import N_KEYS
from .net import (
    Network,
    NetworkConfig,
    bc_loss_and_grads,
    bptt_gradients,
    zero_hidden,
)
from .sensors import GRID, N_AUDIO, N_LAYERS, N_SCALAR, N_SPATIAL


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 1e-3
    batch_size: int = 96
    epochs: int = 50
    bptt_window: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    eval_fraction: float = 0.2
    use_lr_decay: bool = False

    def __post_init__(self):
        positive = (self.learning_rate, self.batch_size, self.epochs,
                    self.bptt_window)
        if any(v <= 0 for v in positive):
            raise ValueError(f"non-positive training setting: {self}")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ValueError("eval_fraction must be in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    heldout_loss: float
    heldout_aim_top1: float
    heldout_key_acc: list[float]
    seconds: float


@dataclass
class TrainReport:
    net_config: dict
    train_config: dict
    n_train_trajectories: int
    n_heldout_trajectories: int
    n_train_frames: int
    n_heldout_frames: int
    majority_aim_index: int
    majority_aim_frequency: float
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_heldout_loss: float = float("inf")
    aborted: bool = False

    def to_dict(self) -> dict:
        out = asdict(self)
        return out


class Adam:
    """Adam with classic L2 weight decay folded into the gradient."""

    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.config = config
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray], lr: float) -> None:
        c = self.config
        self.t += 1
        bias1 = 1.0 - c.beta1 ** self.t
        bias2 = 1.0 - c.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if c.weight_decay > 0.0 and not c.use_lr_decay \
                    and name.endswith(".W"):
                g = g + c.weight_decay * p
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            p -= lr * (m / bias1) / (np.sqrt(v / bias2) + c.epsilon)


@dataclass
class _Chunk:
    traj_index: int
    start: int
    length: int


def _trajectory_chunks(lengths: list[int], window: int) -> list[_Chunk]:
    chunks = []
    for idx, length in enumerate(lengths):
        for lo in range(0, length, window):
            chunks.append(_Chunk(idx, lo, min(window, length - lo)))
    return chunks


def _gather_batch(trajectories, chunks: list[_Chunk], window: int):
    """Stack chunk frames into (T,B,...) float64 arrays plus a frame mask.

    Chunks shorter than the window are zero-padded and masked out rather
    than dropped, so short rounds still contribute.
    """
    b = len(chunks)
    obs = {
        "visual": np.zeros((window, b, GRID, GRID, N_LAYERS)),
        "audio": np.zeros((window, b, N_AUDIO)),
        "scalar": np.zeros((window, b, N_SCALAR)),
        "spatial": np.zeros((window, b, N_SPATIAL)),
    }
    aim = np.zeros((window, b), dtype=np.int64)
    keys = np.zeros((window, b, N_KEYS))
    mask = np.zeros((window, b))
    for col, chunk in enumerate(chunks):
        traj = trajectories[chunk.traj_index]
        sl = slice(chunk.start, chunk.start + chunk.length)
        obs["visual"][:chunk.length, col] = traj.visual[sl]
        obs["audio"][:chunk.length, col] = traj.audio[sl]
        obs["scalar"][:chunk.length, col] = traj.scalar[sl]
        obs["spatial"][:chunk.length, col] = traj.spatial[sl]
        aim[:chunk.length, col] = traj.aim[sl]
        keys[:chunk.length, col] = traj.keys[sl]
        mask[:chunk.length, col] = 1.0
    return obs, aim, keys, mask


def split_trajectories(trajectories, eval_fraction: float, seed: int):
    """Deterministic whole-trajectory train/held-out split (no leakage)."""
    if not trajectories:
        raise ValueError("empty dataset")
    order = np.random.default_rng(seed).permutation(len(trajectories))
    n_eval = max(1, int(round(len(trajectories) * eval_fraction)))
    n_eval = min(n_eval, len(trajectories) - 1)
    eval_idx = set(order[:n_eval].tolist())
    train = [t for i, t in enumerate(trajectories) if i not in eval_idx]
    heldout = [t for i, t in enumerate(trajectories) if i in eval_idx]
    return train, heldout


def majority_aim(trajectories) -> tuple[int, float]:
    counts = np.zeros(165, dtype=np.int64)
    for t in trajectories:
        counts += np.bincount(t.aim, minlength=165)
    total = counts.sum()
    idx = int(counts.argmax())
    return idx, float(counts[idx] / total) if total else 0.0


def evaluate(network: Network, trajectories, window: int = 64,
             batch_size: int = 96) -> dict:
    """Deterministic metrics on a trajectory list: mean per-frame loss,
    aim top-1 accuracy, per-key accuracy."""
    chunks = _trajectory_chunks([t.length for t in trajectories], window)
    loss_sum = 0.0
    frames = 0
    aim_correct = 0
    key_correct = np.zeros(N_KEYS)
    for lo in range(0, len(chunks), batch_size):
        batch = chunks[lo:lo + batch_size]
        obs, aim, keys, mask = _gather_batch(trajectories, batch, window)
        aim_logits, key_logits, _, _ = network.forward_sequence(obs)
        loss, _, _ = bc_loss_and_grads(aim_logits, key_logits, aim, keys, mask)
        n = mask.sum()
        loss_sum += loss * n
        frames += int(n)
        picked = aim_logits.argmax(axis=-1)
        aim_correct += int(((picked == aim) * mask).sum())
        key_pred = key_logits > 0.0
        key_correct += ((key_pred == (keys > 0.5)) * mask[..., None]) \
            .sum(axis=(0, 1))
    if frames == 0:
        raise ValueError("no frames to evaluate")
    return {
        "loss": loss_sum / frames,
        "aim_top1": aim_correct / frames,
        "key_acc": (key_correct / frames).tolist(),
        "frames": frames,
    }


def bc_train(trajectories, net_config: NetworkConfig,
             train_config: TrainConfig,
             log=None, initial_params=None) -> tuple[Network, TrainReport]:
    """Train a network by behavior cloning (fresh Glorot init, or from
    ``initial_params`` to resume).

    Returns the best-held-out-loss checkpoint and the per-epoch report.
    A non-finite training loss aborts and returns the last good
    checkpoint with ``report.aborted`` set.
    """
    tc = train_config
    train_set, heldout = split_trajectories(
        trajectories, tc.eval_fraction, tc.seed)
    maj_idx, maj_freq = majority_aim(train_set)
    if initial_params is not None:
        network = Network(net_config, copy.deepcopy(initial_params))
    else:
        network = Network.initialize(net_config, seed=tc.seed)
    optimizer = Adam(network.params, tc)
    rng = np.random.default_rng(tc.seed + 1)

    report = TrainReport(
        net_config=net_config.to_dict(),
        train_config={k: getattr(tc, k) for k in tc.__dataclass_fields__},
        n_train_trajectories=len(train_set),
        n_heldout_trajectories=len(heldout),
        n_train_frames=sum(t.length for t in train_set),
        n_heldout_frames=sum(t.length for t in heldout),
        majority_aim_index=maj_idx,
        majority_aim_frequency=maj_freq,
    )

    chunks = _trajectory_chunks([t.length for t in train_set], tc.bptt_window)
    best_params = copy.deepcopy(network.params)

    def record(epoch: int, train_loss: float, started: float):
        stats = evaluate(network, heldout, tc.bptt_window, tc.batch_size)
        row = EpochStats(
            epoch=epoch, train_loss=train_loss,
            heldout_loss=stats["loss"], heldout_aim_top1=stats["aim_top1"],
            heldout_key_acc=stats["key_acc"],
            seconds=time.perf_counter() - started)
        report.epochs.append(row)
        if stats["loss"] < report.best_heldout_loss:
            report.best_heldout_loss = stats["loss"]
            report.best_epoch = epoch
            nonlocal best_params
            best_params = copy.deepcopy(network.params)
        if log:
            log(f"epoch {epoch:3d}  train {train_loss:.4f}  "
                f"heldout {stats['loss']:.4f}  aim@1 {stats['aim_top1']:.3f}")
        return row

    started = time.perf_counter()
    record(0, float("nan"), started)   # pre-training baseline

    for epoch in range(1, tc.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(chunks))
        lr = tc.learning_rate
        if tc.use_lr_decay:
            lr = tc.learning_rate / (1.0 + tc.weight_decay * (epoch - 1))
        loss_sum = 0.0
        frame_sum = 0
        for lo in range(0, len(order), tc.batch_size):
            batch = [chunks[i] for i in order[lo:lo + tc.batch_size]]
            obs, aim, keys, mask = _gather_batch(
                train_set, batch, tc.bptt_window)
            grads, loss, _ = bptt_gradients(
                network, obs, aim, keys, window=tc.bptt_window,
                mask=mask, train=True, rng=rng)
            if not np.isfinite(loss):
                report.aborted = True
                if log:
                    log(f"aborting at epoch {epoch}: non-finite loss")
                return Network(net_config, best_params), report
            n = mask.sum()
            loss_sum += loss * n
            frame_sum += int(n)
            optimizer.step(network.params, grads, lr)
        record(epoch, loss_sum / max(frame_sum, 1), started)

    return Network(net_config, best_params), report
