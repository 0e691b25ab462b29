"""The conv+LSTM policy network family, in plain numpy with exact
hand-written reverse-mode gradients.

Architecture: four parallel encoder streams (a 3x3 stride-1 zero-padded
ReLU convolution over the 15x15x10 visual tensor; linear dense encoders
for the audio/scalar/spatial blocks), concatenated into a ReLU dense
stack, an LSTM stack (dropout 0.5 on each LSTM layer's output in train
mode), a ReLU dense stack, and two output heads: 165 aim logits and 11
key logits.

The frame encoder has no recurrence, so sequences fold time into the
batch for one big matmul; only the LSTM stack steps through time.
Training runs in float64; inference casts parameters to float32.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass

import numpy as np

from .actions import N_AIM, N_KEYS
from .sensors import GRID, N_AUDIO, N_LAYERS, N_SCALAR, N_SPATIAL

VISUAL_SHAPE = (GRID, GRID, N_LAYERS)
CONV_K = 3
CONV_PATCH = CONV_K * CONV_K * N_LAYERS   # 90
CONV_CELLS = GRID * GRID                  # 225
_CONV_CHUNK = 512                         # frames per im2col slab

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass(frozen=True)
class NetworkConfig:
    conv_filters: int
    encoder_dim: int
    pre_lstm_dense: tuple[int, ...]
    lstm_widths: tuple[int, ...]
    post_lstm_dense: tuple[int, ...]
    dropout: float = 0.5

    def __post_init__(self):
        widths = ((self.conv_filters, self.encoder_dim)
                  + self.pre_lstm_dense + self.lstm_widths
                  + self.post_lstm_dense)
        if any(w < 1 for w in widths):
            raise ValueError(f"all widths must be >= 1: {self}")
        if not self.lstm_widths:
            raise ValueError("at least one LSTM layer is required")

    @property
    def conv_flat(self) -> int:
        return CONV_CELLS * self.conv_filters

    @property
    def concat_dim(self) -> int:
        return self.conv_flat + 3 * self.encoder_dim

    @property
    def head_input_dim(self) -> int:
        if self.post_lstm_dense:
            return self.post_lstm_dense[-1]
        return self.lstm_widths[-1]

    def to_dict(self) -> dict:
        return {
            "conv_filters": self.conv_filters,
            "encoder_dim": self.encoder_dim,
            "pre_lstm_dense": list(self.pre_lstm_dense),
            "lstm_widths": list(self.lstm_widths),
            "post_lstm_dense": list(self.post_lstm_dense),
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {"conv_filters", "encoder_dim", "pre_lstm_dense",
                 "lstm_widths", "post_lstm_dense", "dropout"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            conv_filters=int(d["conv_filters"]),
            encoder_dim=int(d["encoder_dim"]),
            pre_lstm_dense=tuple(int(x) for x in d["pre_lstm_dense"]),
            lstm_widths=tuple(int(x) for x in d["lstm_widths"]),
            post_lstm_dense=tuple(int(x) for x in d["post_lstm_dense"]),
            dropout=float(d.get("dropout", 0.5)),
        )


# Model family A-F; encoder_dim follows the 4*conv_filters convention.
# "A-small" is the desk-scale training preset, "tiny" the gradient-check
# workhorse.
PRESETS: dict[str, NetworkConfig] = {
    "A": NetworkConfig(8, 32, (256,), (128,), (64,)),
    "B": NetworkConfig(16, 64, (512,), (256,), (128,)),
    "C": NetworkConfig(16, 64, (512,), (768,), (256,)),
    "D": NetworkConfig(32, 128, (1024,), (1024,), (512, 256)),
    "E": NetworkConfig(32, 128, (1024, 1024), (1024, 1024), (1024, 512, 256)),
    "F": NetworkConfig(48, 192, (1792, 1024, 1024), (1024, 1024),
                       (1024, 512, 256)),
    "A-small": NetworkConfig(2, 8, (32,), (32,), (16,)),
    "tiny": NetworkConfig(1, 3, (6,), (5,), (4,)),
}


def preset(name: str) -> NetworkConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name]


def param_order(config: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Deterministic (name, shape) list; the checkpoint tensor order."""
    f, e = config.conv_filters, config.encoder_dim
    order = [
        ("conv.W", (CONV_PATCH, f)),
        ("conv.b", (f,)),
        ("enc_audio.W", (N_AUDIO, e)),
        ("enc_audio.b", (e,)),
        ("enc_scalar.W", (N_SCALAR, e)),
        ("enc_scalar.b", (e,)),
        ("enc_spatial.W", (N_SPATIAL, e)),
        ("enc_spatial.b", (e,)),
    ]
    d = config.concat_dim
    for i, width in enumerate(config.pre_lstm_dense):
        order += [(f"pre{i}.W", (d, width)), (f"pre{i}.b", (width,))]
        d = width
    for i, width in enumerate(config.lstm_widths):
        order += [(f"lstm{i}.W", (d, 4 * width)),
                  (f"lstm{i}.U", (width, 4 * width)),
                  (f"lstm{i}.b", (4 * width,))]
        d = width
    for i, width in enumerate(config.post_lstm_dense):
        order += [(f"post{i}.W", (d, width)), (f"post{i}.b", (width,))]
        d = width
    order += [
        ("head_aim.W", (d, N_AIM)), ("head_aim.b", (N_AIM,)),
        ("head_key.W", (d, N_KEYS)), ("head_key.b", (N_KEYS,)),
    ]
    return order


def count_params(config: NetworkConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_order(config))


def init_params(config: NetworkConfig, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, LSTM forget-gate bias +1.

    Gate order within every 4H-wide LSTM tensor is (input, forget,
    candidate, output).
    """
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_order(config):
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=np.float64)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, shape)
    for i, width in enumerate(config.lstm_widths):
        params[f"lstm{i}.b"][width:2 * width] = 1.0
    return params


def zero_hidden(config: NetworkConfig, batch: int,
                dtype=np.float64) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(np.zeros((batch, w), dtype=dtype), np.zeros((batch, w), dtype=dtype))
            for w in config.lstm_widths]


def _im2col(visual: np.ndarray) -> np.ndarray:
    """(N, 15, 15, 10) -> (N*225, 90) patch matrix, zero padded, with
    patch entries ordered (ki, kj, channel)."""
    n = visual.shape[0]
    padded = np.zeros((n, GRID + 2, GRID + 2, N_LAYERS), dtype=visual.dtype)
    padded[:, 1:-1, 1:-1, :] = visual
    windows = np.lib.stride_tricks.sliding_window_view(
        padded, (CONV_K, CONV_K), axis=(1, 2))      # (N,15,15,C,3,3)
    cols = windows.transpose(0, 1, 2, 4, 5, 3)      # (N,15,15,3,3,C)
    return np.ascontiguousarray(cols).reshape(n * CONV_CELLS, CONV_PATCH)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ActionDistribution:
    aim_logits: np.ndarray     # (..., 165)
    key_logits: np.ndarray     # (..., 11)

    def aim_probs(self) -> np.ndarray:
        return softmax(self.aim_logits)

    def key_probs(self) -> np.ndarray:
        return sigmoid(self.key_logits)


@dataclass
class _SeqCache:
    """Everything backward_sequence needs; forward owns the layout."""
    t_steps: int
    batch: int
    train: bool
    visual: np.ndarray
    audio: np.ndarray
    scalar: np.ndarray
    spatial: np.ndarray
    conv_out: np.ndarray                  # post-ReLU (N, 225*F)
    pre_inputs: list[np.ndarray]          # input to each pre dense layer
    pre_outputs: list[np.ndarray]         # post-ReLU outputs
    lstm_inputs: list[np.ndarray]         # (T,B,in) per layer (post dropout of lower)
    lstm_gates: list[np.ndarray]          # (T,B,4H) post-activation per layer
    lstm_c: list[np.ndarray]              # (T,B,H) cell states
    lstm_h: list[np.ndarray]              # (T,B,H) hidden states
    h0: list[tuple[np.ndarray, np.ndarray]]
    dropout_masks: list[np.ndarray | None]
    post_inputs: list[np.ndarray]
    post_outputs: list[np.ndarray]
    head_input: np.ndarray


class Network:
    """Configuration + parameter bundle with forward/backward passes."""

    def __init__(self, config: NetworkConfig, params: dict[str, np.ndarray]):
        expected = dict(param_order(config))
        if set(params) != set(expected):
            raise ValueError("parameter names do not match the config")
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ValueError(
                    f"{name}: expected shape {shape}, got {params[name].shape}")
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: NetworkConfig, seed: int = 0) -> "Network":
        return cls(config, init_params(config, seed))

    @property
    def dtype(self):
        return self.params["conv.W"].dtype

    def astype(self, dtype) -> "Network":
        return Network(self.config,
                       {k: v.astype(dtype) for k, v in self.params.items()})

    def n_params(self) -> int:
        return count_params(self.config)

    # ---------------- forward ----------------

    def _encode_frames(self, visual, audio, scalar, spatial, cache: bool):
        """Frame encoder over N folded frames; returns (feat, cache bits)."""
        p = self.params
        n = visual.shape[0]
        f = self.config.conv_filters
        conv_out = np.empty((n, CONV_CELLS * f), dtype=visual.dtype)
        for lo in range(0, n, _CONV_CHUNK):
            hi = min(lo + _CONV_CHUNK, n)
            cols = _im2col(visual[lo:hi])
            y = cols @ p["conv.W"] + p["conv.b"]
            np.maximum(y, 0.0, out=y)
            conv_out[lo:hi] = y.reshape(hi - lo, CONV_CELLS * f)
        streams = [
            conv_out,
            audio @ p["enc_audio.W"] + p["enc_audio.b"],
            scalar @ p["enc_scalar.W"] + p["enc_scalar.b"],
            spatial @ p["enc_spatial.W"] + p["enc_spatial.b"],
        ]
        feat = np.concatenate(streams, axis=1)
        pre_inputs: list[np.ndarray] = []
        pre_outputs: list[np.ndarray] = []
        for i in range(len(self.config.pre_lstm_dense)):
            pre_inputs.append(feat)
            feat = feat @ p[f"pre{i}.W"] + p[f"pre{i}.b"]
            np.maximum(feat, 0.0, out=feat)
            pre_outputs.append(feat)
        bits = (conv_out, pre_inputs, pre_outputs) if cache else None
        return feat, bits

    def _lstm_step(self, layer: int, x, h_prev, c_prev):
        p = self.params
        width = self.config.lstm_widths[layer]
        a = x @ p[f"lstm{layer}.W"] + h_prev @ p[f"lstm{layer}.U"] \
            + p[f"lstm{layer}.b"]
        i = sigmoid(a[:, :width])
        fg = sigmoid(a[:, width:2 * width])
        g = np.tanh(a[:, 2 * width:3 * width])
        o = sigmoid(a[:, 3 * width:])
        c = fg * c_prev + i * g
        h = o * np.tanh(c)
        gates = np.concatenate([i, fg, g, o], axis=1)
        return h, c, gates

    def forward_sequence(
        self,
        obs: dict[str, np.ndarray],
        hidden: list[tuple[np.ndarray, np.ndarray]] | None = None,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ):
        """Run a (T, B, ...) observation batch through the network.

        ``obs`` holds "visual" (T,B,15,15,10), "audio" (T,B,48),
        "scalar" (T,B,27), "spatial" (T,B,11). Returns
        (aim_logits (T,B,165), key_logits (T,B,11), hidden_out, cache).
        Train mode applies inverted dropout after each LSTM layer and
        requires ``rng``.
        """
        if train and rng is None:
            raise ValueError("train mode needs an rng for dropout")
        cfg = self.config
        p = self.params
        visual, audio = obs["visual"], obs["audio"]
        scalar, spatial = obs["scalar"], obs["spatial"]
        t_steps, batch = visual.shape[0], visual.shape[1]
        n = t_steps * batch
        if hidden is None:
            hidden = zero_hidden(cfg, batch, dtype=self.dtype)

        feat, enc_bits = self._encode_frames(
            visual.reshape(n, *VISUAL_SHAPE), audio.reshape(n, N_AUDIO),
            scalar.reshape(n, N_SCALAR), spatial.reshape(n, N_SPATIAL),
            cache=True)
        conv_out, pre_inputs, pre_outputs = enc_bits

        x_seq = feat.reshape(t_steps, batch, -1)
        lstm_inputs: list[np.ndarray] = []
        lstm_gates: list[np.ndarray] = []
        lstm_cs: list[np.ndarray] = []
        lstm_hs: list[np.ndarray] = []
        masks: list[np.ndarray | None] = []
        hidden_out: list[tuple[np.ndarray, np.ndarray]] = []
        keep = 1.0 - cfg.dropout
        for layer, width in enumerate(cfg.lstm_widths):
            lstm_inputs.append(x_seq)
            gates_seq = np.empty((t_steps, batch, 4 * width), dtype=self.dtype)
            c_seq = np.empty((t_steps, batch, width), dtype=self.dtype)
            h_seq = np.empty((t_steps, batch, width), dtype=self.dtype)
            h, c = hidden[layer]
            for t in range(t_steps):
                h, c, gates = self._lstm_step(layer, x_seq[t], h, c)
                gates_seq[t] = gates
                c_seq[t] = c
                h_seq[t] = h
            hidden_out.append((h, c))
            lstm_gates.append(gates_seq)
            lstm_cs.append(c_seq)
            lstm_hs.append(h_seq)
            if train and cfg.dropout > 0.0:
                mask = (rng.random(h_seq.shape) < keep).astype(self.dtype) / keep
                x_seq = h_seq * mask
                masks.append(mask)
            else:
                x_seq = h_seq
                masks.append(None)

        feat = x_seq.reshape(n, -1)
        post_inputs: list[np.ndarray] = []
        post_outputs: list[np.ndarray] = []
        for i in range(len(cfg.post_lstm_dense)):
            post_inputs.append(feat)
            feat = feat @ p[f"post{i}.W"] + p[f"post{i}.b"]
            np.maximum(feat, 0.0, out=feat)
            post_outputs.append(feat)

        aim_logits = (feat @ p["head_aim.W"] + p["head_aim.b"]) \
            .reshape(t_steps, batch, N_AIM)
        key_logits = (feat @ p["head_key.W"] + p["head_key.b"]) \
            .reshape(t_steps, batch, N_KEYS)

        cache = _SeqCache(
            t_steps=t_steps, batch=batch, train=train,
            visual=visual, audio=audio, scalar=scalar, spatial=spatial,
            conv_out=conv_out, pre_inputs=pre_inputs, pre_outputs=pre_outputs,
            lstm_inputs=lstm_inputs, lstm_gates=lstm_gates,
            lstm_c=lstm_cs, lstm_h=lstm_hs, h0=hidden,
            dropout_masks=masks, post_inputs=post_inputs,
            post_outputs=post_outputs, head_input=feat)
        return aim_logits, key_logits, hidden_out, cache

    # ---------------- backward ----------------

    def backward_sequence(self, cache: _SeqCache, d_aim: np.ndarray,
                          d_key: np.ndarray):
        """Exact gradients for the forward pass recorded in ``cache``.

        d_aim/d_key are dLoss/dLogits of shape (T,B,165) and (T,B,11).
        Returns (grads dict matching params, d_hidden0 per LSTM layer).
        """
        cfg = self.config
        p = self.params
        t_steps, batch = cache.t_steps, cache.batch
        n = t_steps * batch
        grads = {name: np.zeros_like(arr) for name, arr in self.params.items()}

        d_aim = d_aim.reshape(n, N_AIM)
        d_key = d_key.reshape(n, N_KEYS)
        grads["head_aim.W"] += cache.head_input.T @ d_aim
        grads["head_aim.b"] += d_aim.sum(axis=0)
        grads["head_key.W"] += cache.head_input.T @ d_key
        grads["head_key.b"] += d_key.sum(axis=0)
        d_feat = d_aim @ p["head_aim.W"].T + d_key @ p["head_key.W"].T

        for i in reversed(range(len(cfg.post_lstm_dense))):
            d_feat = d_feat * (cache.post_outputs[i] > 0.0)
            grads[f"post{i}.W"] += cache.post_inputs[i].T @ d_feat
            grads[f"post{i}.b"] += d_feat.sum(axis=0)
            d_feat = d_feat @ p[f"post{i}.W"].T

        d_top = d_feat.reshape(t_steps, batch, -1)
        d_h0: list[tuple[np.ndarray, np.ndarray]] = [None] * len(cfg.lstm_widths)
        for layer in reversed(range(len(cfg.lstm_widths))):
            width = cfg.lstm_widths[layer]
            mask = cache.dropout_masks[layer]
            d_out = d_top * mask if mask is not None else d_top
            gates_seq = cache.lstm_gates[layer]
            c_seq = cache.lstm_c[layer]
            x_seq = cache.lstm_inputs[layer]
            h0, c0 = cache.h0[layer]
            d_a_seq = np.empty((t_steps, batch, 4 * width), dtype=d_out.dtype)
            dh_next = np.zeros((batch, width), dtype=d_out.dtype)
            dc_next = np.zeros((batch, width), dtype=d_out.dtype)
            u_t = p[f"lstm{layer}.U"].T
            for t in range(t_steps - 1, -1, -1):
                gates = gates_seq[t]
                i_g = gates[:, :width]
                f_g = gates[:, width:2 * width]
                g_g = gates[:, 2 * width:3 * width]
                o_g = gates[:, 3 * width:]
                c_t = c_seq[t]
                c_prev = c_seq[t - 1] if t > 0 else c0
                tanh_c = np.tanh(c_t)
                dh = d_out[t] + dh_next
                do = dh * tanh_c
                dc = dh * o_g * (1.0 - tanh_c * tanh_c) + dc_next
                di = dc * g_g
                df = dc * c_prev
                dg = dc * i_g
                dc_next = dc * f_g
                d_a = np.concatenate([
                    di * i_g * (1.0 - i_g),
                    df * f_g * (1.0 - f_g),
                    dg * (1.0 - g_g * g_g),
                    do * o_g * (1.0 - o_g),
                ], axis=1)
                d_a_seq[t] = d_a
                dh_next = d_a @ u_t
            d_h0[layer] = (dh_next, dc_next)
            d_a_flat = d_a_seq.reshape(n, 4 * width)
            x_flat = x_seq.reshape(n, -1)
            grads[f"lstm{layer}.W"] += x_flat.T @ d_a_flat
            grads[f"lstm{layer}.b"] += d_a_flat.sum(axis=0)
            h_seq = cache.lstm_h[layer]
            h_prev_flat = np.concatenate(
                [h0[None], h_seq[:-1]], axis=0).reshape(n, width)
            grads[f"lstm{layer}.U"] += h_prev_flat.T @ d_a_flat
            d_top = (d_a_flat @ p[f"lstm{layer}.W"].T) \
                .reshape(t_steps, batch, -1)

        d_feat = d_top.reshape(n, -1)
        for i in reversed(range(len(cfg.pre_lstm_dense))):
            d_feat = d_feat * (cache.pre_outputs[i] > 0.0)
            grads[f"pre{i}.W"] += cache.pre_inputs[i].T @ d_feat
            grads[f"pre{i}.b"] += d_feat.sum(axis=0)
            d_feat = d_feat @ p[f"pre{i}.W"].T

        f = cfg.conv_filters
        d_conv = d_feat[:, :cfg.conv_flat]
        d_audio = d_feat[:, cfg.conv_flat:cfg.conv_flat + cfg.encoder_dim]
        d_scalar = d_feat[:, cfg.conv_flat + cfg.encoder_dim:
                          cfg.conv_flat + 2 * cfg.encoder_dim]
        d_spatial = d_feat[:, cfg.conv_flat + 2 * cfg.encoder_dim:]

        audio = cache.audio.reshape(n, N_AUDIO)
        scalar = cache.scalar.reshape(n, N_SCALAR)
        spatial = cache.spatial.reshape(n, N_SPATIAL)
        grads["enc_audio.W"] += audio.T @ d_audio
        grads["enc_audio.b"] += d_audio.sum(axis=0)
        grads["enc_scalar.W"] += scalar.T @ d_scalar
        grads["enc_scalar.b"] += d_scalar.sum(axis=0)
        grads["enc_spatial.W"] += spatial.T @ d_spatial
        grads["enc_spatial.b"] += d_spatial.sum(axis=0)

        d_conv = d_conv * (cache.conv_out > 0.0)
        visual = cache.visual.reshape(n, *VISUAL_SHAPE)
        d_conv_mat = d_conv.reshape(n * CONV_CELLS, f)
        for lo in range(0, n, _CONV_CHUNK):
            hi = min(lo + _CONV_CHUNK, n)
            cols = _im2col(visual[lo:hi])
            grads["conv.W"] += cols.T @ d_conv_mat[lo * CONV_CELLS:hi * CONV_CELLS]
        grads["conv.b"] += d_conv_mat.sum(axis=0)
        return grads, d_h0

    # ---------------- single-step inference ----------------

    def step(self, obs_flat: np.ndarray,
             hidden: list[tuple[np.ndarray, np.ndarray]]):
        """One inference step for a (B, 2336) flat observation batch.

        Pure function of (params, obs, hidden): no dropout. Returns
        (aim_logits (B,165), key_logits (B,11), hidden').
        """
        obs_flat = np.asarray(obs_flat, dtype=self.dtype)
        if obs_flat.ndim == 1:
            obs_flat = obs_flat[None, :]
        b = obs_flat.shape[0]
        nv = CONV_CELLS * N_LAYERS
        visual = obs_flat[:, :nv].reshape(b, *VISUAL_SHAPE)
        audio = obs_flat[:, nv:nv + N_AUDIO]
        scalar = obs_flat[:, nv + N_AUDIO:nv + N_AUDIO + N_SCALAR]
        spatial = obs_flat[:, nv + N_AUDIO + N_SCALAR:]
        feat, _ = self._encode_frames(visual, audio, scalar, spatial,
                                      cache=False)
        new_hidden = []
        x = feat
        for layer in range(len(self.config.lstm_widths)):
            h, c = hidden[layer]
            h, c, _ = self._lstm_step(layer, x, h, c)
            new_hidden.append((h, c))
            x = h
        p = self.params
        for i in range(len(self.config.post_lstm_dense)):
            x = x @ p[f"post{i}.W"] + p[f"post{i}.b"]
            np.maximum(x, 0.0, out=x)
        aim = x @ p["head_aim.W"] + p["head_aim.b"]
        key = x @ p["head_key.W"] + p["head_key.b"]
        return aim, key, new_hidden


# ---------------- loss ----------------

def bc_loss(dist: ActionDistribution, aim_target: int,
            key_targets: np.ndarray) -> float:
    """Cross-entropy of the target aim index plus the sum of the 11 key
    binary cross-entropies, equally weighted, in nats."""
    aim = np.asarray(dist.aim_logits, dtype=np.float64)
    key = np.asarray(dist.key_logits, dtype=np.float64)
    t = np.asarray(key_targets, dtype=np.float64)
    lse = np.log(np.sum(np.exp(aim - aim.max()))) + aim.max()
    ce = lse - aim[aim_target]
    bce = np.maximum(key, 0.0) - key * t + np.log1p(np.exp(-np.abs(key)))
    return float(ce + bce.sum())


def bc_loss_and_grads(aim_logits: np.ndarray, key_logits: np.ndarray,
                      aim_targets: np.ndarray, key_targets: np.ndarray,
                      mask: np.ndarray | None = None):
    """Mean per-frame BC loss over a (T,B) batch plus dLoss/dLogits.

    ``mask`` (T,B) marks frames that count; padded frames contribute
    nothing to the loss or the gradients.
    """
    t_steps, batch = aim_logits.shape[:2]
    if mask is None:
        mask = np.ones((t_steps, batch), dtype=aim_logits.dtype)
    count = mask.sum()
    if count <= 0:
        raise ValueError("mask selects no frames")

    shifted = aim_logits - aim_logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1))
    target_logit = np.take_along_axis(
        shifted, aim_targets[..., None].astype(np.int64), axis=-1)[..., 0]
    ce = log_z - target_logit

    k = key_logits
    t = key_targets
    bce = np.maximum(k, 0.0) - k * t + np.log1p(np.exp(-np.abs(k)))
    loss = float(((ce + bce.sum(axis=-1)) * mask).sum() / count)

    probs = softmax(aim_logits)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, aim_targets[..., None].astype(np.int64), 1.0,
                      axis=-1)
    scale = (mask / count)[..., None]
    d_aim = (probs - onehot) * scale
    d_key = (sigmoid(k) - t) * scale
    return loss, d_aim, d_key


def bptt_gradients(network: Network, obs: dict[str, np.ndarray],
                   aim_targets: np.ndarray, key_targets: np.ndarray,
                   window: int = 64,
                   hidden: list | None = None,
                   mask: np.ndarray | None = None,
                   train: bool = False,
                   rng: np.random.Generator | None = None):
    """Truncated-BPTT gradients of the mean BC loss over a (T,B) batch.

    The sequence is processed in ``window``-sized chunks: hidden state
    carries across chunk boundaries, gradients do not. Per-chunk
    gradients of the chunk's mean loss are combined weighted by frame
    counts, so with one chunk this is the exact full-sequence gradient.
    Returns (grads, mean_loss, hidden_out).
    """
    t_total = obs["visual"].shape[0]
    batch = obs["visual"].shape[1]
    if mask is None:
        mask = np.ones((t_total, batch), dtype=np.float64)
    grads = {name: np.zeros_like(arr) for name, arr in network.params.items()}
    total_frames = mask.sum()
    if total_frames <= 0:
        raise ValueError("mask selects no frames")
    loss_acc = 0.0
    for lo in range(0, t_total, window):
        hi = min(lo + window, t_total)
        chunk_obs = {k: v[lo:hi] for k, v in obs.items()}
        chunk_mask = mask[lo:hi]
        chunk_frames = chunk_mask.sum()
        aim_logits, key_logits, hidden, cache = network.forward_sequence(
            chunk_obs, hidden, train=train, rng=rng)
        if chunk_frames <= 0:
            continue
        loss, d_aim, d_key = bc_loss_and_grads(
            aim_logits, key_logits, aim_targets[lo:hi], key_targets[lo:hi],
            chunk_mask)
        g, _ = network.backward_sequence(cache, d_aim, d_key)
        weight = chunk_frames / total_frames
        loss_acc += loss * weight
        for name in grads:
            grads[name] += g[name] * weight
    return grads, loss_acc, hidden


# ---------------- checkpoints ----------------

def save_checkpoint(path, network: Network, *, seed: int | None = None,
                    extra: dict | None = None) -> None:
    """Versioned npz container: config echo, seed, and the parameter
    tensors in param_order. Round-trips bit-exactly."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": network.config.to_dict(),
        "seed": seed,
        "param_order": [name for name, _ in param_order(network.config)],
        "dtype": str(network.dtype),
        "extra": extra or {},
    }
    arrays = {"__meta__": np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)}
    for name, _ in param_order(network.config):
        arrays[name.replace(".", "__")] = network.params[name]
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[Network, dict]:
    """Returns (network, meta). Raises CheckpointError on corruption."""
    try:
        with np.load(path) as data:
            if "__meta__" not in data:
                raise CheckpointError(f"{path}: missing checkpoint metadata")
            meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
            if meta.get("format_version") != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"{path}: unsupported format_version "
                    f"{meta.get('format_version')}")
            config = NetworkConfig.from_dict(meta["config"])
            params = {}
            for name, shape in param_order(config):
                key = name.replace(".", "__")
                if key not in data:
                    raise CheckpointError(f"{path}: missing tensor {name}")
                arr = data[key]
                if tuple(arr.shape) != shape:
                    raise CheckpointError(
                        f"{path}: tensor {name} has shape {arr.shape}, "
                        f"expected {shape}")
                params[name] = arr
    except (zipfile.BadZipFile, ValueError, KeyError, EOFError,
            json.JSONDecodeError, OSError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    return Network(config, params), meta
