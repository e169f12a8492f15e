"""Policy interface and reference implementations across capacity tiers.

Four kinds span the architecture axis at desk scale: ``linear`` (flat map),
``mlp`` (two hidden layers), ``frozen_encoder_head`` (fixed random-feature
encoder with a trainable head, mean-pooled over frames), and ``recurrent``
(gated running state over per-frame embeddings).  All operate on clip
windows of observations and emit bounded controls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .driving_sim import Controls, Observation, DEFAULTS

KINDS = ("linear", "mlp", "frozen_encoder_head", "recurrent")

OBS_DIM = Observation.DIM
ENCODER_DIM = 64
HIDDEN_DIM = 64
RECURRENT_DIM = 32


@dataclass(frozen=True)
class ClipSpec:
    """Temporal window: T frames subsampled at the given stride (T=1: single frame)."""

    t: int = 1
    stride: int = 1

    def __post_init__(self):
        if self.t < 1 or self.stride < 1:
            raise ValueError("clip T and stride must be >= 1")


@dataclass(frozen=True)
class FrozenEncoder:
    """Seed-pinned random projection 29 -> 64 with tanh; never trained."""

    seed: int
    weight: np.ndarray = field(repr=False, default=None)
    bias: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.weight is None:
            rng = np.random.default_rng(self.seed)
            w = rng.normal(0.0, 1.0 / np.sqrt(OBS_DIM), (ENCODER_DIM, OBS_DIM))
            b = rng.normal(0.0, 0.1, ENCODER_DIM)
            object.__setattr__(self, "weight", w)
            object.__setattr__(self, "bias", b)

    @property
    def id(self) -> str:
        return f"rp{ENCODER_DIM}-s{self.seed}"


def encode(encoder: FrozenEncoder, obs: Observation) -> np.ndarray:
    """Fixed 64-dim descriptor of one observation; independent of training."""
    return np.tanh(encoder.weight @ obs.vector() + encoder.bias)


@dataclass
class Policy:
    kind: str
    clip: ClipSpec
    params: dict[str, np.ndarray]
    encoder: FrozenEncoder | None = None
    normalizer: tuple[np.ndarray, np.ndarray] | None = None  # per-frame (mean, std)
    policy_id: str = ""
    train_digest: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "frozen_encoder_head" and self.encoder is None:
            raise ValueError("frozen_encoder_head requires an encoder")
        expected = param_shapes(self.kind, self.clip)
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(
                    f"param {name} has shape {self.params[name].shape}, expected {shape}"
                )


def param_shapes(kind: str, clip: ClipSpec) -> dict[str, tuple[int, ...]]:
    flat_dim = OBS_DIM * clip.t
    if kind == "linear":
        return {"W": (2, flat_dim), "b": (2,)}
    if kind == "mlp":
        return {
            "W1": (HIDDEN_DIM, flat_dim),
            "b1": (HIDDEN_DIM,),
            "W2": (HIDDEN_DIM, HIDDEN_DIM),
            "b2": (HIDDEN_DIM,),
            "W3": (2, HIDDEN_DIM),
            "b3": (2,),
        }
    if kind == "frozen_encoder_head":
        return {
            "W1": (HIDDEN_DIM, ENCODER_DIM),
            "b1": (HIDDEN_DIM,),
            "W2": (2, HIDDEN_DIM),
            "b2": (2,),
        }
    if kind == "recurrent":
        f = RECURRENT_DIM
        return {
            "We": (f, OBS_DIM),
            "be": (f,),
            "Wg": (f, OBS_DIM),
            "Ug": (f, f),
            "bg": (f,),
            "Wo": (2, f),
            "bo": (2,),
        }
    raise ValueError(f"unknown policy kind {kind!r}")


def init_policy(
    kind: str,
    clip: ClipSpec = ClipSpec(),
    seed: int = 0,
    encoder: FrozenEncoder | None = None,
    policy_id: str = "",
) -> Policy:
    """Fresh policy: zero-initialized linear, small random weights otherwise."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(kind, clip).items():
        if kind == "linear" or name.startswith("b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = shape[-1]
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)
    if kind == "frozen_encoder_head" and encoder is None:
        encoder = FrozenEncoder(seed=seed)
    return Policy(
        kind=kind, clip=clip, params=params, encoder=encoder,
        policy_id=policy_id or kind,
    )


def build_window(history: Sequence[Observation], clip: ClipSpec) -> list[Observation]:
    """Clip window ending at the newest observation, subsampled at the stride.

    Steps earlier than the episode start are front-padded with zero
    observations, so the window is defined from the very first step.
    """
    last = len(history) - 1
    window: list[Observation] = []
    for i in range(clip.t - 1, -1, -1):
        idx = last - i * clip.stride
        window.append(history[idx] if idx >= 0 else Observation.zeros())
    return window


def window_matrix(window: Sequence[Observation]) -> np.ndarray:
    return np.stack([o.vector() for o in window])


def normalize_frames(policy: Policy, frames: np.ndarray) -> np.ndarray:
    """Apply the policy's per-frame standardization (identity if untrained)."""
    if policy.normalizer is None:
        return frames
    mean, std = policy.normalizer
    return (frames - mean) / std


def head_forward(policy: Policy, pooled: np.ndarray) -> np.ndarray:
    """frozen_encoder_head head on pooled encoder features (batch or single)."""
    p = policy.params
    h1 = np.tanh(pooled @ p["W1"].T + p["b1"])
    return h1 @ p["W2"].T + p["b2"]


def raw_outputs(policy: Policy, frames_batch: np.ndarray) -> np.ndarray:
    """Unclipped (steer, throttle) for a batch of windows, shape (N, T, 29).

    This is the exact forward pass the trainer differentiates; predict()
    adds output clipping on top.
    """
    x = frames_batch
    p = policy.params
    if policy.kind == "frozen_encoder_head":
        z = np.tanh(x @ policy.encoder.weight.T + policy.encoder.bias)
        pooled = z.mean(axis=1)
        return head_forward(policy, pooled)
    x = normalize_frames(policy, x)
    if policy.kind == "linear":
        flat = x.reshape(x.shape[0], -1)
        return flat @ p["W"].T + p["b"]
    if policy.kind == "mlp":
        flat = x.reshape(x.shape[0], -1)
        h1 = np.tanh(flat @ p["W1"].T + p["b1"])
        h2 = np.tanh(h1 @ p["W2"].T + p["b2"])
        return h2 @ p["W3"].T + p["b3"]
    if policy.kind == "recurrent":
        n = x.shape[0]
        h = np.zeros((n, RECURRENT_DIM))
        for t in range(x.shape[1]):
            xt = x[:, t]
            f = np.tanh(xt @ p["We"].T + p["be"])
            g = _sigmoid(xt @ p["Wg"].T + h @ p["Ug"].T + p["bg"])
            h = (1.0 - g) * h + g * f
        return h @ p["Wo"].T + p["bo"]
    raise ValueError(f"unknown policy kind {policy.kind!r}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def predict(policy: Policy, window: Sequence[Observation]) -> Controls:
    """Deterministic controls for one clip window, clipped to control bounds."""
    if len(window) != policy.clip.t:
        raise ValueError(
            f"window length {len(window)} != clip T {policy.clip.t}"
        )
    if policy.clip.t == 1:
        frames = window[0].vector().reshape(1, 1, OBS_DIM)
    else:
        frames = window_matrix(window)[None, :, :]
    steer, throttle = raw_outputs(policy, frames)[0]
    limit = DEFAULTS.steer_limit
    steer = -limit if steer < -limit else (limit if steer > limit else steer)
    throttle = -1.0 if throttle < -1.0 else (1.0 if throttle > 1.0 else throttle)
    return Controls(steer_curvature=float(steer), throttle=float(throttle))


def save_policy(path: str | Path, policy: Policy) -> None:
    """Checkpoint: kind, clip, encoder id, flat params with shapes, digest."""
    names = sorted(policy.params)
    payload = {
        "format": "factorshift-policy-v1",
        "policy_id": policy.policy_id,
        "kind": policy.kind,
        "clip": {"t": policy.clip.t, "stride": policy.clip.stride},
        "encoder_seed": policy.encoder.seed if policy.encoder else None,
        "encoder_id": policy.encoder.id if policy.encoder else None,
        "normalizer": (
            {
                "mean": policy.normalizer[0].tolist(),
                "std": policy.normalizer[1].tolist(),
            }
            if policy.normalizer is not None
            else None
        ),
        "shapes": [[name, list(policy.params[name].shape)] for name in names],
        "params": np.concatenate(
            [policy.params[name].ravel() for name in names]
        ).tolist() if names else [],
        "train_digest": policy.train_digest,
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_policy(path: str | Path) -> Policy:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != "factorshift-policy-v1":
        raise ValueError(f"{path}: not a policy checkpoint")
    clip = ClipSpec(**payload["clip"])
    flat = np.asarray(payload["params"], dtype=float)
    params: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in payload["shapes"]:
        size = int(np.prod(shape))
        params[name] = flat[offset : offset + size].reshape(shape)
        offset += size
    if offset != flat.size:
        raise ValueError(f"{path}: parameter payload size mismatch")
    normalizer = None
    if payload["normalizer"] is not None:
        normalizer = (
            np.asarray(payload["normalizer"]["mean"], dtype=float),
            np.asarray(payload["normalizer"]["std"], dtype=float),
        )
    encoder = (
        FrozenEncoder(seed=payload["encoder_seed"])
        if payload["encoder_seed"] is not None
        else None
    )
    return Policy(
        kind=payload["kind"],
        clip=clip,
        params=params,
        encoder=encoder,
        normalizer=normalizer,
        policy_id=payload["policy_id"],
        train_digest=payload["train_digest"],
    )
