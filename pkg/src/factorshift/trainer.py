"""Expert demonstration collection and weighted-MSE policy fitting.

Training is plain SGD with momentum 0.9 under cosine learning-rate decay,
with early stopping on validation loss; validation is split by whole traces,
never by interleaved samples.  Gradients are computed analytically and are
verified against central finite differences in the test suite.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import driving_sim as sim
from .driving_sim import Controls, SimParams, DEFAULTS
from .factor_space import EnvConfig, canonical_sort
from .policies import (
    ClipSpec,
    Policy,
    build_window,
    normalize_frames,
    raw_outputs,
    window_matrix,
    _sigmoid,
)
from .seeding import derive_seed


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    steer: float = 1.0
    throttle: float = 1.0

    def __post_init__(self):
        if self.steer < 0 or self.throttle < 0 or (self.steer == 0 and self.throttle == 0):
            raise ValueError("loss weights must be >= 0 and not both zero")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 200
    early_stop_patience: int = 10  # validation checks without improvement
    validation_fraction: float = 0.2  # fraction of traces held out
    seed: int = 0
    batch_size: int = 64
    val_interval: int = 200  # optimizer steps between validation checks

    def __post_init__(self):
        if self.learning_rate not in (1e-3, 1e-4):
            raise ValueError("learning_rate must be 1e-3 or 1e-4")
        if self.early_stop_patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")


@dataclass
class Trace:
    """One logged expert episode on a single configuration."""

    tag: str
    trace_id: str
    windows: np.ndarray  # (horizon, T, 29)
    targets: np.ndarray  # (horizon, 2)


@dataclass
class DemoDataset:
    traces: list[Trace]
    clip: ClipSpec

    @property
    def trace_count(self) -> int:
        return len(self.traces)

    @property
    def sample_count(self) -> int:
        return sum(t.windows.shape[0] for t in self.traces)

    def tags(self) -> set[str]:
        return {t.tag for t in self.traces}

    def stacked(self, indices: list[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
        traces = self.traces if indices is None else [self.traces[i] for i in indices]
        x = np.concatenate([t.windows for t in traces])
        y = np.concatenate([t.targets for t in traces])
        return x, y


def collect_demos(
    support: frozenset[EnvConfig],
    traces_per_config: int,
    clip: ClipSpec,
    seed: int,
    params: SimParams = DEFAULTS,
) -> DemoDataset:
    """Run the expert for a full horizon per trace and log (window, controls).

    Trace seeds live in their own derivation domain, so they never collide
    with evaluation seeds.
    """
    if traces_per_config < 1:
        raise ValueError("traces_per_config must be >= 1")
    traces: list[Trace] = []
    for config in canonical_sort(support):
        for r in range(traces_per_config):
            route = sim.generate_route(
                derive_seed(seed, "demo-route", config.tag, r), config.scene, params
            )
            state = sim.init_state(derive_seed(seed, "demo", config.tag, r), params)
            history: list[sim.Observation] = []
            windows = np.empty((params.horizon, clip.t, 29))
            targets = np.empty((params.horizon, 2))
            for t in range(params.horizon):
                obs = sim.observe(state, route, config, params)
                history.append(obs)
                windows[t] = window_matrix(build_window(history, clip))
                controls = sim.expert_controls(state, route, params)
                targets[t] = (controls.steer_curvature, controls.throttle)
                state, events = sim.step(state, route, controls, params)
                if events:
                    raise RuntimeError(
                        f"expert infraction {events} during demo on {config.tag} "
                        f"(trace {r}, step {t}); simulator constants need recalibration"
                    )
            traces.append(Trace(config.tag, f"{config.tag}/{r}", windows, targets))
    return DemoDataset(traces=traces, clip=clip)


def loss(pred: Controls, target: Controls, w: LossWeights) -> float:
    """Weighted squared error of a single prediction."""
    return (
        w.steer * (pred.steer_curvature - target.steer_curvature) ** 2
        + w.throttle * (pred.throttle - target.throttle) ** 2
    )


def batch_loss(outputs: np.ndarray, targets: np.ndarray, w: LossWeights) -> float:
    """Mean weighted squared error over a batch of raw (steer, throttle) rows."""
    err = outputs - targets
    return float(np.mean(w.steer * err[:, 0] ** 2 + w.throttle * err[:, 1] ** 2))


def _output_grad(outputs: np.ndarray, targets: np.ndarray, w: LossWeights) -> np.ndarray:
    n = outputs.shape[0]
    grad = 2.0 * (outputs - targets) / n
    grad[:, 0] *= w.steer
    grad[:, 1] *= w.throttle
    return grad


def gradients(
    policy: Policy, frames: np.ndarray, targets: np.ndarray, w: LossWeights
) -> dict[str, np.ndarray]:
    """Analytic gradients of batch_loss wrt every trainable parameter block."""
    p = policy.params
    if policy.kind == "frozen_encoder_head":
        z = np.tanh(frames @ policy.encoder.weight.T + policy.encoder.bias)
        pooled = z.mean(axis=1)
        h1 = np.tanh(pooled @ p["W1"].T + p["b1"])
        out = h1 @ p["W2"].T + p["b2"]
        d_out = _output_grad(out, targets, w)
        d_h1 = d_out @ p["W2"]
        d_z1 = d_h1 * (1.0 - h1**2)
        return {
            "W2": d_out.T @ h1,
            "b2": d_out.sum(axis=0),
            "W1": d_z1.T @ pooled,
            "b1": d_z1.sum(axis=0),
        }

    x = normalize_frames(policy, frames)
    if policy.kind == "linear":
        flat = x.reshape(x.shape[0], -1)
        out = flat @ p["W"].T + p["b"]
        d_out = _output_grad(out, targets, w)
        return {"W": d_out.T @ flat, "b": d_out.sum(axis=0)}
    if policy.kind == "mlp":
        flat = x.reshape(x.shape[0], -1)
        h1 = np.tanh(flat @ p["W1"].T + p["b1"])
        h2 = np.tanh(h1 @ p["W2"].T + p["b2"])
        out = h2 @ p["W3"].T + p["b3"]
        d_out = _output_grad(out, targets, w)
        d_h2 = d_out @ p["W3"]
        d_z2 = d_h2 * (1.0 - h2**2)
        d_h1 = d_z2 @ p["W2"]
        d_z1 = d_h1 * (1.0 - h1**2)
        return {
            "W3": d_out.T @ h2,
            "b3": d_out.sum(axis=0),
            "W2": d_z2.T @ h1,
            "b2": d_z2.sum(axis=0),
            "W1": d_z1.T @ flat,
            "b1": d_z1.sum(axis=0),
        }
    if policy.kind == "recurrent":
        n, t_len = x.shape[0], x.shape[1]
        dim = p["be"].shape[0]
        h = np.zeros((n, dim))
        fs, gs, h_prevs = [], [], []
        for t in range(t_len):
            xt = x[:, t]
            f = np.tanh(xt @ p["We"].T + p["be"])
            g = _sigmoid(xt @ p["Wg"].T + h @ p["Ug"].T + p["bg"])
            fs.append(f)
            gs.append(g)
            h_prevs.append(h)
            h = (1.0 - g) * h + g * f
        out = h @ p["Wo"].T + p["bo"]
        d_out = _output_grad(out, targets, w)
        grads = {name: np.zeros_like(arr) for name, arr in p.items()}
        grads["Wo"] = d_out.T @ h
        grads["bo"] = d_out.sum(axis=0)
        d_h = d_out @ p["Wo"]
        for t in range(t_len - 1, -1, -1):
            xt = x[:, t]
            f, g, h_prev = fs[t], gs[t], h_prevs[t]
            d_f = d_h * g
            d_zf = d_f * (1.0 - f**2)
            grads["We"] += d_zf.T @ xt
            grads["be"] += d_zf.sum(axis=0)
            d_g = d_h * (f - h_prev)
            d_a = d_g * g * (1.0 - g)
            grads["Wg"] += d_a.T @ xt
            grads["Ug"] += d_a.T @ h_prev
            grads["bg"] += d_a.sum(axis=0)
            d_h = d_h * (1.0 - g) + d_a @ p["Ug"]
        return grads
    raise ValueError(f"unknown policy kind {policy.kind!r}")


def gradient_check(
    policy: Policy,
    frames: np.ndarray,
    targets: np.ndarray,
    w: LossWeights,
    probes_per_block: int = 10,
    seed: int = 0,
) -> dict[str, float]:
    """Max relative error of analytic vs central finite differences per block."""
    rng = np.random.default_rng(seed)
    analytic = gradients(policy, frames, targets, w)
    worst: dict[str, float] = {}
    for name, block in policy.params.items():
        errs = []
        flat = block.ravel()
        for _ in range(probes_per_block):
            idx = int(rng.integers(flat.size))
            h = 1e-5 * max(1.0, abs(flat[idx]))
            orig = flat[idx]
            flat[idx] = orig + h
            up = batch_loss(raw_outputs(policy, frames), targets, w)
            flat[idx] = orig - h
            down = batch_loss(raw_outputs(policy, frames), targets, w)
            flat[idx] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic[name].ravel()[idx]
            errs.append(abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
        worst[name] = max(errs)
    return worst


def _train_digest(policy: Policy, data: DemoDataset, cfg: TrainConfig, w: LossWeights) -> str:
    desc = {
        "kind": policy.kind,
        "clip": [policy.clip.t, policy.clip.stride],
        "encoder": policy.encoder.id if policy.encoder else None,
        "lr": cfg.learning_rate,
        "max_epochs": cfg.max_epochs,
        "patience": cfg.early_stop_patience,
        "val_fraction": cfg.validation_fraction,
        "seed": cfg.seed,
        "batch": cfg.batch_size,
        "weights": [w.steer, w.throttle],
        "traces": sorted(t.trace_id for t in data.traces),
        "samples": data.sample_count,
    }
    return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TrainReport:
    """Per-validation-check loss curve plus the selected checkpoint index."""

    checks: list[tuple[int, float, float]] = field(default_factory=list)  # (step, train, val)
    best_check: int = 0
    stopped_early: bool = False


def split_traces(data: DemoDataset, cfg: TrainConfig) -> tuple[list[int], list[int]]:
    """Deterministic whole-trace train/validation split."""
    n = data.trace_count
    n_val = int(round(cfg.validation_fraction * n))
    n_val = min(max(n_val, 1 if cfg.validation_fraction > 0 and n > 1 else 0), n - 1)
    order = list(np.random.default_rng(derive_seed(cfg.seed, "split")).permutation(n))
    val = sorted(order[:n_val])
    train = sorted(order[n_val:])
    return train, val


def train(
    policy_init: Policy,
    data: DemoDataset,
    cfg: TrainConfig,
    w: LossWeights = LossWeights(),
) -> tuple[Policy, TrainReport]:
    """Fit a policy by SGD; returns the parameters with best validation loss.

    The initial parameters count as a candidate, so the selected model is
    never worse (on validation) than policy_init.
    """
    if data.trace_count == 0:
        raise ValueError("demo dataset is empty")
    if data.clip != policy_init.clip:
        raise ValueError("dataset clip does not match the policy clip")
    if cfg.max_epochs == 0:
        return policy_init, TrainReport()

    train_idx, val_idx = split_traces(data, cfg)
    x_train, y_train = data.stacked(train_idx)
    if val_idx:
        x_val, y_val = data.stacked(val_idx)
    else:
        x_val, y_val = x_train, y_train  # no held-out traces: validate on train

    params = {k: v.copy() for k, v in policy_init.params.items()}
    normalizer = policy_init.normalizer
    if policy_init.kind != "frozen_encoder_head" and normalizer is None:
        mean = x_train.reshape(-1, x_train.shape[-1]).mean(axis=0)
        std = x_train.reshape(-1, x_train.shape[-1]).std(axis=0)
        normalizer = (mean, np.maximum(std, 0.05))
    model = replace(policy_init, params=params, normalizer=normalizer)

    rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    report = TrainReport()
    n = x_train.shape[0]

    def validate(step_count: int) -> None:
        val_loss = batch_loss(raw_outputs(model, x_val), y_val, w)
        train_loss = batch_loss(raw_outputs(model, x_train), y_train, w)
        if not math.isfinite(val_loss) or not math.isfinite(train_loss):
            raise TrainingDiverged(
                f"non-finite loss at step {step_count} (train={train_loss}, val={val_loss})"
            )
        report.checks.append((step_count, train_loss, val_loss))

    best_params = {k: v.copy() for k, v in params.items()}
    validate(0)
    best_val = report.checks[0][2]
    since_best = 0
    step_count = 0
    stop = False
    for epoch in range(cfg.max_epochs):
        lr = cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.max_epochs))
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grads = gradients(model, x_train[batch], y_train[batch], w)
            for name in params:
                velocity[name] = 0.9 * velocity[name] - lr * grads[name]
                params[name] += velocity[name]
            step_count += 1
            if step_count % cfg.val_interval == 0:
                validate(step_count)
                if report.checks[-1][2] < best_val - 1e-15:
                    best_val = report.checks[-1][2]
                    best_params = {k: v.copy() for k, v in params.items()}
                    report.best_check = len(report.checks) - 1
                    since_best = 0
                else:
                    since_best += 1
                    if since_best >= cfg.early_stop_patience:
                        report.stopped_early = True
                        stop = True
                        break
        if stop:
            break
    if step_count % cfg.val_interval != 0:
        validate(step_count)
        if report.checks[-1][2] < best_val:
            best_val = report.checks[-1][2]
            best_params = {k: v.copy() for k, v in params.items()}
            report.best_check = len(report.checks) - 1

    final = replace(
        model,
        params=best_params,
        train_digest=_train_digest(policy_init, data, cfg, w),
    )
    return final, report


def write_train_manifest(path, report: TrainReport, policy: Policy, cfg: TrainConfig) -> None:
    """Training run manifest: config digest, seed, loss curve as text."""
    lines = [
        f"policy_id = {policy.policy_id}",
        f"kind = {policy.kind}",
        f"train_digest = {policy.train_digest}",
        f"seed = {cfg.seed}",
        f"learning_rate = {cfg.learning_rate}",
        f"stopped_early = {report.stopped_early}",
        f"best_check = {report.best_check}",
        "step\ttrain_loss\tval_loss",
    ]
    lines += [f"{s}\t{tr:.8f}\t{vl:.8f}" for s, tr, vl in report.checks]
    from pathlib import Path

    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
