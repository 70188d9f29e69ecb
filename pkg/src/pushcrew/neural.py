"""Minimal differentiable stack: dense MLPs with analytic gradients, a
diagonal-Gaussian policy head, Adam, and checkpoint persistence.

Everything runs on float64 numpy arrays. Forward passes and sampling are
read-only on parameters; updates require exclusive access (single learner).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import CorruptFile, NonFiniteGradient, ShapeMismatch, VersionMismatch

CHECKPOINT_VERSION = 1
LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
LN_2PI = math.log(2.0 * math.pi)


@dataclass
class MlpParams:
    """Dense MLP parameters: tanh hidden activations, linear output.

    weights[i] has shape (fan_in, fan_out); biases[i] has shape (fan_out,).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat_arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in >= n_out:
        return q[:n_in, :n_out]
    return q[:n_out, :n_in].T


def mlp_init(sizes: Sequence[int], rng: np.random.Generator, out_scale: float = 1.0) -> MlpParams:
    """Orthogonal-style init; entries end up with scale ~ 1/sqrt(fan_in).

    The final layer is additionally scaled by `out_scale` (policies use 0.01
    for near-zero initial outputs).
    """
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = _orthogonal(rng, n_in, n_out)
        if i == len(sizes) - 2:
            w = w * out_scale
        weights.append(np.ascontiguousarray(w, dtype=np.float64))
        biases.append(np.zeros(n_out, dtype=np.float64))
    return MlpParams(weights, biases)


def forward(net: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched forward pass. Returns (output, cache) for the backward pass."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != net.weights[0].shape[0]:
        raise ShapeMismatch(
            f"input dim {x.shape[1]} does not match layer dim {net.weights[0].shape[0]}"
        )
    cache = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        h = z if i == last else np.tanh(z)
        cache.append(h)
    return (h[0] if squeeze else h), cache


def backward(
    net: MlpParams, cache: list[np.ndarray], dy: np.ndarray
) -> tuple[MlpParams, np.ndarray]:
    """Exact gradients of sum(dy * y) w.r.t. parameters and input."""
    dy = np.asarray(dy, dtype=np.float64)
    if dy.ndim == 1:
        dy = dy[None, :]
    gw = [None] * len(net.weights)
    gb = [None] * len(net.biases)
    grad = dy
    last = len(net.weights) - 1
    for i in range(last, -1, -1):
        if i != last:
            grad = grad * (1.0 - cache[i + 1] ** 2)  # tanh'
        gw[i] = cache[i].T @ grad
        gb[i] = grad.sum(axis=0)
        grad = grad @ net.weights[i].T
    return MlpParams(gw, gb), grad


class ActionSample(NamedTuple):
    action: np.ndarray  # clamped to bounds, what the simulator executes
    log_prob: np.ndarray  # density of the unclamped sample
    raw: np.ndarray  # unclamped sample, stored for ratio computation


@dataclass
class GaussianPolicy:
    """Diagonal Gaussian policy: MLP mean, state-independent learned log-std."""

    mean_net: MlpParams
    log_std: np.ndarray
    bounds: np.ndarray | None = None  # (act_dim,) symmetric box, or None

    @classmethod
    def create(
        cls,
        obs_dim: int,
        act_dim: int,
        hidden: Sequence[int],
        rng: np.random.Generator,
        bounds: Sequence[float] | None = None,
        log_std_init: float = -0.5,
    ) -> "GaussianPolicy":
        net = mlp_init([obs_dim, *hidden, act_dim], rng, out_scale=0.01)
        ls = np.full(act_dim, float(log_std_init))
        b = None if bounds is None else np.asarray(bounds, dtype=np.float64)
        return cls(net, ls, b)

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def std(self) -> np.ndarray:
        return np.exp(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))

    def mean(self, obs: np.ndarray) -> np.ndarray:
        y, _ = forward(self.mean_net, obs)
        return y

    def mean_clamped(self, obs: np.ndarray) -> np.ndarray:
        y = self.mean(obs)
        if self.bounds is not None:
            y = np.clip(y, -self.bounds, self.bounds)
        return y


def sample_action(policy: GaussianPolicy, obs: np.ndarray, rng: np.random.Generator) -> ActionSample:
    """Draw a ~ N(mean(obs), std^2). The log-prob is computed on the raw
    sample; the executed action is clamped to the policy bounds afterwards."""
    mean = policy.mean(obs)
    std = policy.std()
    noise = rng.standard_normal(mean.shape)
    raw = mean + std * noise
    lp = log_prob(policy, obs, raw, mean=mean)
    action = raw if policy.bounds is None else np.clip(raw, -policy.bounds, policy.bounds)
    return ActionSample(action, lp, raw)


def log_prob(
    policy: GaussianPolicy,
    obs: np.ndarray,
    action: np.ndarray,
    mean: np.ndarray | None = None,
) -> np.ndarray:
    """Diagonal Gaussian log-density of `action` (raw, unclamped) given obs."""
    if mean is None:
        mean = policy.mean(obs)
    std = policy.std()
    z = (np.asarray(action) - mean) / std
    ls = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    return -0.5 * (z * z).sum(axis=-1) - ls.sum() - 0.5 * LN_2PI * mean.shape[-1]


def entropy(policy: GaussianPolicy) -> float:
    """Differential entropy: sum_d (log_std_d + 0.5 ln(2 pi e))."""
    ls = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    return float(ls.sum() + 0.5 * ls.size * (LN_2PI + 1.0))


@dataclass
class AdamState:
    """Adam with bias correction; moments are allocated lazily per parameter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> list[np.ndarray]:
    """One Adam update. Mutates `params` in place and returns them.

    Raises NonFiniteGradient (before touching any parameter) when a gradient
    contains NaN or infinity, reporting the offending entry.
    """
    if len(params) != len(grads):
        raise ShapeMismatch("params and grads differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeMismatch(f"param {i} shape {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in parameter {i} (shape {g.shape})")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# checkpoint persistence
# ---------------------------------------------------------------------------


def save_params(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float64 arrays: a JSON manifest line followed by a
    little-endian float64 blob, guarded by a SHA-256 checksum."""
    names = list(arrays.keys())
    blob = b"".join(
        np.ascontiguousarray(arrays[n], dtype="<f8").tobytes() for n in names
    )
    manifest = {
        "version": CHECKPOINT_VERSION,
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
        "meta": meta or {},
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        f.write(blob)


def load_params(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint written by save_params. Round-trips bit-exactly."""
    with open(path, "rb") as f:
        header = f.readline()
        blob = f.read()
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFile(f"unreadable checkpoint manifest: {e}") from e
    version = manifest.get("version")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if hashlib.sha256(blob).hexdigest() != manifest.get("blob_sha256"):
        raise CorruptFile("checkpoint blob failed its checksum")
    arrays = {}
    offset = 0
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise CorruptFile("checkpoint blob is truncated")
        arrays[entry["name"]] = (
            np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += nbytes
    return arrays, manifest.get("meta", {})


def policy_to_arrays(policy: GaussianPolicy, prefix: str = "") -> dict[str, np.ndarray]:
    out = {}
    for i, (w, b) in enumerate(zip(policy.mean_net.weights, policy.mean_net.biases)):
        out[f"{prefix}layer{i}.W"] = w
        out[f"{prefix}layer{i}.b"] = b
    out[f"{prefix}log_std"] = policy.log_std
    if policy.bounds is not None:
        out[f"{prefix}bounds"] = policy.bounds
    return out


def policy_from_arrays(arrays: dict[str, np.ndarray], prefix: str = "") -> GaussianPolicy:
    weights, biases = [], []
    i = 0
    while f"{prefix}layer{i}.W" in arrays:
        weights.append(arrays[f"{prefix}layer{i}.W"])
        biases.append(arrays[f"{prefix}layer{i}.b"])
        i += 1
    if not weights:
        raise CorruptFile(f"no layers found under prefix {prefix!r}")
    bounds = arrays.get(f"{prefix}bounds")
    return GaussianPolicy(MlpParams(weights, biases), arrays[f"{prefix}log_std"], bounds)


def mlp_to_arrays(net: MlpParams, prefix: str = "") -> dict[str, np.ndarray]:
    out = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}layer{i}.W"] = w
        out[f"{prefix}layer{i}.b"] = b
    return out


def mlp_from_arrays(arrays: dict[str, np.ndarray], prefix: str = "") -> MlpParams:
    weights, biases = [], []
    i = 0
    while f"{prefix}layer{i}.W" in arrays:
        weights.append(arrays[f"{prefix}layer{i}.W"])
        biases.append(arrays[f"{prefix}layer{i}.b"])
        i += 1
    if not weights:
        raise CorruptFile(f"no layers found under prefix {prefix!r}")
    return MlpParams(weights, biases)
