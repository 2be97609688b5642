"""Gatekeeper music detector.

A 6-layer separable-conv network scores music presence over a 446-frame
log-Mel window. With kernel 4 and stride 2 every conv layer consumes 2 new
input vectors per output vector, so a streaming evaluation emits a new
probability every 2^6 = 64 frames (640 ms). A smoothing/threshold gate
turns the probability stream into wake-up events.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import nnops
from .nnops import (
    Adam,
    batchnorm,
    batchnorm_bwd,
    bce_with_logits,
    dense,
    dense_bwd,
    dwconv1d,
    dwconv1d_bwd,
    relu,
    relu_bwd,
    sigmoid,
)


@dataclass(frozen=True)
class DetectorTopology:
    input_frames: int = 446
    channels: int = 32
    kernel: int = 4
    stride: int = 2
    n_layers: int = 6
    dense_hidden: int = 8
    batch_norm: bool = True

    def layer_lengths(self) -> list[int]:
        """Input length of each conv layer plus the flattened length."""
        lengths = [self.input_frames]
        for _ in range(self.n_layers):
            lengths.append((lengths[-1] - self.kernel) // self.stride + 1)
        return lengths

    @property
    def flat_size(self) -> int:
        return self.layer_lengths()[-1] * self.channels

    @property
    def cadence_frames(self) -> int:
        return self.stride**self.n_layers

    def parameter_count(self) -> int:
        c = self.channels
        per_conv = self.kernel * c + c * c + c
        if self.batch_norm:
            per_conv += 2 * c
        head = self.flat_size * self.dense_hidden + self.dense_hidden + self.dense_hidden + 1
        return self.n_layers * per_conv + head


def parameter_count(topo: DetectorTopology) -> int:
    return topo.parameter_count()


@dataclass
class DetectorWeights:
    topology: DetectorTopology
    tensors: dict[str, np.ndarray]
    quantized: bool = False


def init_weights(topo: DetectorTopology, seed: int = 0) -> DetectorWeights:
    rng = np.random.default_rng(seed)
    c = topo.channels
    t: dict[str, np.ndarray] = {}
    for i in range(topo.n_layers):
        t[f"conv{i}_dw"] = rng.normal(0, math.sqrt(2.0 / topo.kernel), (topo.kernel, c)).astype(np.float32)
        t[f"conv{i}_pw"] = rng.normal(0, math.sqrt(2.0 / c), (c, c)).astype(np.float32)
        t[f"conv{i}_b"] = np.zeros(c, dtype=np.float32)
        if topo.batch_norm:
            t[f"conv{i}_bn_gamma"] = np.ones(c, dtype=np.float32)
            t[f"conv{i}_bn_beta"] = np.zeros(c, dtype=np.float32)
            t[f"conv{i}_bn_mean"] = np.zeros(c, dtype=np.float32)
            t[f"conv{i}_bn_var"] = np.ones(c, dtype=np.float32)
    t["fc1_w"] = rng.normal(0, math.sqrt(2.0 / topo.flat_size), (topo.flat_size, topo.dense_hidden)).astype(np.float32)
    t["fc1_b"] = np.zeros(topo.dense_hidden, dtype=np.float32)
    t["fc2_w"] = rng.normal(0, math.sqrt(2.0 / topo.dense_hidden), (topo.dense_hidden, 1)).astype(np.float32)
    t["fc2_b"] = np.zeros(1, dtype=np.float32)
    return DetectorWeights(topology=topo, tensors=t)


def trainable_names(w: DetectorWeights) -> list[str]:
    return [n for n in sorted(w.tensors) if not n.endswith(("_bn_mean", "_bn_var"))]


def forward_batch(x: np.ndarray, w: DetectorWeights, train: bool = False):
    """Logits for a batch of windows. x: (B, input_frames, channels).

    Returns (logits (B,), cache). In train mode batch-norm uses batch
    statistics and updates the running stats in place.
    """
    topo = w.topology
    t = w.tensors
    cache = {"x": []}
    h = x
    for i in range(topo.n_layers):
        xin = h
        z = dwconv1d(xin, t[f"conv{i}_dw"], topo.stride)
        zp = dense(z, t[f"conv{i}_pw"], t[f"conv{i}_b"])
        if topo.batch_norm:
            y, bn_cache, rm, rv = batchnorm(
                zp, t[f"conv{i}_bn_gamma"], t[f"conv{i}_bn_beta"],
                t[f"conv{i}_bn_mean"], t[f"conv{i}_bn_var"], train,
            )
            if train:
                t[f"conv{i}_bn_mean"] = rm.astype(t[f"conv{i}_bn_mean"].dtype)
                t[f"conv{i}_bn_var"] = rv.astype(t[f"conv{i}_bn_var"].dtype)
        else:
            y, bn_cache = zp, None
        h = relu(y)
        cache["x"].append((xin, z, bn_cache, y))
    flat = h.reshape(h.shape[0], -1)
    h1 = dense(flat, t["fc1_w"], t["fc1_b"])
    a1 = relu(h1)
    logits = dense(a1, t["fc2_w"], t["fc2_b"])[:, 0]
    cache.update(flat=flat, h1=h1, a1=a1)
    return logits, cache


def backward_batch(dlogits: np.ndarray, w: DetectorWeights, cache) -> dict[str, np.ndarray]:
    topo = w.topology
    t = w.tensors
    grads: dict[str, np.ndarray] = {}
    dy = dlogits[:, None]
    da1, grads["fc2_w"], grads["fc2_b"] = dense_bwd(cache["a1"], t["fc2_w"], dy)
    dh1 = relu_bwd(cache["h1"], da1)
    dflat, grads["fc1_w"], grads["fc1_b"] = dense_bwd(cache["flat"], t["fc1_w"], dh1)
    dh = dflat.reshape(cache["flat"].shape[0], -1, topo.channels)
    for i in reversed(range(topo.n_layers)):
        xin, z, bn_cache, y = cache["x"][i]
        dyy = relu_bwd(y, dh)
        if topo.batch_norm:
            dzp, grads[f"conv{i}_bn_gamma"], grads[f"conv{i}_bn_beta"] = batchnorm_bwd(
                dyy, t[f"conv{i}_bn_gamma"], bn_cache
            )
        else:
            dzp = dyy
        dz, grads[f"conv{i}_pw"], grads[f"conv{i}_b"] = dense_bwd(z, t[f"conv{i}_pw"], dzp)
        dh, grads[f"conv{i}_dw"] = dwconv1d_bwd(xin, t[f"conv{i}_dw"], dz, topo.stride)
    return grads


def detector_forward(window: np.ndarray, w: DetectorWeights) -> float:
    """Music probability for one (input_frames, channels) log-Mel window."""
    window = np.asarray(window)
    topo = w.topology
    if window.shape != (topo.input_frames, topo.channels):
        raise ValueError(
            f"expected window of shape {(topo.input_frames, topo.channels)}, got {window.shape}"
        )
    if not np.isfinite(window).all():
        raise ValueError("window contains non-finite values")
    logits, _ = forward_batch(window[None].astype(np.float32), w, train=False)
    return float(sigmoid(logits)[0])


# ------------------------------------------------------------- streaming

class StreamingDetector:
    """Incremental evaluation: push one frame at a time.

    Each conv layer keeps at most `kernel` pending input vectors; when the
    buffer is full it emits one output vector and discards `stride` inputs.
    The head keeps the trailing flattened window of top-layer outputs.
    """

    def __init__(self, weights: DetectorWeights):
        self.w = weights
        topo = weights.topology
        self._buffers: list[list[np.ndarray]] = [[] for _ in range(topo.n_layers)]
        self._top: list[np.ndarray] = []
        self._top_len = topo.layer_lengths()[-1]
        self.frames_seen = 0

    def _layer_out(self, i: int, vecs: np.ndarray) -> np.ndarray:
        t = self.w.tensors
        topo = self.w.topology
        z = (vecs * t[f"conv{i}_dw"]).sum(axis=0)
        zp = z @ t[f"conv{i}_pw"] + t[f"conv{i}_b"]
        if topo.batch_norm:
            inv = 1.0 / np.sqrt(t[f"conv{i}_bn_var"] + nnops.BN_EPS)
            zp = t[f"conv{i}_bn_gamma"] * (zp - t[f"conv{i}_bn_mean"]) * inv + t[f"conv{i}_bn_beta"]
        return relu(zp)

    def push(self, frame: np.ndarray) -> float | None:
        topo = self.w.topology
        self.frames_seen += 1
        vec = np.asarray(frame, dtype=np.float32)
        emitted = None
        for i in range(topo.n_layers):
            self._buffers[i].append(vec)
            if len(self._buffers[i]) < topo.kernel:
                return emitted
            vec = self._layer_out(i, np.stack(self._buffers[i][: topo.kernel]))
            del self._buffers[i][: topo.stride]
        self._top.append(vec)
        if len(self._top) > self._top_len:
            self._top.pop(0)
        if len(self._top) == self._top_len:
            t = self.w.tensors
            flat = np.concatenate(self._top)
            a1 = relu(flat @ t["fc1_w"] + t["fc1_b"])
            logit = float(a1 @ t["fc2_w"][:, 0] + t["fc2_b"][0])
            emitted = float(sigmoid(np.array([logit]))[0])
        return emitted


def streaming_predictions(frames: np.ndarray, w: DetectorWeights) -> list[tuple[int, float]]:
    """Run the streaming detector over a frame sequence.

    Returns (frame_count_at_emission, probability) pairs; emissions occur at
    frame counts input_frames + cadence*k.
    """
    det = StreamingDetector(w)
    out = []
    for i in range(frames.shape[0]):
        p = det.push(frames[i])
        if p is not None:
            out.append((i + 1, p))
    return out


def batch_predictions(frames: np.ndarray, w: DetectorWeights) -> list[tuple[int, float]]:
    """Batch equivalent of streaming_predictions: evaluate every trailing
    window at the streaming cadence in one forward pass."""
    topo = w.topology
    n = frames.shape[0]
    ends = range(topo.input_frames, n + 1, topo.cadence_frames)
    windows = np.stack([frames[e - topo.input_frames : e] for e in ends]) if n >= topo.input_frames else None
    if windows is None:
        return []
    logits, _ = forward_batch(windows.astype(np.float32), w, train=False)
    return [(e, float(p)) for e, p in zip(ends, sigmoid(logits))]


# ------------------------------------------------------------------ gate

@dataclass(frozen=True)
class GateConfig:
    threshold: float = 0.5
    consecutive: int = 3
    smoothing_window_s: float = 4.0
    refractory_s: float = 60.0
    buffer_len_s: float = 8.0
    cadence_s: float = 0.64

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must be in (0, 1)")
        if self.consecutive < 1:
            raise ValueError("consecutive must be >= 1")


@dataclass
class GateEvent:
    index: int  # prediction index the event fired on
    time_s: float
    mean_confidence: float


def smooth_and_gate(predictions, cfg: GateConfig, start_time_s: float = 0.0) -> list[GateEvent]:
    """Sliding-mean smoothing plus c-consecutive-over-threshold triggering.

    Prediction i is timestamped start_time_s + i*cadence. After an event the
    gate is suppressed for refractory_s (measured fire to fire).
    """
    win = max(1, int(round(cfg.smoothing_window_s / cfg.cadence_s)))
    events: list[GateEvent] = []
    run = 0
    last_fire = -math.inf
    preds = list(predictions)
    for i, _ in enumerate(preds):
        smoothed = float(np.mean(preds[max(0, i - win + 1) : i + 1]))
        run = run + 1 if smoothed > cfg.threshold else 0
        t = start_time_s + i * cfg.cadence_s
        if run >= cfg.consecutive and t - last_fire >= cfg.refractory_s:
            events.append(GateEvent(index=i, time_s=t, mean_confidence=smoothed))
            last_fire = t
    return events


# ---------------------------------------------------------- quantization

def quantize_tensor(x: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Affine 8-bit quantization: returns (codes, scale, zero)."""
    lo, hi = float(x.min()), float(x.max())
    scale = max((hi - lo) / 255.0, 1e-8)
    q = np.clip(np.round((x - lo) / scale), 0, 255).astype(np.uint8)
    return q, scale, lo


def dequantize_tensor(q: np.ndarray, scale: float, zero: float) -> np.ndarray:
    return (q.astype(np.float32) * scale + zero).astype(np.float32)


def fold_batchnorm(w: DetectorWeights) -> DetectorWeights:
    """Fold batch-norm scale/shift/stats into the pointwise weights and bias."""
    topo = w.topology
    if not topo.batch_norm:
        return w
    t = dict(w.tensors)
    for i in range(topo.n_layers):
        gamma = t.pop(f"conv{i}_bn_gamma")
        beta = t.pop(f"conv{i}_bn_beta")
        mean = t.pop(f"conv{i}_bn_mean")
        var = t.pop(f"conv{i}_bn_var")
        s = gamma / np.sqrt(var + nnops.BN_EPS)
        t[f"conv{i}_pw"] = (t[f"conv{i}_pw"] * s).astype(np.float32)
        t[f"conv{i}_b"] = ((t[f"conv{i}_b"] - mean) * s + beta).astype(np.float32)
    return DetectorWeights(topology=replace(topo, batch_norm=False), tensors=t)


def quantize_weights(w: DetectorWeights, fold_bn: bool = True) -> DetectorWeights:
    """8-bit weights, dequantized back to float for inference.

    Round-trip error is within one quantization step per element. Batch norm
    is folded first so the stored model matches the deployment layout.
    """
    src = fold_batchnorm(w) if fold_bn else w
    t = {}
    for name, x in src.tensors.items():
        q, scale, zero = quantize_tensor(x)
        t[name] = dequantize_tensor(q, scale, zero).reshape(x.shape)
    return DetectorWeights(topology=src.topology, tensors=t, quantized=True)


# -------------------------------------------------------------- training

@dataclass
class DetectorTrainConfig:
    steps: int = 400
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    eval_fraction: float = 0.0  # reserved for callers; trainer does not split


def train_detector(clips, labels, topo: DetectorTopology | None = None,
                   hyper: DetectorTrainConfig | None = None) -> DetectorWeights:
    """Train on labeled log-Mel clips (each >= input_frames long).

    Every step takes a random input_frames sub-clip of each sampled clip,
    minimizing binary cross-entropy with Adam. Deterministic given the seed.
    """
    topo = topo or DetectorTopology()
    hyper = hyper or DetectorTrainConfig()
    if len(clips) == 0:
        raise ValueError("empty training corpus")
    for c in clips:
        if c.shape[0] < topo.input_frames:
            raise ValueError(f"clip of {c.shape[0]} frames shorter than {topo.input_frames}")
    labels = np.asarray(labels, dtype=np.float32)
    rng = np.random.default_rng(hyper.seed)
    w = init_weights(topo, seed=hyper.seed)
    opt = Adam(lr=hyper.lr)
    n = len(clips)
    for _ in range(hyper.steps):
        idx = rng.integers(0, n, size=min(hyper.batch_size, n))
        batch = np.empty((len(idx), topo.input_frames, topo.channels), dtype=np.float32)
        for row, j in enumerate(idx):
            clip = clips[j]
            start = rng.integers(0, clip.shape[0] - topo.input_frames + 1)
            batch[row] = clip[start : start + topo.input_frames]
        logits, cache = forward_batch(batch, w, train=True)
        _, dlogits = bce_with_logits(logits, labels[idx])
        grads = backward_batch(dlogits, w, cache)
        opt.step(w.tensors, grads)
    return w


def training_loss(w: DetectorWeights, batch: np.ndarray, labels: np.ndarray, train: bool = True):
    """Loss and gradients on one batch; used by trainer tests and gradient checks."""
    logits, cache = forward_batch(batch, w, train=train)
    loss, dlogits = bce_with_logits(logits, np.asarray(labels, dtype=batch.dtype))
    grads = backward_batch(dlogits, w, cache)
    return loss, grads
