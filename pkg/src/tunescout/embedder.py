"""Neural fingerprinter: one unit-norm d-dimensional embedding per second.

A 4-layer strided conv stack over a 96x32 log-Mel window feeds a two-level
divide-and-encode head: the flattened features are split into independent
branches, each mapped through its own small dense pair, concatenated to d
values and L2-normalized.
"""

import math
from dataclasses import dataclass

import numpy as np

from .nnops import (
    Adam,
    batchnorm,
    batchnorm_bwd,
    conv2d,
    conv2d_bwd,
    dense,
    dense_bwd,
    elu,
    elu_bwd,
    l2_normalize,
    l2_normalize_bwd,
)


@dataclass(frozen=True)
class EmbedderTopology:
    frames: int = 96
    mel_bins: int = 32
    conv_channels: tuple = (32, 64, 64, 128)
    kernel: int = 3
    stride: int = 2
    branches: int = 8
    branch_hidden: int = 32
    dim: int = 96
    hop_frames: int = 100  # one fingerprint per second at a 10 ms hop

    def __post_init__(self):
        if self.dim % self.branches != 0:
            raise ValueError(f"dim {self.dim} not divisible by {self.branches} branches")

    def conv_shapes(self) -> list[tuple[int, int, int]]:
        h, w = self.frames, self.mel_bins
        shapes = []
        for c in self.conv_channels:
            h = -(-h // self.stride)
            w = -(-w // self.stride)
            shapes.append((h, w, c))
        return shapes

    @property
    def flat_size(self) -> int:
        h, w, c = self.conv_shapes()[-1]
        return h * w * c

    @property
    def branch_input(self) -> int:
        if self.flat_size % self.branches != 0:
            raise ValueError(
                f"flat feature size {self.flat_size} not divisible by {self.branches} branches"
            )
        return self.flat_size // self.branches

    def parameter_count(self) -> int:
        total = 0
        cin = 1
        for c in self.conv_channels:
            total += self.kernel * self.kernel * cin * c + c + 2 * c  # conv + bias + bn
            cin = c
        per_branch = (
            self.branch_input * self.branch_hidden
            + self.branch_hidden
            + self.branch_hidden * (self.dim // self.branches)
            + self.dim // self.branches
        )
        return total + self.branches * per_branch


TINY = EmbedderTopology(conv_channels=(8, 16, 16, 32), branch_hidden=16)


@dataclass
class EmbedderWeights:
    topology: EmbedderTopology
    tensors: dict[str, np.ndarray]


def init_weights(topo: EmbedderTopology, seed: int = 0) -> EmbedderWeights:
    rng = np.random.default_rng(seed)
    t: dict[str, np.ndarray] = {}
    cin = 1
    for i, c in enumerate(topo.conv_channels):
        fan_in = topo.kernel * topo.kernel * cin
        t[f"conv{i}_w"] = rng.normal(0, math.sqrt(1.5 / fan_in), (topo.kernel, topo.kernel, cin, c)).astype(np.float32)
        t[f"conv{i}_b"] = np.zeros(c, dtype=np.float32)
        t[f"conv{i}_bn_gamma"] = np.ones(c, dtype=np.float32)
        t[f"conv{i}_bn_beta"] = np.zeros(c, dtype=np.float32)
        t[f"conv{i}_bn_mean"] = np.zeros(c, dtype=np.float32)
        t[f"conv{i}_bn_var"] = np.ones(c, dtype=np.float32)
        cin = c
    bi, bh, bo = topo.branch_input, topo.branch_hidden, topo.dim // topo.branches
    for j in range(topo.branches):
        t[f"br{j}_w1"] = rng.normal(0, math.sqrt(1.5 / bi), (bi, bh)).astype(np.float32)
        t[f"br{j}_b1"] = np.zeros(bh, dtype=np.float32)
        t[f"br{j}_w2"] = rng.normal(0, math.sqrt(1.0 / bh), (bh, bo)).astype(np.float32)
        t[f"br{j}_b2"] = np.zeros(bo, dtype=np.float32)
    return EmbedderWeights(topology=topo, tensors=t)


def divide_and_encode(features: np.ndarray, w: EmbedderWeights):
    """Two-level branch head over flattened features (B, flat) -> (B, dim).

    Branch j only ever sees slice j of the features, so perturbing another
    slice leaves its output bit-identical. Output is pre-normalization.
    """
    topo = w.topology
    if features.shape[1] % topo.branches != 0:
        raise ValueError(
            f"feature width {features.shape[1]} not divisible by {topo.branches} branches"
        )
    bi = features.shape[1] // topo.branches
    outs = []
    cache = []
    for j in range(topo.branches):
        sl = features[:, j * bi : (j + 1) * bi]
        h = dense(sl, w.tensors[f"br{j}_w1"], w.tensors[f"br{j}_b1"])
        a = elu(h)
        o = dense(a, w.tensors[f"br{j}_w2"], w.tensors[f"br{j}_b2"])
        outs.append(o)
        cache.append((sl, h, a))
    return np.concatenate(outs, axis=1), cache


def divide_and_encode_bwd(dout: np.ndarray, w: EmbedderWeights, cache):
    topo = w.topology
    grads: dict[str, np.ndarray] = {}
    bo = dout.shape[1] // topo.branches
    dslices = []
    for j in range(topo.branches):
        sl, h, a = cache[j]
        dy = dout[:, j * bo : (j + 1) * bo]
        da, grads[f"br{j}_w2"], grads[f"br{j}_b2"] = dense_bwd(a, w.tensors[f"br{j}_w2"], dy)
        dh = elu_bwd(h, da)
        dsl, grads[f"br{j}_w1"], grads[f"br{j}_b1"] = dense_bwd(sl, w.tensors[f"br{j}_w1"], dh)
        dslices.append(dsl)
    return np.concatenate(dslices, axis=1), grads


def standardize_windows(x: np.ndarray) -> np.ndarray:
    """Per-window mean/variance normalization of log-Mel input.

    A broadband gain change adds a constant to the log energies, so this
    makes fingerprints gain-invariant. Treated as data preprocessing, not a
    differentiated layer.
    """
    mu = x.mean(axis=(-2, -1), keepdims=True)
    sd = x.std(axis=(-2, -1), keepdims=True)
    return (x - mu) / (sd + 1e-3)


def forward_batch(x: np.ndarray, w: EmbedderWeights, train: bool = False):
    """Embeddings for a batch of windows. x: (B, frames, mel_bins) -> (B, dim) unit-norm."""
    topo = w.topology
    t = w.tensors
    h = standardize_windows(x)[..., None]
    conv_cache = []
    for i in range(len(topo.conv_channels)):
        xin = h
        z = conv2d(xin, t[f"conv{i}_w"], t[f"conv{i}_b"], topo.stride)
        y, bn_cache, rm, rv = batchnorm(
            z, t[f"conv{i}_bn_gamma"], t[f"conv{i}_bn_beta"],
            t[f"conv{i}_bn_mean"], t[f"conv{i}_bn_var"], train,
        )
        if train:
            t[f"conv{i}_bn_mean"] = rm.astype(t[f"conv{i}_bn_mean"].dtype)
            t[f"conv{i}_bn_var"] = rv.astype(t[f"conv{i}_bn_var"].dtype)
        h = elu(y)
        conv_cache.append((xin, z, bn_cache, y))
    flat = h.reshape(h.shape[0], -1)
    pre, de_cache = divide_and_encode(flat, w)
    out = l2_normalize(pre)
    cache = {"conv": conv_cache, "flat": flat, "pre": pre, "de": de_cache, "h_shape": h.shape}
    return out, cache


def backward_batch(dout: np.ndarray, w: EmbedderWeights, cache) -> dict[str, np.ndarray]:
    topo = w.topology
    t = w.tensors
    dpre = l2_normalize_bwd(cache["pre"], dout)
    dflat, grads = divide_and_encode_bwd(dpre, w, cache["de"])
    dh = dflat.reshape(cache["h_shape"])
    for i in reversed(range(len(topo.conv_channels))):
        xin, z, bn_cache, y = cache["conv"][i]
        dyy = elu_bwd(y, dh)
        dz, grads[f"conv{i}_bn_gamma"], grads[f"conv{i}_bn_beta"] = batchnorm_bwd(
            dyy, t[f"conv{i}_bn_gamma"], bn_cache
        )
        dxin, grads[f"conv{i}_w"], grads[f"conv{i}_b"] = conv2d_bwd(xin, t[f"conv{i}_w"], dz, topo.stride)
        dh = dxin
    return grads


def fingerprint_window(frames: np.ndarray, w: EmbedderWeights) -> np.ndarray:
    """One unit-norm fingerprint from a (frames, mel_bins) window."""
    frames = np.asarray(frames)
    topo = w.topology
    if frames.shape != (topo.frames, topo.mel_bins):
        raise ValueError(f"expected {(topo.frames, topo.mel_bins)} window, got {frames.shape}")
    if not np.isfinite(frames).all():
        raise ValueError("window contains non-finite values")
    out, _ = forward_batch(frames[None].astype(np.float32), w, train=False)
    return out[0]


def fingerprint_stream(frames: np.ndarray, w: EmbedderWeights, batch: int = 256) -> np.ndarray:
    """(n, dim) fingerprints at a 1 s hop; window right-aligned at each emission.

    Emission count = floor((n_frames - window)/hop) + 1.
    """
    topo = w.topology
    n = frames.shape[0]
    if n < topo.frames:
        raise ValueError(f"{n} frames is shorter than one {topo.frames}-frame window")
    ends = list(range(topo.frames, n + 1, topo.hop_frames))
    out = np.empty((len(ends), topo.dim), dtype=np.float32)
    for s in range(0, len(ends), batch):
        chunk = np.stack([frames[e - topo.frames : e] for e in ends[s : s + batch]])
        out[s : s + len(chunk)], _ = forward_batch(chunk.astype(np.float32), w, train=False)
    return out


# ----------------------------------------------------------- triplet loss

def triplet_loss(a: np.ndarray, p: np.ndarray, n: np.ndarray, margin: float = 0.4):
    """max(0, ||a-p||^2 - ||a-n||^2 + margin), averaged over rows.

    Returns (loss, (da, dp, dn)).
    """
    a, p, n = np.atleast_2d(a), np.atleast_2d(p), np.atleast_2d(n)
    d_ap = ((a - p) ** 2).sum(axis=1)
    d_an = ((a - n) ** 2).sum(axis=1)
    viol = d_ap - d_an + margin
    active = (viol > 0).astype(a.dtype)
    loss = np.maximum(viol, 0.0).mean()
    scale = (active / len(a))[:, None]
    da = scale * 2.0 * (n - p)
    dp = scale * 2.0 * (p - a)
    dn = scale * 2.0 * (a - n)
    return float(loss), (da, dp, dn)


@dataclass
class TripletBatch:
    anchors: np.ndarray  # indices into the batch
    positives: np.ndarray
    negatives: np.ndarray
    margin: float


def mine_triplets(embeddings: np.ndarray, song_ids: np.ndarray, offsets_ms: np.ndarray,
                  pos_tolerance_ms: float = 300.0, margin: float = 0.4,
                  hard_positives: bool = True) -> TripletBatch:
    """Within-batch mining.

    A positive pair must come from the same song with start offsets closer
    than pos_tolerance_ms. Negatives are semi-hard (farther than the
    positive but inside the margin) when available, else the hardest.
    """
    song_ids = np.asarray(song_ids)
    offsets_ms = np.asarray(offsets_ms)
    n = len(embeddings)
    d2 = ((embeddings[:, None, :] - embeddings[None, :, :]) ** 2).sum(axis=2)
    same = (song_ids[:, None] == song_ids[None, :]) & (
        np.abs(offsets_ms[:, None] - offsets_ms[None, :]) < pos_tolerance_ms
    )
    np.fill_diagonal(same, False)
    anchors, positives, negatives = [], [], []
    for i in range(n):
        pos_idx = np.nonzero(same[i])[0]
        if len(pos_idx) == 0:
            continue
        # different song, or same song far enough that windows do not overlap
        neg_mask = (song_ids != song_ids[i]) | (np.abs(offsets_ms - offsets_ms[i]) >= 2000.0)
        neg_mask[i] = False
        neg_idx = np.nonzero(neg_mask)[0]
        if len(neg_idx) == 0:
            continue
        j = pos_idx[np.argmax(d2[i, pos_idx]) if hard_positives else np.argmin(d2[i, pos_idx])]
        d_ap = d2[i, j]
        semi = neg_idx[(d2[i, neg_idx] > d_ap) & (d2[i, neg_idx] < d_ap + margin)]
        k = semi[np.argmin(d2[i, semi])] if len(semi) else neg_idx[np.argmin(d2[i, neg_idx])]
        anchors.append(i)
        positives.append(j)
        negatives.append(k)
    if not anchors:
        raise ValueError("no valid positive pair in batch")
    return TripletBatch(
        anchors=np.array(anchors), positives=np.array(positives),
        negatives=np.array(negatives), margin=margin,
    )


# -------------------------------------------------------------- training

@dataclass
class EmbedderTrainConfig:
    steps: int = 300
    songs_per_batch: int = 16
    views_per_song: int = 4
    lr: float = 1e-3
    margin: float = 0.4
    pos_tolerance_ms: float = 300.0
    seed: int = 0


def train_embedder(windows: np.ndarray, song_ids: np.ndarray, offsets_ms: np.ndarray,
                   topo: EmbedderTopology | None = None,
                   hyper: EmbedderTrainConfig | None = None) -> EmbedderWeights:
    """Triplet training on aligned windows.

    windows: (N, frames, mel_bins) log-Mel views; views of the same song
    whose offsets differ by less than pos_tolerance_ms count as positives.
    Deterministic given the seed.
    """
    topo = topo or EmbedderTopology()
    hyper = hyper or EmbedderTrainConfig()
    if len(windows) == 0:
        raise ValueError("empty training corpus")
    song_ids = np.asarray(song_ids)
    offsets_ms = np.asarray(offsets_ms)
    rng = np.random.default_rng(hyper.seed)
    w = init_weights(topo, seed=hyper.seed)
    opt = Adam(lr=hyper.lr)
    uniq_songs = np.unique(song_ids)
    by_song = {s: np.nonzero(song_ids == s)[0] for s in uniq_songs}
    for _ in range(hyper.steps):
        chosen = rng.choice(uniq_songs, size=min(hyper.songs_per_batch, len(uniq_songs)), replace=False)
        idx = np.concatenate([
            rng.choice(by_song[s], size=min(hyper.views_per_song, len(by_song[s])), replace=False)
            for s in chosen
        ])
        batch = windows[idx].astype(np.float32)
        emb, cache = forward_batch(batch, w, train=True)
        try:
            trip = mine_triplets(emb, song_ids[idx], offsets_ms[idx],
                                 hyper.pos_tolerance_ms, hyper.margin)
        except ValueError:
            continue
        _, (da, dp, dn) = triplet_loss(emb[trip.anchors], emb[trip.positives],
                                       emb[trip.negatives], trip.margin)
        demb = np.zeros_like(emb)
        np.add.at(demb, trip.anchors, da)
        np.add.at(demb, trip.positives, dp)
        np.add.at(demb, trip.negatives, dn)
        grads = backward_batch(demb, w, cache)
        opt.step(w.tensors, grads)
    return w
