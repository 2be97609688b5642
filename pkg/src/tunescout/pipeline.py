"""End-to-end glue: configuration, fingerprinting whole songs, building the
database from a synthetic corpus, one-shot recognition and the simulated
continuous-listening loop."""

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import corpus as corpus_mod
from . import embedder as emb_mod
from . import index as index_mod
from . import match as match_mod
from . import store as store_mod
from .corpus import CorpusConfig, to_pcm
from .detector import DetectorWeights, GateConfig, StreamingDetector, smooth_and_gate
from .embedder import EmbedderTopology, EmbedderWeights, fingerprint_stream
from .frontend import FrontendConfig, PcmStream, canonicalize, log_mel_frames
from .match import MatcherConfig, MatchResult


EMBEDDER_PRESETS = {
    "default": {"conv_channels": (32, 64, 64, 128), "branch_hidden": 32},
    "tiny": {"conv_channels": (8, 16, 16, 32), "branch_hidden": 16},
}


@dataclass(frozen=True)
class IndexConfig:
    partitions: int | None = None  # None -> ceil(sqrt(N))
    coverage: float = 0.02
    subspaces: int | None = None  # None -> dim // 8


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 7
    dim: int = 96
    embedder_preset: str = "default"
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    index: IndexConfig = field(default_factory=IndexConfig)

    def __post_init__(self):
        if self.dim % 8 != 0:
            raise ValueError("dim must be divisible by 8 (the branch count)")
        if self.embedder_preset not in EMBEDDER_PRESETS:
            raise ValueError(f"unknown embedder preset {self.embedder_preset!r}")

    def embedder_topology(self) -> EmbedderTopology:
        preset = EMBEDDER_PRESETS[self.embedder_preset]
        return EmbedderTopology(dim=self.dim, **preset)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        raw = json.loads(text)
        kwargs = dict(raw)
        if "frontend" in raw:
            kwargs["frontend"] = FrontendConfig(**raw["frontend"])
        if "gate" in raw:
            kwargs["gate"] = GateConfig(**raw["gate"])
        if "matcher" in raw:
            kwargs["matcher"] = MatcherConfig(**raw["matcher"])
        if "index" in raw:
            kwargs["index"] = IndexConfig(**raw["index"])
        if "TUNESCOUT_SEED" in os.environ:
            kwargs["seed"] = int(os.environ["TUNESCOUT_SEED"])
        return cls(**kwargs)


def fingerprint_pcm(pcm: PcmStream, weights: EmbedderWeights,
                    frontend: FrontendConfig | None = None) -> np.ndarray:
    frames = log_mel_frames(canonicalize(pcm), frontend or FrontendConfig())
    return fingerprint_stream(frames, weights)


def fingerprint_phases(frames: np.ndarray, weights: EmbedderWeights,
                       n_phases: int = 4, hop: int = 100) -> list[np.ndarray]:
    """Fingerprint the same audio under several sub-hop window phases.

    A query recorded at an arbitrary moment is misaligned with the database's
    one-per-second fingerprint grid by up to half a hop, which moves the
    embedding far from its stored neighbour. Shifting the query windowing by
    hop/n_phases increments guarantees one hypothesis lands within
    hop/(2*n_phases) of the grid; the matcher keeps the best-scoring one.
    """
    out = []
    for i in range(max(1, n_phases)):
        start = i * hop // max(1, n_phases)
        if frames.shape[0] - start < weights.topology.frames:
            break  # later phases are shorter still
        fps = fingerprint_stream(frames[start:], weights)
        if len(fps):
            out.append(fps)
    return out


def fingerprint_wave(wave: np.ndarray, weights: EmbedderWeights,
                     frontend: FrontendConfig | None = None) -> np.ndarray:
    return fingerprint_pcm(to_pcm(wave), weights, frontend)


# ------------------------------------------------------- embedder training

def embedder_training_set(cfg: CorpusConfig, n_songs: int | None = None,
                          offsets_per_song: int = 8, noisy_copies: int = 2,
                          seed: int = 0, frontend: FrontendConfig | None = None,
                          topo: EmbedderTopology | None = None):
    """Aligned clean/noisy training windows from the synthetic corpus.

    Returns (windows (N, frames, mels), song_ids, offsets_ms). Alignment is
    known by construction: noisy copies are the same song mixed with noise,
    so a window at the same frame offset is a positive pair.
    """
    frontend = frontend or FrontendConfig()
    topo = topo or EmbedderTopology()
    n_songs = min(n_songs or cfg.n_songs, cfg.n_songs)
    rng = np.random.default_rng([cfg.seed, 555, seed])
    windows, song_ids, offsets_ms = [], [], []
    fps_hop = frontend.frames_per_second
    for song in range(n_songs):
        wave = corpus_mod.song_audio(cfg, song)
        versions = [wave]
        for _ in range(noisy_copies):
            noise = corpus_mod.noise_audio(len(wave) / cfg.sample_rate, rng,
                                           sample_rate=cfg.sample_rate)
            versions.append(corpus_mod.mix_at_snr(wave, noise, float(rng.choice([20.0, 10.0, 5.0]))))
        feats = [log_mel_frames(to_pcm(v, cfg.sample_rate), frontend) for v in versions]
        max_start = feats[0].shape[0] - topo.frames - fps_hop
        if max_start <= 0:
            continue
        starts = rng.choice(max_start, size=min(offsets_per_song, max_start), replace=False)
        for start in starts:
            for f in feats:
                jitter = int(rng.integers(-20, 21))  # +-200 ms, inside pos tolerance
                s = int(np.clip(start + jitter, 0, f.shape[0] - topo.frames))
                windows.append(f[s : s + topo.frames])
                offsets_ms.append(s * frontend.hop_ms)
                song_ids.append(song)
    return np.stack(windows), np.array(song_ids), np.array(offsets_ms)


def train_pipeline_embedder(corpus_cfg: CorpusConfig, cfg: PipelineConfig,
                            steps: int = 300, n_songs: int | None = None) -> EmbedderWeights:
    topo = cfg.embedder_topology()
    windows, song_ids, offsets_ms = embedder_training_set(
        corpus_cfg, n_songs=n_songs, seed=cfg.seed, frontend=cfg.frontend, topo=topo)
    hyper = emb_mod.EmbedderTrainConfig(steps=steps, seed=cfg.seed,
                                        pos_tolerance_ms=300.0)
    return emb_mod.train_embedder(windows, song_ids, offsets_ms, topo, hyper)


# ------------------------------------------------------------- DB building

def build_database_from_fingerprints(song_entries, cfg: PipelineConfig) -> store_mod.Database:
    """Train index models on the pooled fingerprints and assemble the DB."""
    all_fps = np.concatenate([f for _, f in song_entries]).astype(np.float32)
    n, d = all_fps.shape
    p = cfg.index.partitions or index_mod.default_partition_count(n)
    m = cfg.index.subspaces or max(1, d // 8)
    partitioner = index_mod.train_partitioner(all_fps, p, seed=cfg.seed)
    pids = partitioner.assign(all_fps)
    codebook, _ = index_mod.train_pq(all_fps - partitioner.centroids[pids], m, seed=cfg.seed)
    return store_mod.build_database(song_entries, partitioner, codebook,
                                    cfg.matcher, coverage=cfg.index.coverage)


def build_database_from_corpus(corpus_cfg: CorpusConfig, weights: EmbedderWeights,
                               cfg: PipelineConfig) -> store_mod.Database:
    entries = []
    for song in range(corpus_cfg.n_songs):
        wave = corpus_mod.song_audio(corpus_cfg, song)
        fps = fingerprint_wave(wave, weights, cfg.frontend)
        rec = store_mod.SongRecord(song_id=song, title=f"synthetic song {song:04d}",
                                   artist="tunescout corpus", duration_s=corpus_cfg.duration_s)
        entries.append((rec, fps))
    return build_database_from_fingerprints(entries, cfg)


# ------------------------------------------------------------- recognition

def recognize_pcm(db: store_mod.Database, pcm: PcmStream, weights: EmbedderWeights,
                  cfg: PipelineConfig, stats=None) -> MatchResult:
    frames = log_mel_frames(canonicalize(pcm), cfg.frontend)
    best: MatchResult | None = None
    for fps in fingerprint_phases(frames, weights, cfg.matcher.query_phases):
        result = match_mod.recognize(fps, db.index, db.spans, db.radii,
                                     cfg.matcher, stats=stats)
        if best is None or result.score > best.score:
            best = result
    if best is None:
        raise ValueError("audio shorter than one fingerprint window")
    best.title = db.title_of(best.song_id)
    return best


# ------------------------------------------------- continuous listening sim

def stream_file(db: store_mod.Database, pcm: PcmStream, emb_weights: EmbedderWeights,
                det_weights: DetectorWeights, cfg: PipelineConfig) -> dict:
    """Frontend -> streaming detector -> gate; recognition on each wake-up.

    Returns an event log plus wakeup count and the fraction of audio the
    fingerprinter processed (duty-cycle proxy for the main-processor cost).
    """
    pcm = canonicalize(pcm)
    frames = log_mel_frames(pcm, cfg.frontend)
    det = StreamingDetector(det_weights)
    preds = []
    pred_times = []
    hop_s = cfg.frontend.hop_ms / 1000.0
    for i in range(frames.shape[0]):
        p = det.push(frames[i])
        if p is not None:
            preds.append(p)
            pred_times.append((i + 1) * hop_s)
    events = []
    wakeups = 0
    fingerprinted_s = 0.0
    total_s = pcm.duration_s()
    if preds:
        gate_events = smooth_and_gate(preds, cfg.gate, start_time_s=pred_times[0])
        for ev in gate_events:
            wakeups += 1
            end = int(ev.time_s * pcm.sample_rate)
            start = max(0, end - int(cfg.gate.buffer_len_s * pcm.sample_rate))
            buf = PcmStream(samples=pcm.samples[start:end], sample_rate=pcm.sample_rate)
            fingerprinted_s += (end - start) / pcm.sample_rate
            record = {"time_s": round(ev.time_s, 2),
                      "mean_confidence": round(ev.mean_confidence, 4)}
            try:
                result = recognize_pcm(db, buf, emb_weights, cfg)
                record["match"] = result.to_dict()
            except ValueError as e:
                record["match"] = {"error": str(e)}
            events.append(record)
    return {
        "events": events,
        "wakeups": wakeups,
        "duty_cycle": fingerprinted_s / total_s if total_s else 0.0,
        "predictions": len(preds),
        "duration_s": total_s,
    }
