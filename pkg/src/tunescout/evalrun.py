"""Evaluation harness: precision/recall sweeps for the recognizer (per
embedding dimension, adaptive vs. naive scoring) and recall vs.
false-positives-per-hour sweeps for the detector gate."""

from dataclasses import dataclass, replace

import numpy as np

from . import corpus as corpus_mod
from . import match as match_mod
from .corpus import CorpusConfig, MusicRegion, QuerySpec
from .detector import DetectorWeights, GateConfig, batch_predictions, smooth_and_gate
from .embedder import EmbedderWeights
from .frontend import FrontendConfig, log_mel_frames
from .index import SearchStats
from .pipeline import PipelineConfig, fingerprint_phases


@dataclass
class QueryOutcome:
    spec: QuerySpec
    adaptive_song: int
    adaptive_score: float
    adaptive_offset: int
    naive_song: int
    naive_score: float

    @property
    def is_music(self) -> bool:
        return self.spec.kind == "music"


def run_queries(db, specs: list[QuerySpec], corpus_cfg: CorpusConfig,
                weights: EmbedderWeights, cfg: PipelineConfig,
                holdout_cfg: CorpusConfig | None = None,
                stats: SearchStats | None = None) -> list[QueryOutcome]:
    """Match every query with both scorers over identical candidate sets."""
    outcomes = []
    mcfg = cfg.matcher
    for spec in specs:
        wave = corpus_mod.query_audio(corpus_cfg, spec, holdout_cfg)
        frames = log_mel_frames(corpus_mod.to_pcm(wave, corpus_cfg.sample_rate), cfg.frontend)
        best_a = (-1, 0.0, -1)
        best_n = (-1, 0.0)
        for fps in fingerprint_phases(frames, weights, mcfg.query_phases):
            hits = [db.index.search_topk(q, mcfg.top_k, stats=stats) for q in fps]
            candidates = match_mod.collect_candidates(hits, mcfg.max_candidates)
            for cand in candidates:
                try:
                    sa = match_mod.score_sequence(fps, cand, db.index, db.spans, db.radii)
                    sn = match_mod.naive_score_sequence(fps, cand, db.index, db.spans)
                except ValueError:
                    continue
                if sa > best_a[1]:
                    best_a = (cand.song_id, sa, cand.start_offset)
                if sn > best_n[1]:
                    best_n = (cand.song_id, sn)
        outcomes.append(QueryOutcome(spec, best_a[0], best_a[1], best_a[2],
                                     best_n[0], best_n[1]))
    return outcomes


def pr_rows(outcomes: list[QueryOutcome], scorer: str = "adaptive",
            thresholds: np.ndarray | None = None) -> list[dict]:
    """Threshold sweep: a query is accepted when its best score clears the
    threshold; precision counts wrong-song and non-music acceptances against
    it, recall is over the music queries."""
    if thresholds is None:
        thresholds = np.round(np.linspace(0.0, 1.0, 51), 3)
    n_music = sum(1 for o in outcomes if o.is_music)
    rows = []
    for th in thresholds:
        tp = fp = 0
        for o in outcomes:
            song = o.adaptive_song if scorer == "adaptive" else o.naive_song
            score = o.adaptive_score if scorer == "adaptive" else o.naive_score
            if song < 0 or score < th:
                continue
            if o.is_music and song == o.spec.song_id:
                tp += 1
            else:
                fp += 1
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / n_music if n_music else 0.0
        rows.append({"threshold": float(th), "precision": precision, "recall": recall,
                     "scorer": scorer})
    return rows


def precision_at_recall(rows: list[dict], target_recall: float) -> float:
    """Best precision among operating points reaching the target recall."""
    feasible = [r["precision"] for r in rows if r["recall"] >= target_recall]
    return max(feasible) if feasible else 0.0


def accept_rates(outcomes: list[QueryOutcome], cfg: PipelineConfig) -> dict:
    """Acceptance with the full adaptive rule (abs + gap as run by recognize)
    split by query kind."""
    counts = {"music_correct": 0, "music_total": 0, "music_accepted": 0,
              "negative_accepted": 0, "negative_total": 0}
    for o in outcomes:
        accepted = o.adaptive_song >= 0 and o.adaptive_score > cfg.matcher.theta_abs
        if o.is_music:
            counts["music_total"] += 1
            if accepted:
                counts["music_accepted"] += 1
                if o.adaptive_song == o.spec.song_id:
                    counts["music_correct"] += 1
        else:
            counts["negative_total"] += 1
            if accepted:
                counts["negative_accepted"] += 1
    return counts


# --------------------------------------------------------- detector sweeps

def detector_prediction_stream(wave: np.ndarray, det: DetectorWeights,
                               frontend: FrontendConfig | None = None):
    """Batch-cadence predictions plus their timestamps in seconds."""
    frontend = frontend or FrontendConfig()
    frames = log_mel_frames(corpus_mod.to_pcm(wave), frontend)
    preds = batch_predictions(frames, det)
    hop_s = frontend.hop_ms / 1000.0
    times = np.array([e * hop_s for e, _ in preds])
    probs = np.array([p for _, p in preds])
    return probs, times


def gate_region_metrics(probs: np.ndarray, times: np.ndarray,
                        regions: list[MusicRegion], gate: GateConfig,
                        total_s: float, slack_s: float = 8.0) -> dict:
    """Recall over music regions and false positives per hour outside them."""
    events = smooth_and_gate(probs, gate, start_time_s=float(times[0]) if len(times) else 0.0)
    hit = [False] * len(regions)
    fp = 0
    for ev in events:
        inside = False
        for i, reg in enumerate(regions):
            if reg.start_s <= ev.time_s <= reg.start_s + reg.duration_s + slack_s:
                hit[i] = True
                inside = True
        if not inside:
            fp += 1
    music_s = sum(r.duration_s for r in regions)
    nonmusic_h = max((total_s - music_s) / 3600.0, 1e-9)
    return {
        "recall": sum(hit) / len(regions) if regions else 0.0,
        "fp_per_hour": fp / nonmusic_h,
        "events": len(events),
        "region_hits": hit,
    }


def detector_sweep(probs: np.ndarray, times: np.ndarray, regions: list[MusicRegion],
                   gate: GateConfig, total_s: float,
                   thresholds: np.ndarray | None = None) -> list[dict]:
    if thresholds is None:
        thresholds = np.round(np.linspace(0.02, 0.98, 25), 3)
    rows = []
    for th in thresholds:
        g = replace(gate, threshold=float(th))
        m = gate_region_metrics(probs, times, regions, g, total_s)
        rows.append({"threshold": float(th), "consecutive": gate.consecutive,
                     "recall": m["recall"], "fp_per_hour": m["fp_per_hour"]})
    return rows
