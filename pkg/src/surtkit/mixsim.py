"""Synthetic corpus generation and overlapped-mixture simulation.

Features are deterministic token prototypes modulated elementwise by a
per-speaker offset vector (prototype * (1 + offset)) plus Gaussian noise; a mixture is the exact elementwise sum of its shifted,
zero-padded utterances (noise lives in the utterances, not the mixing).
Sessions are sequences of utterance groups separated by silence, with
speakers recurring across groups, plus one clean enrollment utterance per
speaker.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, OverlapError
from .heat import Utterance
from .tensorio import read_tensors, write_tensors


@dataclass
class CorpusSpec:
    vocab_size: int = 16
    feature_dim: int = 16
    frames_per_token: int = 4
    num_speakers: int = 8
    speaker_offset_scale: float = 1.0
    noise_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "feature_dim", "frames_per_token", "num_speakers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


@dataclass
class Corpus:
    spec: CorpusSpec
    prototypes: np.ndarray   # (V, F), row v-1 is token v
    offsets: np.ndarray      # (num_speakers, F), row k-1 is speaker k


@dataclass
class UtteranceGroup:
    utterances: list[Utterance]
    mixture: np.ndarray
    overlap_ratio: float

    @property
    def speakers(self) -> list[int]:
        seen: list[int] = []
        for u in sorted(self.utterances, key=lambda u: u.start_frame):
            if u.speaker not in seen:
                seen.append(u.speaker)
        return seen


@dataclass
class Session:
    session_id: str
    groups: list[UtteranceGroup]
    group_starts: list[int]
    enrollment: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def speakers(self) -> list[int]:
        seen: list[int] = []
        for g in self.groups:
            for s in g.speakers:
                if s not in seen:
                    seen.append(s)
        return seen


def make_corpus(spec: CorpusSpec) -> Corpus:
    """Token prototypes and speaker offsets, pseudo-random from the seed.

    Prototypes sit away from zero so that ratio masks for summed mixtures
    are realizable in [0, 1].
    """
    rng = np.random.default_rng(spec.seed)
    # strictly sparse prototypes: token v puts energy only on dim v mod F
    # (plus a secondary dim when V > F).  Simultaneous tokens then rarely
    # collide per-dim, so the summed mixture decomposes unambiguously and
    # the ideal ratio masks are near-binary per dim — the regime where
    # masking-based separation can work.  A dense floor would couple every
    # dim to every (token, speaker) combination, which a small corpus
    # cannot cover.
    F = spec.feature_dim
    prototypes = np.zeros((spec.vocab_size, F))
    for v in range(spec.vocab_size):
        prototypes[v, v % F] = rng.uniform(1.0, 1.6)
        if spec.vocab_size > F:
            prototypes[v, (v * 5 + 2) % F] += rng.uniform(0.45, 0.8)
    # speaker identity modulates the token pattern multiplicatively
    # (frames = prototype * (1 + offset)).  Additive offsets would make the
    # two-source mixture invariant to swapping which speaker carries which
    # token, so per-frame attribution would be unidentifiable.
    offsets = spec.speaker_offset_scale * rng.uniform(
        0.0, 0.5, size=(spec.num_speakers, F)
    )
    return Corpus(spec=spec, prototypes=prototypes, offsets=offsets)


def synth_utterance(tokens: list[int], speaker: int, corpus: Corpus,
                    noise_std: float | None = None,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """|tokens| * frames_per_token frames of prototype * (1 + offset) + noise."""
    spec = corpus.spec
    if noise_std is None:
        noise_std = spec.noise_std
    rng = rng or np.random.default_rng(spec.seed)
    d = spec.frames_per_token
    frames = np.repeat(corpus.prototypes[np.asarray(tokens) - 1], d, axis=0)
    frames = frames * (1.0 + corpus.offsets[speaker - 1])
    if noise_std > 0:
        frames = frames + rng.normal(0.0, noise_std, size=frames.shape)
    return frames


def _overlap_ratio(spans: list[tuple[int, int]]) -> float:
    end = max(e for _, e in spans)
    active = np.zeros(end, dtype=np.int32)
    for s, e in spans:
        active[s:e] += 1
    speech = int(np.sum(active >= 1))
    if speech == 0:
        return 0.0
    return float(np.sum(active >= 2)) / speech


def _place(durations: list[int], p_overlap: float,
           rng: np.random.Generator, token_frames: int = 1) -> list[int]:
    """Start frames keeping at most two utterances active at any frame.

    Utterance i is snapped to phase i mod token_frames so token boundaries
    of concurrent utterances never coincide: a simultaneous token change in
    both sources would make the per-frame channel routing ambiguous.
    """
    starts = [0]
    ends = [durations[0]]
    for i, dur in enumerate(durations[1:], start=1):
        e_sorted = sorted(ends)
        e_lo, e_hi = e_sorted[-2] if len(e_sorted) > 1 else 0, e_sorted[-1]
        e_lo = max(e_lo, 0)
        if rng.random() < p_overlap and e_hi > e_lo:
            start = int(rng.integers(e_lo, e_hi))
        else:
            start = e_hi + int(rng.integers(0, max(2, dur // 3)))
        phase = i % token_frames
        start += (phase - start) % token_frames
        starts.append(start)
        ends.append(start + dur)
    return starts


def mix_group(utt_specs: list[tuple[list[int], int]], corpus: Corpus,
              target_overlap: float = 0.25, tolerance: float = 0.1,
              rng: np.random.Generator | None = None,
              max_retries: int = 200) -> UtteranceGroup:
    """Build an overlapped mixture from (tokens, speaker) specs.

    Start offsets are sampled until the realized overlap ratio (overlapped
    frames / speech frames) lands within `tolerance` of the target; the
    two-active constraint holds by construction. Single-utterance groups
    always realize 0 overlap.
    """
    rng = rng or np.random.default_rng(corpus.spec.seed)
    speakers = {s for _, s in utt_specs}
    if not 1 <= len(speakers) <= 4:
        raise ValueError(f"groups need 1-4 distinct speakers, got {len(speakers)}")

    d = corpus.spec.frames_per_token
    durations = [len(toks) * d for toks, _ in utt_specs]

    best: tuple[float, list[int]] | None = None
    for _ in range(max_retries):
        p = min(1.0, max(0.05, target_overlap * 2 + rng.normal(0, 0.2)))
        starts = _place(durations, p, rng, token_frames=d)
        ratio = _overlap_ratio([(s, s + dur) for s, dur in zip(starts, durations)])
        err = abs(ratio - target_overlap)
        if best is None or err < best[0]:
            best = (err, starts)
        if err <= tolerance or len(utt_specs) == 1:
            break
    else:
        if best is None or best[0] > tolerance:
            raise OverlapError(
                f"could not realize overlap {target_overlap:.2f} +/- {tolerance:.2f} "
                f"after {max_retries} retries (best off by {best[0]:.2f})"
            )
    starts = best[1]

    utts = []
    for (toks, spk), start, dur in zip(utt_specs, starts, durations):
        feats = synth_utterance(toks, spk, corpus, rng=rng)
        utts.append(Utterance(tokens=list(toks), speaker=spk,
                              start_frame=start, end_frame=start + dur,
                              features=feats))
    T = max(u.end_frame for u in utts)
    mixture = np.zeros((T, corpus.spec.feature_dim))
    for u in utts:
        mixture[u.start_frame:u.end_frame] += u.features
    ratio = _overlap_ratio([(u.start_frame, u.end_frame) for u in utts])
    return UtteranceGroup(utterances=utts, mixture=mixture, overlap_ratio=ratio)


@dataclass
class SessionConfig:
    groups: int = 1
    speakers: int = 3                 # pool size K per session
    min_group_speakers: int = 2
    max_group_speakers: int = 3
    min_tokens: int = 3
    max_tokens: int = 6
    target_overlap: float = 0.25
    overlap_tolerance: float = 0.1
    min_gap: int = 8
    max_gap: int = 24
    enrollment_tokens: int = 24


def make_session(corpus: Corpus, cfg: SessionConfig, session_id: str,
                 rng: np.random.Generator) -> Session:
    """Sample a session with recurring speakers across its groups."""
    pool = list(rng.choice(np.arange(1, corpus.spec.num_speakers + 1),
                           size=min(cfg.speakers, corpus.spec.num_speakers),
                           replace=False).astype(int))

    hi = min(cfg.max_group_speakers, len(pool))
    lo = min(cfg.min_group_speakers, hi)
    subsets: list[list[int]] = []
    for _ in range(cfg.groups):
        n = int(rng.integers(lo, hi + 1))
        subsets.append(list(rng.choice(pool, size=n, replace=False).astype(int)))
    # constructive coverage: every pool speaker shows up in some group
    present = {s for sub in subsets for s in sub}
    for spk in pool:
        if spk not in present:
            g = int(rng.integers(0, cfg.groups))
            if len(subsets[g]) < hi:
                subsets[g].append(spk)
            else:
                subsets[g][int(rng.integers(0, len(subsets[g])))] = spk

    groups, starts = [], []
    cursor = 0
    for sub in subsets:
        specs = []
        for spk in sub:
            n_tok = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
            toks = list(rng.integers(1, corpus.spec.vocab_size + 1, size=n_tok).astype(int))
            specs.append((toks, spk))
        target = cfg.target_overlap if len(sub) > 1 else 0.0
        group = mix_group(specs, corpus, target_overlap=target,
                          tolerance=cfg.overlap_tolerance, rng=rng)
        groups.append(group)
        starts.append(cursor)
        cursor += group.mixture.shape[0] + int(rng.integers(cfg.min_gap, cfg.max_gap + 1))

    enrollment = {}
    for spk in pool:
        toks = list(rng.integers(1, corpus.spec.vocab_size + 1,
                                 size=cfg.enrollment_tokens).astype(int))
        enrollment[spk] = synth_utterance(toks, spk, corpus, noise_std=0.0, rng=rng)
    return Session(session_id=session_id, groups=groups, group_starts=starts,
                   enrollment=enrollment)


# ---------------------------------------------------------------------------
# manifest I/O (JSON-lines + tensor containers)
# ---------------------------------------------------------------------------

def write_manifest(sessions: list[Session], out_dir: str | Path) -> Path:
    """Write manifest.jsonl plus feature containers under `out_dir`."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)

    lines = []
    for sess in sessions:
        enroll_paths = {}
        for spk, feats in sess.enrollment.items():
            rel = f"features/{sess.session_id}_enroll_spk{spk}.st"
            write_tensors(out_dir / rel, {"features": feats})
            enroll_paths[str(spk)] = rel
        for gi, (group, start) in enumerate(zip(sess.groups, sess.group_starts)):
            rel = f"features/{sess.session_id}_g{gi}.st"
            tensors = {"mixture": group.mixture}
            for ui, utt in enumerate(group.utterances):
                tensors[f"utt{ui:03d}"] = utt.features
            write_tensors(out_dir / rel, tensors)
            rec = {
                "session_id": sess.session_id,
                "group_index": gi,
                "start_frame": start,
                "utterances": [
                    {"speaker": int(u.speaker), "tokens": [int(t) for t in u.tokens],
                     "start": int(u.start_frame), "end": int(u.end_frame)}
                    for u in group.utterances
                ],
                "features_path": rel,
                "enrollment": enroll_paths,
            }
            lines.append(json.dumps(rec))

    manifest = out_dir / "manifest.jsonl"
    from .tensorio import write_text_atomic
    write_text_atomic(manifest, "".join(line + "\n" for line in lines))
    return manifest


def read_manifest(path: str | Path, load_features: bool = True) -> list[Session]:
    """Read manifest.jsonl back into Sessions (features from containers)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    base = path.parent

    records: list[dict] = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: malformed manifest line: {e}") from e

    sessions: dict[str, Session] = {}
    for rec in records:
        sid = rec["session_id"]
        if sid not in sessions:
            sessions[sid] = Session(session_id=sid, groups=[], group_starts=[])
            if load_features:
                for spk, rel in rec.get("enrollment", {}).items():
                    fpath = base / rel
                    if not fpath.exists():
                        raise DataError(f"missing feature file: {fpath}")
                    sessions[sid].enrollment[int(spk)] = read_tensors(fpath)["features"].astype(np.float64)
        sess = sessions[sid]

        utts = []
        mixture = None
        if load_features:
            fpath = base / rec["features_path"]
            if not fpath.exists():
                raise DataError(f"missing feature file: {fpath}")
            tensors = read_tensors(fpath)
            mixture = tensors["mixture"].astype(np.float64)
        for ui, u in enumerate(rec["utterances"]):
            feats = tensors[f"utt{ui:03d}"].astype(np.float64) if load_features else None
            utts.append(Utterance(tokens=list(u["tokens"]), speaker=int(u["speaker"]),
                                  start_frame=int(u["start"]), end_frame=int(u["end"]),
                                  features=feats))
        if mixture is None:
            T = max(u.end_frame for u in utts)
            mixture = np.zeros((T, 1))
        ratio = _overlap_ratio([(u.start_frame, u.end_frame) for u in utts])
        sess.groups.append(UtteranceGroup(utterances=utts, mixture=mixture,
                                          overlap_ratio=ratio))
        sess.group_starts.append(int(rec["start_frame"]))
    return list(sessions.values())


def dataset_stats(sessions: list[Session]) -> dict:
    """Corpus-level stats: duration proxy, overlap %, silence % (session time)."""
    total_frames = 0
    speech_frames = 0
    overlap_frames = 0
    for sess in sessions:
        end = 0
        for group, start in zip(sess.groups, sess.group_starts):
            spans = [(start + u.start_frame, start + u.end_frame)
                     for u in group.utterances]
            lo = min(s for s, _ in spans)
            hi = max(e for _, e in spans)
            active = np.zeros(hi - lo, dtype=np.int32)
            for s, e in spans:
                active[s - lo:e - lo] += 1
            speech_frames += int(np.sum(active >= 1))
            overlap_frames += int(np.sum(active >= 2))
            end = max(end, hi)
        total_frames += end
    return {
        "total_frames": total_frames,
        "speech_frames": speech_frames,
        "overlap_pct": 100.0 * overlap_frames / max(1, speech_frames),
        "silence_pct": 100.0 * (total_frames - speech_frames) / max(1, total_frames),
        "num_sessions": len(sessions),
        "num_groups": sum(len(s.groups) for s in sessions),
    }
