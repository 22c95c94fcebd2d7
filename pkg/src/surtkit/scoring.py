"""Session scoring: transcript JSON-lines I/O and the full metric suite.

ORC-WER is scored per utterance group (optimal channel assignment of the
group's references); cpWER is scored per session over globally-attributed
speaker streams; the modified WDER uses the ORC alignment to find correctly
recognized words and the cpWER speaker mapping to judge their speaker tags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .decoding import SessionTranscript
from .errors import DataError
from .metrics import (
    ScoreReport,
    counting_accuracy,
    cpwer,
    orc_wer,
    per_frame_entropy,
    wder,
)
from .mixsim import Session


@dataclass
class GroupHyp:
    tokens: tuple[list[int], list[int]] = field(default_factory=lambda: ([], []))
    globals: tuple[list[int], list[int]] = field(default_factory=lambda: ([], []))
    rels: tuple[list[int], list[int]] = field(default_factory=lambda: ([], []))
    posteriors: list[np.ndarray] = field(default_factory=list)


def groups_from_transcript(tr: SessionTranscript) -> list[GroupHyp]:
    out = []
    for gd in tr.groups:
        gh = GroupHyp()
        for ch in (0, 1):
            for e in gd.hyps[ch].emissions:
                gh.tokens[ch].append(e.token)
                gh.globals[ch].append(gd.rel_to_global[e.rel_speaker])
                gh.rels[ch].append(e.rel_speaker)
                gh.posteriors.append(e.spk_posterior)
        out.append(gh)
    return out


# ---------------------------------------------------------------------------
# transcript JSON-lines
# ---------------------------------------------------------------------------

def write_transcript(transcripts: list[SessionTranscript], path: str | Path) -> None:
    lines = []
    for tr in transcripts:
        for gi, gd in enumerate(tr.groups):
            for ch in (0, 1):
                for e in gd.hyps[ch].emissions:
                    lines.append(json.dumps({
                        "session": tr.session_id, "group": gi, "channel": ch,
                        "frame": e.frame, "token": e.token,
                        "rel_speaker": e.rel_speaker,
                        "global_speaker": gd.rel_to_global[e.rel_speaker],
                        "blank_conf": round(e.blank_conf, 6),
                        "spk_posterior": [round(float(p), 6) for p in e.spk_posterior],
                    }))
        lines.append(json.dumps({
            "session": tr.session_id, "summary": True,
            "num_groups": len(tr.groups), "num_global_speakers": tr.num_global,
            "clamped_labels": tr.clamped,
        }))
    from .tensorio import write_text_atomic
    write_text_atomic(path, "".join(line + "\n" for line in lines))


def read_transcript(path: str | Path) -> dict[str, list[GroupHyp]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"transcript not found: {path}")
    sessions: dict[str, list[GroupHyp]] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: malformed transcript line: {e}") from e
            sid = rec["session"]
            groups = sessions.setdefault(sid, [])
            if rec.get("summary"):
                while len(groups) < rec["num_groups"]:
                    groups.append(GroupHyp())
                continue
            while len(groups) <= rec["group"]:
                groups.append(GroupHyp())
            gh = groups[rec["group"]]
            ch = rec["channel"]
            gh.tokens[ch].append(rec["token"])
            gh.globals[ch].append(rec["global_speaker"])
            gh.rels[ch].append(rec["rel_speaker"])
            gh.posteriors.append(np.asarray(rec["spk_posterior"]))
    return sessions


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def score_sessions(ref_sessions: list[Session],
                   hyp_groups: dict[str, list[GroupHyp]],
                   ) -> tuple[ScoreReport, dict[str, dict]]:
    """Score hypotheses against reference sessions.

    Returns the pooled ScoreReport plus per-session details
    {session_id: {"cpwer": ..., "orc_wer": ..., "wder": ...}}.
    """
    tot_err = tot_ins = tot_del = tot_sub = tot_words = 0
    cp_err_words = 0.0
    cp_ref_words = 0
    wder_wrong = 0
    wder_matched = 0
    ref_counts: list[int] = []
    hyp_counts: list[int] = []
    ent_buckets: dict[int, list[float]] = {}
    per_session: dict[str, dict] = {}

    for sess in ref_sessions:
        if sess.session_id not in hyp_groups:
            raise DataError(f"transcript missing session {sess.session_id}")
        groups = hyp_groups[sess.session_id]
        if len(groups) != len(sess.groups):
            raise DataError(
                f"session {sess.session_id}: {len(groups)} hypothesis groups "
                f"vs {len(sess.groups)} reference groups")

        # session-level cpWER over concatenated per-speaker streams
        ref_by_spk: dict[int, list[int]] = {}
        for group in sess.groups:
            for u in sorted(group.utterances, key=lambda u: u.start_frame):
                ref_by_spk.setdefault(u.speaker, []).extend(u.tokens)
        hyp_by_spk: dict[int, list[int]] = {}
        for gh in groups:
            for ch in (0, 1):
                for tok, gid in zip(gh.tokens[ch], gh.globals[ch]):
                    hyp_by_spk.setdefault(gid, []).append(tok)
        cp, cp_map = cpwer(ref_by_spk, hyp_by_spk)
        n_ref = sum(len(v) for v in ref_by_spk.values())
        cp_err_words += cp * n_ref
        cp_ref_words += n_ref

        sess_err = sess_words = 0
        sess_wrong = sess_matched = 0
        for group, gh in zip(sess.groups, groups):
            utts = sorted(group.utterances, key=lambda u: u.start_frame)
            refs = [list(u.tokens) for u in utts]
            ref_spk = [u.speaker for u in utts]
            w, assignment, brk = orc_wer(refs, gh.tokens)
            tot_err += brk["errors"]
            tot_ins += brk["ins"]
            tot_del += brk["del"]
            tot_sub += brk["sub"]
            tot_words += brk["ref_words"]
            sess_err += brk["errors"]
            sess_words += brk["ref_words"]

            ratio, defined = wder(refs, ref_spk, gh.tokens,
                                  (gh.globals[0], gh.globals[1]), assignment, cp_map)
            if defined:
                # re-derive counts from the ratio's parts for pooling
                matched = _orc_matches(refs, gh.tokens, assignment)
                wder_matched += matched
                wder_wrong += round(ratio * matched)
                sess_matched += matched
                sess_wrong += round(ratio * matched)

            ref_counts.append(len(set(ref_spk)))
            hyp_counts.append(len(set(gh.rels[0]) | set(gh.rels[1])))
            ent = per_frame_entropy(gh.posteriors)
            if ent is not None:
                ent_buckets.setdefault(len(set(ref_spk)), []).append(ent)

        per_session[sess.session_id] = {
            "cpwer": cp,
            "orc_wer": sess_err / max(1, sess_words),
            "wder": sess_wrong / max(1, sess_matched),
        }

    report = ScoreReport(
        wer=tot_err / max(1, tot_words),
        insertions=tot_ins, deletions=tot_del, substitutions=tot_sub,
        ref_words=tot_words,
        cpwer=cp_err_words / max(1, cp_ref_words),
        wder=wder_wrong / max(1, wder_matched),
        wder_defined=wder_matched > 0,
        counting_accuracy=counting_accuracy(ref_counts, hyp_counts),
        entropy_by_speaker_count={
            k: float(np.mean(v)) for k, v in sorted(ent_buckets.items())
        },
    )
    return report, per_session


def _orc_matches(refs, hyps, assignment) -> int:
    from .metrics import edit_distance
    matched = 0
    for c in (0, 1):
        ref_cat = [w for r, a in zip(refs, assignment) if a == c for w in r]
        _, ali = edit_distance(ref_cat, list(hyps[c]))
        matched += ali.counts()["match"]
    return matched
