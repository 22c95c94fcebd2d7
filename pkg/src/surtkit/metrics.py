"""Multi-talker ASR scoring.

Levenshtein alignment, ORC-WER (optimal order-preserving assignment of
reference utterances to two output channels), cpWER (optimal speaker
permutation via linear assignment), modified word-level WDER, speaker
counting accuracy, and per-frame speaker entropy. Tokens score as whole
words. Brute-force oracles live alongside for verification.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class Alignment:
    """Aligned (ref index | None, hyp index | None, op) triples."""
    pairs: list[tuple[int | None, int | None, str]]

    def counts(self) -> dict[str, int]:
        c = {"match": 0, "sub": 0, "ins": 0, "del": 0}
        for _, _, op in self.pairs:
            c[op] += 1
        return c


def edit_distance(ref: list, hyp: list) -> tuple[int, Alignment]:
    """Minimal ins+del+sub alignment; ties prefer match > sub > del > ins."""
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dele = dist[i - 1, j] + 1
            ins = dist[i, j - 1] + 1
            dist[i, j] = min(sub, dele, ins)

    pairs: list[tuple[int | None, int | None, str]] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            op = "match" if ref[i - 1] == hyp[j - 1] else "sub"
            pairs.append((i - 1, j - 1, op))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            pairs.append((i - 1, None, "del"))
            i -= 1
        else:
            pairs.append((None, j - 1, "ins"))
            j -= 1
    pairs.reverse()
    return int(dist[n, m]), Alignment(pairs)


# ---------------------------------------------------------------------------
# ORC-WER
# ---------------------------------------------------------------------------

def _lev_suffix_rows(ref: list, hyp: list, start: int) -> np.ndarray:
    """dist[k] = edit distance between full `ref` and hyp[start:start+k]."""
    tail = hyp[start:]
    prev = np.arange(len(ref) + 1, dtype=np.int64)
    rows = np.empty(len(tail) + 1, dtype=np.int64)
    rows[0] = prev[-1]
    for j, h in enumerate(tail, start=1):
        cur = np.empty_like(prev)
        cur[0] = j
        for i, r in enumerate(ref, start=1):
            cur[i] = min(prev[i - 1] + (r != h), prev[i] + 1, cur[i - 1] + 1)
        prev = cur
        rows[j] = prev[-1]
    return rows


def orc_wer(refs: list[list], hyps: tuple[list, list]) -> tuple[float, list[int], dict]:
    """Minimum-WER order-preserving assignment of refs to the two channels.

    Returns (wer, assignment ref->channel in {0,1}, error breakdown).
    """
    h1, h2 = list(hyps[0]), list(hyps[1])
    n_ref_words = sum(len(r) for r in refs)

    # state: (words consumed from h1, words consumed from h2) -> (cost, backptr)
    states: dict[tuple[int, int], int] = {(0, 0): 0}
    back: list[dict[tuple[int, int], tuple[tuple[int, int], int]]] = []
    for ref in refs:
        nxt: dict[tuple[int, int], int] = {}
        bp: dict[tuple[int, int], tuple[tuple[int, int], int]] = {}
        for (i, j), cost in states.items():
            rows1 = _lev_suffix_rows(ref, h1, i)
            for di in range(len(rows1)):
                key = (i + di, j)
                c = cost + int(rows1[di])
                if key not in nxt or c < nxt[key] or (c == nxt[key] and bp[key][1] > 0):
                    nxt[key] = c
                    bp[key] = ((i, j), 0)
            rows2 = _lev_suffix_rows(ref, h2, j)
            for dj in range(len(rows2)):
                key = (i, j + dj)
                c = cost + int(rows2[dj])
                if key not in nxt or c < nxt[key]:
                    nxt[key] = c
                    bp[key] = ((i, j), 1)
        states = nxt
        back.append(bp)

    best_key, best_cost = None, None
    for (i, j), cost in states.items():
        total = cost + (len(h1) - i) + (len(h2) - j)  # leftover hyp words insert
        if best_cost is None or total < best_cost:
            best_cost, best_key = total, (i, j)

    assignment: list[int] = []
    key = best_key
    for bp in reversed(back):
        prev_key, ch = bp[key]
        assignment.append(ch)
        key = prev_key
    assignment.reverse()

    breakdown = _orc_breakdown(refs, (h1, h2), assignment)
    wer = best_cost / n_ref_words if n_ref_words else (0.0 if best_cost == 0 else float("inf"))
    return wer, assignment, breakdown


def _orc_breakdown(refs, hyps, assignment):
    out = {"ins": 0, "del": 0, "sub": 0, "errors": 0,
           "ref_words": sum(len(r) for r in refs), "alignments": []}
    for c in (0, 1):
        ref_cat = [w for r, a in zip(refs, assignment) if a == c for w in r]
        _, ali = edit_distance(ref_cat, list(hyps[c]))
        counts = ali.counts()
        out["ins"] += counts["ins"]
        out["del"] += counts["del"]
        out["sub"] += counts["sub"]
        out["alignments"].append(ali)
    out["errors"] = out["ins"] + out["del"] + out["sub"]
    return out


def orc_wer_bruteforce(refs: list[list], hyps: tuple[list, list]) -> float:
    """Enumerate all 2^N channel assignments (oracle, N <= 8)."""
    if len(refs) > 8:
        raise ValueError("brute-force oracle guarded to N <= 8")
    n_ref_words = sum(len(r) for r in refs)
    best = None
    for bits in itertools.product((0, 1), repeat=len(refs)):
        cost = 0
        for c in (0, 1):
            cat = [w for r, a in zip(refs, bits) if a == c for w in r]
            cost += edit_distance(cat, list(hyps[c]))[0]
        best = cost if best is None else min(best, cost)
    return best / n_ref_words if n_ref_words else (0.0 if best == 0 else float("inf"))


# ---------------------------------------------------------------------------
# cpWER
# ---------------------------------------------------------------------------

def cpwer(ref_by_speaker: dict, hyp_by_speaker: dict) -> tuple[float, dict]:
    """Min total WER over bijections between ref and hyp speakers.

    The smaller side is padded with empty pseudo-speakers, so surplus
    hypothesis words score as insertions and uncovered reference speakers
    as deletions. Returns (wer, hyp_speaker -> ref_speaker | None).
    """
    ref_ids = sorted(ref_by_speaker)
    hyp_ids = sorted(hyp_by_speaker)
    n = max(len(ref_ids), len(hyp_ids))
    n_ref_words = sum(len(v) for v in ref_by_speaker.values())

    cost = np.zeros((n, n), dtype=np.int64)
    for a in range(n):
        hyp = hyp_by_speaker[hyp_ids[a]] if a < len(hyp_ids) else []
        for b in range(n):
            ref = ref_by_speaker[ref_ids[b]] if b < len(ref_ids) else []
            cost[a, b] = edit_distance(list(ref), list(hyp))[0]
    rows, cols = linear_sum_assignment(cost)
    total = int(cost[rows, cols].sum())

    mapping: dict = {}
    for a, b in zip(rows, cols):
        if a < len(hyp_ids):
            mapping[hyp_ids[a]] = ref_ids[b] if b < len(ref_ids) else None
    wer = total / n_ref_words if n_ref_words else (0.0 if total == 0 else float("inf"))
    return wer, mapping


def cpwer_bruteforce(ref_by_speaker: dict, hyp_by_speaker: dict) -> float:
    """Exhaustive permutation search (oracle, <= 6 speakers per side)."""
    ref_ids = sorted(ref_by_speaker)
    hyp_ids = sorted(hyp_by_speaker)
    if max(len(ref_ids), len(hyp_ids)) > 6:
        raise ValueError("brute-force oracle guarded to <= 6 speakers")
    n = max(len(ref_ids), len(hyp_ids))
    refs = [list(ref_by_speaker[r]) for r in ref_ids] + [[]] * (n - len(ref_ids))
    hyps = [list(hyp_by_speaker[h]) for h in hyp_ids] + [[]] * (n - len(hyp_ids))
    n_ref_words = sum(len(r) for r in refs)
    best = None
    for perm in itertools.permutations(range(n)):
        cost = sum(edit_distance(refs[perm[a]], hyps[a])[0] for a in range(n))
        best = cost if best is None else min(best, cost)
    return best / n_ref_words if n_ref_words else (0.0 if best == 0 else float("inf"))


# ---------------------------------------------------------------------------
# WDER / counting / entropy
# ---------------------------------------------------------------------------

def wder(refs: list[list], ref_speakers: list[int],
         hyps: tuple[list, list], hyp_speakers: tuple[list, list],
         orc_assignment: list[int], cp_mapping: dict) -> tuple[float, bool]:
    """Fraction of ORC-matched words whose mapped hyp speaker is wrong.

    `ref_speakers` holds one speaker id per reference utterance;
    `hyp_speakers` holds one (global) speaker id per hypothesis word.
    Returns (ratio, defined_flag); 0/0 reports (0.0, False).
    """
    matched = 0
    wrong = 0
    for c in (0, 1):
        ref_cat_spk = [ref_speakers[k] for k, a in enumerate(orc_assignment) if a == c
                       for _ in refs[k]]
        ref_cat = [w for k, a in enumerate(orc_assignment) if a == c for w in refs[k]]
        _, ali = edit_distance(ref_cat, list(hyps[c]))
        for ri, hj, op in ali.pairs:
            if op != "match":
                continue
            matched += 1
            mapped = cp_mapping.get(hyp_speakers[c][hj])
            if mapped != ref_cat_spk[ri]:
                wrong += 1
    if matched == 0:
        return 0.0, False
    return wrong / matched, True


def counting_accuracy(ref_counts: list[int], hyp_counts: list[int]) -> float:
    """Fraction of groups whose speaker count matches exactly."""
    if not ref_counts:
        raise ValueError("counting_accuracy needs at least one group")
    if len(ref_counts) != len(hyp_counts):
        raise ValueError("ref/hyp group counts differ in length")
    hits = sum(1 for r, h in zip(ref_counts, hyp_counts) if r == h)
    return hits / len(ref_counts)


def per_frame_entropy(posteriors: list[np.ndarray]) -> float | None:
    """Mean entropy -sum p ln p over non-blank emissions; None if empty."""
    if not posteriors:
        return None
    ents = []
    for p in posteriors:
        p = np.asarray(p, dtype=np.float64)
        p = np.clip(p, 1e-300, 1.0)
        ents.append(float(-np.sum(p * np.log(p))))
    return float(np.mean(ents))


@dataclass
class ScoreReport:
    wer: float
    insertions: int
    deletions: int
    substitutions: int
    ref_words: int
    cpwer: float
    wder: float
    wder_defined: bool
    counting_accuracy: float
    entropy_by_speaker_count: dict[int, float] = field(default_factory=dict)

    def summary_lines(self) -> list[str]:
        lines = [
            f"orc_wer {self.wer:.4f}",
            f"insertions {self.insertions}",
            f"deletions {self.deletions}",
            f"substitutions {self.substitutions}",
            f"ref_words {self.ref_words}",
            f"cpwer {self.cpwer:.4f}",
            f"wder {self.wder:.4f}" + ("" if self.wder_defined else " (undefined: no matches)"),
            f"counting_accuracy {self.counting_accuracy:.4f}",
        ]
        for k in sorted(self.entropy_by_speaker_count):
            lines.append(f"entropy_{k}spk {self.entropy_by_speaker_count[k]:.4f}")
        return lines
