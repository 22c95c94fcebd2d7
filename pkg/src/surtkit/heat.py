"""Heuristic error assignment: map overlapping utterances onto two channels.

Utterances are assigned in start-time order to the first channel whose
previous utterances have all ended (closed-open frame spans, so
end_frame <= next start_frame counts as free). Speaker labels are repeated
once per token so both branches share sequence lengths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LabelSpaceError, OverlapError, ShapeError

NUM_CHANNELS = 2


@dataclass
class Utterance:
    tokens: list[int]
    speaker: int
    start_frame: int
    end_frame: int
    features: np.ndarray | None = None

    def __post_init__(self):
        if self.start_frame >= self.end_frame:
            raise ValueError(f"utterance span [{self.start_frame}, {self.end_frame}) is empty")
        if not self.tokens:
            raise ValueError("utterance has no tokens")


@dataclass
class ChannelRefs:
    """Per-channel token/speaker sequences plus utterance boundaries."""
    tokens: list[list[int]] = field(default_factory=lambda: [[], []])
    speakers: list[list[int]] = field(default_factory=lambda: [[], []])
    # (start_frame, end_frame, index into the input utterance list)
    spans: list[list[tuple[int, int, int]]] = field(default_factory=lambda: [[], []])


def heat_assign(utterances: list[Utterance]) -> ChannelRefs:
    """First-available-channel assignment in start-time order."""
    order = sorted(range(len(utterances)), key=lambda i: (utterances[i].start_frame, i))
    refs = ChannelRefs()
    channel_end = [0, 0]
    for i in order:
        utt = utterances[i]
        for c in range(NUM_CHANNELS):
            if channel_end[c] <= utt.start_frame:
                refs.tokens[c].extend(utt.tokens)
                refs.speakers[c].extend([utt.speaker] * len(utt.tokens))
                refs.spans[c].append((utt.start_frame, utt.end_frame, i))
                channel_end[c] = utt.end_frame
                break
        else:
            raise OverlapError(
                f"three-way overlap at frame {utt.start_frame}: no free channel"
            )
    return refs


def relative_speaker_map(group: list[Utterance], prefix_order: list[int],
                         k_max: int) -> dict[int, int]:
    """Global speaker id -> relative label.

    Prefixed speakers take labels 1..K_m in buffer order; remaining speakers
    get labels K_m+1, ... in order of first start within the group (FIFO).
    """
    mapping = {spk: k + 1 for k, spk in enumerate(prefix_order)}
    next_label = len(prefix_order) + 1
    for utt in sorted(group, key=lambda u: u.start_frame):
        if utt.speaker not in mapping:
            mapping[utt.speaker] = next_label
            next_label += 1
    if next_label - 1 > k_max:
        raise LabelSpaceError(
            f"{next_label - 1} relative speaker labels exceed K_max={k_max}"
        )
    return mapping


def mask_targets(mixture: np.ndarray, assignment: ChannelRefs,
                 utterances: list[Utterance]) -> tuple[np.ndarray, np.ndarray]:
    """Clean per-channel source sums, zero-padded to the mixture length."""
    T, F = mixture.shape
    targets = [np.zeros((T, F)), np.zeros((T, F))]
    for c in range(NUM_CHANNELS):
        for start, end, idx in assignment.spans[c]:
            feats = utterances[idx].features
            if feats is None:
                raise ShapeError(f"utterance {idx} has no features for mask targets")
            if feats.shape != (end - start, F):
                raise ShapeError(
                    f"utterance {idx} features {feats.shape} do not match span "
                    f"[{start}, {end}) x {F}"
                )
            targets[c][start:end] += feats
    return targets[0], targets[1]
