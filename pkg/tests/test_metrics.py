"""Scoring metrics against brute-force oracles and invariance properties."""

import numpy as np
import pytest

from surtkit.metrics import (
    counting_accuracy,
    cpwer,
    cpwer_bruteforce,
    edit_distance,
    orc_wer,
    orc_wer_bruteforce,
    per_frame_entropy,
    wder,
)


def test_edit_distance_basics():
    assert edit_distance([1, 2, 3], [1, 2, 3])[0] == 0
    assert edit_distance([1, 2, 3], [1, 3])[0] == 1
    assert edit_distance([], [1, 2])[0] == 2
    assert edit_distance([1, 2], [])[0] == 2
    d, ali = edit_distance([1, 2, 3], [1, 9, 3])
    assert d == 1
    assert ali.counts() == {"match": 2, "sub": 1, "ins": 0, "del": 0}


def random_orc_case(rng):
    n = int(rng.integers(1, 5))
    refs = [list(rng.integers(1, 6, size=rng.integers(1, 5)).astype(int))
            for _ in range(n)]
    hyps = tuple(list(rng.integers(1, 6, size=rng.integers(0, 8)).astype(int))
                 for _ in range(2))
    return refs, hyps


def test_orc_wer_matches_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(200):
        refs, hyps = random_orc_case(rng)
        w, assignment, brk = orc_wer(refs, hyps)
        assert w == pytest.approx(orc_wer_bruteforce(refs, hyps), abs=1e-12)
        assert brk["errors"] == brk["ins"] + brk["del"] + brk["sub"]
        assert len(assignment) == len(refs)


def test_orc_wer_perfect_split():
    refs = [[1, 2], [3, 4, 5]]
    w, assignment, _ = orc_wer(refs, ([3, 4, 5], [1, 2]))
    assert w == 0.0
    assert assignment == [1, 0]


def random_cp_case(rng, max_spk=4):
    def side():
        return {int(k): list(rng.integers(1, 6, size=rng.integers(1, 6)).astype(int))
                for k in rng.choice(20, size=rng.integers(1, max_spk + 1),
                                    replace=False)}
    return side(), side()


def test_cpwer_matches_permutation_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        ref, hyp = random_cp_case(rng)
        w, mapping = cpwer(ref, hyp)
        assert w == pytest.approx(cpwer_bruteforce(ref, hyp), abs=1e-12)
        # mapping is injective over hypothesis speakers
        mapped = [v for v in mapping.values() if v is not None]
        assert len(mapped) == len(set(mapped))


def test_cpwer_invariant_under_hyp_relabeling():
    rng = np.random.default_rng(2)
    for _ in range(50):
        ref, hyp = random_cp_case(rng)
        w1, _ = cpwer(ref, hyp)
        relabeled = {k + 100: v for k, v in hyp.items()}
        w2, _ = cpwer(ref, relabeled)
        assert w1 == pytest.approx(w2, abs=1e-12)


def test_cpwer_unbalanced_speaker_counts():
    ref = {1: [1, 2, 3], 2: [4, 5]}
    hyp = {7: [1, 2, 3]}          # one hyp speaker: speaker 2 fully deleted
    w, mapping = cpwer(ref, hyp)
    assert w == pytest.approx(2 / 5)
    assert mapping[7] == 1


def test_wder_counts_wrongly_attributed_matches():
    refs = [[1, 2], [3, 4]]
    ref_speakers = [10, 20]
    hyps = ([1, 2], [3, 4])
    hyp_speakers = ([5, 5], [6, 6])
    _, assignment, _ = orc_wer(refs, hyps)
    ratio, defined = wder(refs, ref_speakers, hyps, hyp_speakers,
                          assignment, {5: 10, 6: 20})
    assert defined and ratio == 0.0
    ratio, defined = wder(refs, ref_speakers, hyps, hyp_speakers,
                          assignment, {5: 20, 6: 10})
    assert defined and ratio == 1.0


def test_wder_undefined_without_matches():
    refs = [[1, 2]]
    hyps = ([], [])
    _, assignment, _ = orc_wer(refs, hyps)
    ratio, defined = wder(refs, [1], hyps, ([], []), assignment, {})
    assert not defined and ratio == 0.0


def test_wder_invariant_under_consistent_relabeling():
    rng = np.random.default_rng(3)
    for _ in range(50):
        refs, hyps = random_orc_case(rng)
        ref_speakers = [int(rng.integers(1, 4)) for _ in refs]
        hyp_speakers = tuple([int(rng.integers(1, 4)) for _ in h] for h in hyps)
        _, assignment, _ = orc_wer(refs, hyps)
        mapping = {1: 1, 2: 2, 3: 3}
        r1 = wder(refs, ref_speakers, hyps, hyp_speakers, assignment, mapping)
        shifted = tuple([k + 10 for k in hs] for hs in hyp_speakers)
        mapping10 = {k + 10: v for k, v in mapping.items()}
        r2 = wder(refs, ref_speakers, hyps, shifted, assignment, mapping10)
        assert r1 == r2


def test_counting_accuracy():
    assert counting_accuracy([2, 3, 1], [2, 3, 2]) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        counting_accuracy([], [])


def test_per_frame_entropy():
    assert per_frame_entropy([]) is None
    uniform = np.full(4, 0.25)
    peaked = np.asarray([1.0, 0.0, 0.0, 0.0])
    assert per_frame_entropy([uniform]) == pytest.approx(np.log(4.0))
    assert per_frame_entropy([peaked]) == pytest.approx(0.0, abs=1e-9)
    assert per_frame_entropy([uniform]) > per_frame_entropy([peaked])
