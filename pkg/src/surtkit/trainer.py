"""Training objective and loop for the toy SURT model.

Modes:
  asr_only     - two-channel HAT (or RNN-T) + lambda_ctc * CTC + lambda_mask * MSE
  speaker_only - auxiliary speaker HAT loss only; all non-auxiliary parameters
                 frozen and the shared blank-logit gradient dropped
  joint        - sum of both objectives, blank gradient flows everywhere

Training-time speaker prefixing (speaker_only / joint): the number of
prefixed speakers is drawn from a fixed categorical, each prefixed speaker
contributes a random tau-frame window of clean segments, and relative label
targets follow the prefix order.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import lattice
from .autodiff import Adam, Tensor, concat
from .errors import NumericalError
from .heat import heat_assign, mask_targets, relative_speaker_map
from .mixsim import Session, UtteranceGroup
from .model import SurtModel, lattice_loss_node

K_PROBS_DEFAULT = (0.05, 0.05, 0.1, 0.2, 0.6)


@dataclass
class PrefixSampler:
    """Training-time prefix construction for the speaker branch."""
    tau: int
    k_probs: tuple = K_PROBS_DEFAULT
    group_bias: float = 0.75   # probability of drawing a prefixed speaker from the group

    def sample_k(self, rng: np.random.Generator) -> int:
        return int(rng.choice(len(self.k_probs), p=np.asarray(self.k_probs)))

    def sample_window(self, feats: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if len(feats) < self.tau:
            reps = math.ceil(self.tau / len(feats))
            feats = np.concatenate([feats] * reps, axis=0)
        start = int(rng.integers(0, len(feats) - self.tau + 1))
        return feats[start:start + self.tau]

    def sample(self, group_speakers: list[int], pool: dict[int, np.ndarray],
               k_max: int, rng: np.random.Generator):
        """Returns (prefix_order, prefix_features (K_m*tau, F) | None)."""
        k = self.sample_k(rng)
        k = min(k, len(pool))
        others = [s for s in pool if s not in group_speakers]
        in_group = [s for s in group_speakers if s in pool]
        rng.shuffle(others)
        rng.shuffle(in_group)
        chosen: list[int] = []
        for _ in range(k):
            take_group = in_group and (not others or rng.random() < self.group_bias)
            chosen.append(in_group.pop() if take_group else others.pop())
        # keep the relative label space within K_max
        uncovered = [s for s in group_speakers if s not in chosen]
        while k + len(uncovered) > k_max and uncovered:
            swap = next((i for i, s in enumerate(chosen) if s not in group_speakers), None)
            if swap is None:
                break
            chosen[swap] = uncovered.pop()
            uncovered = [s for s in group_speakers if s not in chosen]
        rng.shuffle(chosen)
        if not chosen:
            return [], None
        windows = [self.sample_window(pool[s], rng) for s in chosen]
        return chosen, np.concatenate(windows, axis=0)


@dataclass
class TrainItem:
    """One utterance group plus the clean per-speaker features of its session."""
    group: UtteranceGroup
    speaker_pool: dict[int, np.ndarray] = field(default_factory=dict)


def build_train_items(sessions: list[Session]) -> list[TrainItem]:
    items = []
    for sess in sessions:
        pool: dict[int, np.ndarray] = {}
        for spk, feats in sess.enrollment.items():
            pool[spk] = feats
        for g in sess.groups:
            for u in g.utterances:
                if u.features is None:
                    continue
                if u.speaker in pool:
                    pool[u.speaker] = np.concatenate([pool[u.speaker], u.features])
                else:
                    pool[u.speaker] = u.features
        for g in sess.groups:
            items.append(TrainItem(group=g, speaker_pool=pool))
    return items


@dataclass
class LossStats:
    total: float = 0.0
    asr: float = 0.0
    ctc: float = 0.0
    mask: float = 0.0
    aux: float = 0.0
    ctc_skipped: int = 0


def surt_training_loss(model: SurtModel, items: list[TrainItem], mode: str,
                       rng: np.random.Generator | None = None,
                       prefix_sampler: PrefixSampler | None = None,
                       asr_loss: str = "hat",
                       input_noise: float = 0.0,
                       mask_shuffle: bool = False) -> tuple[Tensor, LossStats]:
    """Batch loss per the combined objective; see module docstring."""
    if mode not in ("asr_only", "speaker_only", "joint"):
        raise ValueError(f"unknown training mode {mode!r}")
    c = model.config
    rng = rng or np.random.default_rng(0)
    B = len(items)
    use_asr = mode in ("asr_only", "joint")
    use_aux = mode in ("speaker_only", "joint")

    refs_list, spk_labels_list, x_list, prefix_frames = [], [], [], []
    for item in items:
        group = item.group
        refs = heat_assign(group.utterances)
        refs_list.append(refs)
        x = group.mixture
        prefix_order: list[int] = []
        if use_aux and prefix_sampler is not None and item.speaker_pool:
            prefix_order, pf = prefix_sampler.sample(
                group.speakers, item.speaker_pool, c.k_max, rng)
            if pf is not None:
                x = np.concatenate([pf, x], axis=0)
        prefix_frames.append(len(prefix_order) * (prefix_sampler.tau if prefix_sampler else 0))
        rel = relative_speaker_map(group.utterances, prefix_order, c.k_max)
        spk_labels_list.append([[rel[s] for s in refs.speakers[ch]] for ch in (0, 1)])
        x_list.append(x)

    s = c.subsample
    T_max = max(len(x) for x in x_list)
    T_max += (-T_max) % s
    X = np.zeros((B, T_max, c.feature_dim))
    for i, x in enumerate(x_list):
        X[i, :len(x)] = x
    X_clean = X
    if input_noise > 0.0:
        # jitter the mixture only; clean-source mask targets stay fixed
        X = X + rng.normal(0.0, input_noise, size=X.shape)
    X = Tensor(X)

    m1, m2 = model.mask_net_forward(X)
    h1, h2 = m1 * X, m2 * X
    h_cat = concat([h1, h2], axis=0)                      # channel-major (2B, T, F)
    f, h_tap = model.encoder_forward(h_cat)
    f_aux = model.aux_encoder_forward(h_tap) if use_aux else None

    label_batch = [refs_list[i].tokens[ch] for ch in (0, 1) for i in range(B)]
    g = model.predictor_forward(label_batch)

    stats = LossStats()
    asr_terms, ctc_terms, aux_terms = [], [], []
    asr_frames = ctc_frames = aux_frames = 0
    loss_fn = lattice.hat_loss if asr_loss == "hat" else lattice.rnnt_loss
    for ch in (0, 1):
        for i in range(B):
            row = ch * B + i
            strip = prefix_frames[i] // s
            tp = math.ceil(len(x_list[i]) / s)
            f_i = f[row, strip:tp, :]
            g_i = g[row, :len(label_batch[row]) + 1, :]
            tokens = refs_list[i].tokens[ch]
            z = model.main_joint(f_i, g_i)
            if use_asr:
                asr_terms.append(lattice_loss_node(z, tokens, loss_fn))
                asr_frames += tp - strip
                if c.lambda_ctc > 0:
                    if tp - strip >= lattice.ctc_min_frames(np.asarray(tokens)):
                        lp = model.ctc_head(f_i)
                        ctc_terms.append(lattice_loss_node(
                            lp, tokens, lambda a, b: lattice.ctc_loss(a, b, check=False)))
                        ctc_frames += tp - strip
                    else:
                        stats.ctc_skipped += 1
            if use_aux:
                blank = z[:, :, 0:1]
                if mode == "speaker_only":
                    blank = blank.detach()
                z_aux = model.aux_joint(f_aux[row, strip:tp, :], g_i, blank)
                aux_terms.append(lattice_loss_node(
                    z_aux, spk_labels_list[i][ch], lattice.aux_hat_loss))
                aux_frames += tp - strip

    zero = Tensor(np.asarray(0.0))
    total = zero
    if asr_terms:
        asr = sum(asr_terms, zero) / float(max(1, asr_frames))
        stats.asr = float(asr.data)
        total = total + asr
    if ctc_terms:
        ctc = sum(ctc_terms, zero) / float(max(1, ctc_frames))
        stats.ctc = float(ctc.data)
        total = total + c.lambda_ctc * ctc
    if use_asr and c.lambda_mask > 0:
        hm1, hm2 = h1, h2
        perm = np.arange(c.feature_dim)
        if mask_shuffle:
            # Extra mask-net pass on a feature-dim-shuffled copy of the
            # batch (targets shuffled identically).  The channel-routing
            # rule is invariant to relabeling the feature dims, while a
            # routing memorized per training group is not, so this drives
            # the masks toward the rule instead of the lookup table.
            perm = rng.permutation(c.feature_dim)
            xp = X_clean[:, :, perm]
            xp_in = xp
            if input_noise > 0.0:
                xp_in = xp + rng.normal(0.0, input_noise, size=xp.shape)
            mp1, mp2 = model.mask_net_forward(Tensor(xp_in))
            xp_t = Tensor(xp)
            hm1, hm2 = mp1 * xp_t, mp2 * xp_t
        mask_terms = []
        for i, item in enumerate(items):
            t1, t2 = mask_targets(item.group.mixture, refs_list[i], item.group.utterances)
            pf, T_i = prefix_frames[i], len(x_list[i])
            d1 = hm1[i, pf:T_i, :] - Tensor(t1[:, perm])
            d2 = hm2[i, pf:T_i, :] - Tensor(t2[:, perm])
            mask_terms.append((d1 * d1).mean() + (d2 * d2).mean())
        mask = sum(mask_terms, zero) / float(B)
        stats.mask = float(mask.data)
        total = total + c.lambda_mask * mask
    if aux_terms:
        aux = sum(aux_terms, zero) / float(max(1, aux_frames))
        stats.aux = float(aux.data)
        total = total + aux

    stats.total = float(total.data)
    return total, stats


def trainable_param_names(model: SurtModel, mode: str) -> list[str]:
    if mode == "speaker_only":
        return model.aux_param_names()
    return list(model.params)


def train_model(model: SurtModel, items: list[TrainItem], mode: str,
                epochs: int = 10, batch_size: int = 16, lr: float = 3e-3,
                warmup_steps: int = 50, decay: float = 0.999,
                seed: int = 0, prefix_sampler: PrefixSampler | None = None,
                asr_loss: str = "hat", input_noise: float = 0.0,
                mask_shuffle: bool = False, log=print,
                checkpoint_path=None, start_step: int = 0) -> list[float]:
    """Run one training stage; returns the per-step loss curve."""
    rng = np.random.default_rng(seed)
    names = trainable_param_names(model, mode)
    frozen = [k for k in model.params if k not in names]
    saved_flags = {k: model.params[k].requires_grad for k in model.params}
    for k in frozen:
        model.params[k].requires_grad = False  # prunes the frozen subgraph

    opt = Adam({k: model.params[k] for k in names}, lr=lr,
               warmup_steps=warmup_steps, decay=decay)
    curve: list[float] = []
    step = start_step
    t0 = time.monotonic()
    try:
        for epoch in range(epochs):
            order = rng.permutation(len(items))
            for lo in range(0, len(items), batch_size):
                batch = [items[j] for j in order[lo:lo + batch_size]]
                loss, stats = surt_training_loss(
                    model, batch, mode, rng=rng,
                    prefix_sampler=prefix_sampler, asr_loss=asr_loss,
                    input_noise=input_noise, mask_shuffle=mask_shuffle)
                if not np.isfinite(stats.total):
                    raise NumericalError(
                        f"non-finite loss at step {step}; last good checkpoint kept")
                loss.backward()
                opt.step()
                opt.zero_grad()
                step += 1
                curve.append(stats.total)
                if log is not None and (step % 20 == 0 or lo == 0):
                    log(f"step={step} epoch={epoch} mode={mode} loss={stats.total:.4f} "
                        f"asr={stats.asr:.4f} aux={stats.aux:.4f} mask={stats.mask:.4f} "
                        f"ctc={stats.ctc:.4f} lr={opt.lr_at(opt.step_count):.2e} "
                        f"elapsed={time.monotonic() - t0:.1f}s")
            if checkpoint_path is not None:
                model.save(checkpoint_path)
    finally:
        for k, flag in saved_flags.items():
            model.params[k].requires_grad = flag
    return curve
