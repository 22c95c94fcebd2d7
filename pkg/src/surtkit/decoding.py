"""Frame-synchronous greedy joint decoding and session-level reconciliation.

Per encoder frame the main joiner proposes blank mass b = sigma(z[0]) and the
label mass (1-b) * softmax(z[1:]); blank is emitted iff b >= the best scaled
label mass. A non-blank step emits the argmax token together with the argmax
speaker from the auxiliary logits at the same position, so token and speaker
streams stay synchronized by construction.

Session modes:
  none       - groups decoded independently, fresh global speaker ids per group
  prefix     - groups prefixed with tau-frame buffers of previously seen
               speakers, fixing the relative label order; buffers keep the
               highest-confidence window seen so far
  enrollment - buffers built once from clean per-speaker enrollment
               utterances, never updated
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, no_grad, sigmoid_np
from .errors import LabelSpaceError, ShapeError
from .mixsim import Session
from .model import SurtModel

MAX_SYMBOLS_PER_FRAME = 4


@dataclass
class Emission:
    frame: int
    token: int
    rel_speaker: int
    blank_conf: float
    spk_posterior: np.ndarray


@dataclass
class ChannelHypothesis:
    emissions: list[Emission] = field(default_factory=list)
    aux_trace: np.ndarray | None = None   # (T', K_max+1) last aux logits per frame

    @property
    def tokens(self) -> list[int]:
        return [e.token for e in self.emissions]

    @property
    def rel_speakers(self) -> list[int]:
        return [e.rel_speaker for e in self.emissions]


@dataclass
class SpeakerBuffer:
    global_id: int
    frames: np.ndarray       # (tau, F)
    confidence: float
    source_chunk: int


@dataclass
class GroupDecode:
    hyps: tuple[ChannelHypothesis, ChannelHypothesis]
    rel_to_global: dict[int, int]
    k_m: int
    clamped: int = 0

    def global_speakers(self, channel: int) -> list[int]:
        return [self.rel_to_global[e.rel_speaker] for e in self.hyps[channel].emissions]


@dataclass
class SessionTranscript:
    session_id: str
    groups: list[GroupDecode] = field(default_factory=list)
    num_global: int = 0
    clamped: int = 0


# ---------------------------------------------------------------------------
# prefix construction
# ---------------------------------------------------------------------------

def build_prefix(buffers: list[SpeakerBuffer], x: np.ndarray) -> tuple[np.ndarray, int]:
    """Prepend buffer frames (in order) to the chunk. Returns (x_tilde, K_m)."""
    if not buffers:
        return x, 0
    return np.concatenate([b.frames for b in buffers] + [x], axis=0), len(buffers)


def strip_prefix(f: np.ndarray, f_aux: np.ndarray, k_m: int, tau: int,
                 s: int) -> tuple[np.ndarray, np.ndarray]:
    """Drop the K_m * tau / s leading encoder frames from both outputs."""
    if tau % s != 0:
        raise ShapeError("subsample must divide tau")
    n = k_m * tau // s
    if f.shape[0] < n or f_aux.shape[0] < n:
        raise ShapeError(
            f"encoder output ({f.shape[0]} frames) shorter than prefix ({n} frames)")
    return f[n:], f_aux[n:]


def select_buffer_window(trace: np.ndarray, tau: int, s: int) -> tuple[int, float, bool]:
    """Contiguous tau/s-frame window maximizing the summed logit trace.

    Returns (start encoder frame, confidence sum, short_flag). Ties break to
    the earliest window. A trace shorter than the window is taken whole and
    flagged (caller pads by repetition).
    """
    w = tau // s
    trace = np.asarray(trace, dtype=np.float64)
    if len(trace) == 0:
        raise ValueError("empty logit trace")
    if len(trace) < w:
        return 0, float(trace.sum()), True
    sums = np.convolve(trace, np.ones(w), mode="valid")
    start = int(np.argmax(sums))  # argmax returns the earliest maximum
    return start, float(sums[start]), False


def _window_frames(x: np.ndarray, start_enc: int, tau: int, s: int) -> np.ndarray:
    """Map an encoder-frame window back to tau input frames of x."""
    lo = start_enc * s
    frames = x[lo:lo + tau]
    if len(frames) < tau:
        reps = math.ceil(tau / max(1, len(frames)))
        frames = np.concatenate([frames] * reps, axis=0)[:tau]
    return frames


# ---------------------------------------------------------------------------
# greedy decoding
# ---------------------------------------------------------------------------

class _NumpyDecoder:
    """Raw-ndarray views of the model parameters for the per-frame loop."""

    def __init__(self, model: SurtModel):
        self.p = {k: v.data for k, v in model.params.items()}
        self.config = model.config

    def pred_start(self) -> np.ndarray:
        return self.p["pred.h0"].copy()

    def pred_step(self, token: int, h: np.ndarray) -> np.ndarray:
        x = self.p["pred.emb"][token]
        H = h.shape[0]
        xw = x @ self.p["pred.rnn.W"]
        hu = h @ self.p["pred.rnn.U"]
        b = self.p["pred.rnn.b"]
        z = sigmoid_np(xw[:H] + hu[:H] + b[:H])
        r = sigmoid_np(xw[H:2 * H] + hu[H:2 * H] + b[H:2 * H])
        n = np.tanh(xw[2 * H:] + r * hu[2 * H:] + b[2 * H:])
        return (1.0 - z) * n + z * h

    def joint(self, f_t: np.ndarray, f_aux_t: np.ndarray,
              g_u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        jh = np.tanh(f_t @ self.p["joint.Wf"] + g_u @ self.p["joint.Wg"]
                     + self.p["joint.b"])
        z = jh @ self.p["joint.out_W"] + self.p["joint.out_b"]
        ah = np.tanh(f_aux_t @ self.p["auxjoint.Wf"] + g_u @ self.p["auxjoint.Wg"]
                     + self.p["auxjoint.b"])
        z_aux = np.concatenate(
            [z[0:1], ah @ self.p["auxjoint.out_W"] + self.p["auxjoint.out_b"]])
        return z, z_aux


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / e.sum()


def encode_features(model: SurtModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full-network forward for one chunk: (f (2, T', D), f_aux (2, T', Da))."""
    with no_grad():
        xt = Tensor(x[None, :, :])
        m1, m2 = model.mask_net_forward(xt)
        h_cat = concat([m1 * xt, m2 * xt], axis=0)
        f, h_tap = model.encoder_forward(h_cat)
        f_aux = model.aux_encoder_forward(h_tap)
    tp = math.ceil(len(x) / model.config.subsample)
    return f.data[:, :tp], f_aux.data[:, :tp]


def greedy_joint_decode(model: SurtModel, x: np.ndarray, k_m: int = 0,
                        max_symbols: int = MAX_SYMBOLS_PER_FRAME,
                        ) -> tuple[ChannelHypothesis, ChannelHypothesis]:
    """Decode one (possibly prefixed) chunk; prefix frames are stripped."""
    c = model.config
    f, f_aux = encode_features(model, x)
    dec = _NumpyDecoder(model)
    hyps = []
    for ch in (0, 1):
        fc, fac = strip_prefix(f[ch], f_aux[ch], k_m, c.tau, c.subsample)
        hyps.append(_decode_channel(dec, fc, fac, max_symbols))
    return hyps[0], hyps[1]


def _decode_channel(dec: _NumpyDecoder, f: np.ndarray, f_aux: np.ndarray,
                    max_symbols: int) -> ChannelHypothesis:
    hyp = ChannelHypothesis()
    tp = f.shape[0]
    trace = np.zeros((tp, dec.config.k_max + 1))
    g = dec.pred_start()
    for t in range(tp):
        emitted = 0
        while True:
            z, z_aux = dec.joint(f[t], f_aux[t], g)
            trace[t] = z_aux
            b = float(sigmoid_np(np.asarray([z[0]]))[0])
            label_probs = _softmax(z[1:])
            best = float(label_probs.max())
            if b >= (1.0 - b) * best or emitted >= max_symbols:
                break
            token = int(np.argmax(label_probs)) + 1
            post = _softmax(z_aux[1:])
            spk = int(np.argmax(post)) + 1
            hyp.emissions.append(Emission(
                frame=t, token=token, rel_speaker=spk,
                blank_conf=b, spk_posterior=post))
            g = dec.pred_step(token, g)
            emitted += 1
    hyp.aux_trace = trace
    return hyp


# ---------------------------------------------------------------------------
# session decoding with label reconciliation
# ---------------------------------------------------------------------------

def decode_session(model: SurtModel, session: Session, mode: str = "none",
                   max_symbols: int = MAX_SYMBOLS_PER_FRAME) -> SessionTranscript:
    if mode not in ("none", "prefix", "enrollment"):
        raise ValueError(f"unknown decode mode {mode!r}")
    c = model.config
    out = SessionTranscript(session_id=session.session_id)

    buffers: list[SpeakerBuffer] = []
    if mode == "enrollment":
        for spk in sorted(session.enrollment):
            feats = session.enrollment[spk]
            frames = _window_frames(feats, 0, c.tau, c.subsample)
            buffers.append(SpeakerBuffer(
                global_id=len(buffers) + 1, frames=frames,
                confidence=float("inf"), source_chunk=-1))

    next_global = len(buffers) + 1
    for gi, group in enumerate(session.groups):
        use_prefix = mode in ("prefix", "enrollment")
        k_m = len(buffers) if use_prefix else 0
        x = group.mixture
        if use_prefix and buffers:
            x, k_m = build_prefix(buffers, x)
        h1, h2 = greedy_joint_decode(model, x, k_m=k_m, max_symbols=max_symbols)

        rel_to_global: dict[int, int] = {k + 1: buffers[k].global_id for k in range(k_m)}
        clamped = 0
        new_rels: list[int] = []
        for hyp in (h1, h2):
            for e in hyp.emissions:
                k = e.rel_speaker
                if k in rel_to_global:
                    continue
                expected = k_m + len(new_rels) + 1
                if k != expected:
                    clamped += 1
                rel_to_global[k] = next_global
                new_rels.append(k)
                next_global += 1
                if next_global - 1 > c.k_max and mode != "none":
                    raise LabelSpaceError(
                        f"session {session.session_id}: more than K_max={c.k_max} "
                        "global speakers")

        gd = GroupDecode(hyps=(h1, h2), rel_to_global=rel_to_global,
                         k_m=k_m, clamped=clamped)
        out.groups.append(gd)
        out.clamped += clamped

        if mode == "prefix":
            _update_buffers(buffers, gd, group.mixture, c.tau, c.subsample, gi)
        if mode == "none":
            # fresh ids per group: nothing persists
            pass
    out.num_global = next_global - 1
    return out


def _update_buffers(buffers: list[SpeakerBuffer], gd: GroupDecode,
                    x: np.ndarray, tau: int, s: int, chunk_index: int) -> None:
    """Keep, per speaker, the highest-confidence tau-frame window seen so far."""
    h1, h2 = gd.hyps
    if not h1.emissions and not h2.emissions:
        return  # no decoded speech: buffers unchanged
    trace = np.maximum(h1.aux_trace, h2.aux_trace)   # (T', K_max+1)
    by_global = {b.global_id: b for b in buffers}
    for k, gid in sorted(gd.rel_to_global.items()):
        if trace.shape[0] == 0:
            continue
        start, conf, _short = select_buffer_window(trace[:, k], tau, s)
        if gid in by_global:
            if conf > by_global[gid].confidence:
                by_global[gid].frames = _window_frames(x, start, tau, s)
                by_global[gid].confidence = conf
                by_global[gid].source_chunk = chunk_index
        else:
            buffers.append(SpeakerBuffer(
                global_id=gid, frames=_window_frames(x, start, tau, s),
                confidence=conf, source_chunk=chunk_index))
            by_global[gid] = buffers[-1]
    buffers.sort(key=lambda b: b.global_id)
