"""Toy streaming SURT network.

Masking network (GRU) -> two masked streams -> shared causal encoder (frame
concatenation subsampling + GRU stack) -> main joiner over (f, g) and an
auxiliary speaker branch: a GRU encoder tapped at an intermediate main-encoder
layer, joined with the same prediction-network output. The auxiliary joiner
produces speaker slots 1..K_max only; slot 0 is always the main joiner's
blank logit, so blank emission is synchronized by construction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, concat, gather_rows, stack
from .errors import DataError, ShapeError
from .tensorio import read_tensors, write_tensors


@dataclass
class ModelConfig:
    feature_dim: int = 16
    vocab_size: int = 16
    k_max: int = 6
    mask_hidden: int = 48
    enc_layers: int = 2
    enc_hidden: int = 48
    aux_tap_layer: int = 1
    aux_layers: int = 2
    aux_hidden: int = 48
    pred_hidden: int = 32
    joint_hidden: int = 48
    subsample: int = 4
    tau: int = 16                  # prefix frames per speaker
    lambda_ctc: float = 0.2
    lambda_mask: float = 0.2
    seed: int = 1

    def __post_init__(self):
        if not 1 <= self.aux_tap_layer <= self.enc_layers:
            raise ValueError("aux_tap_layer must be in [1, enc_layers]")
        if self.tau % self.subsample != 0:
            raise ValueError("subsample must divide tau")
        if self.lambda_ctc < 0 or self.lambda_mask < 0:
            raise ValueError("loss weights must be >= 0")


def _init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)


def _gru_params(rng, prefix: str, in_dim: int, hidden: int) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.W": _init(rng, (in_dim, 3 * hidden), in_dim),
        f"{prefix}.U": _init(rng, (hidden, 3 * hidden), hidden),
        f"{prefix}.b": np.zeros(3 * hidden),
    }


def gru_step(params: dict[str, Tensor], prefix: str, x: Tensor, h: Tensor) -> Tensor:
    """One GRU step; x (B, in), h (B, H) -> new h (B, H)."""
    H = params[f"{prefix}.U"].shape[0]
    xw = x @ params[f"{prefix}.W"]
    hu = h @ params[f"{prefix}.U"]
    b = params[f"{prefix}.b"]
    z = (xw[:, :H] + hu[:, :H] + b[:H]).sigmoid()
    r = (xw[:, H:2 * H] + hu[:, H:2 * H] + b[H:2 * H]).sigmoid()
    n = (xw[:, 2 * H:] + r * hu[:, 2 * H:] + b[2 * H:]).tanh()
    return (1.0 - z) * n + z * h


def gru_forward(params: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    """Run a GRU over x (B, T, in) -> (B, T, H), zero initial state."""
    B, T, _ = x.shape
    H = params[f"{prefix}.U"].shape[0]
    h = Tensor(np.zeros((B, H)))
    outs = []
    for t in range(T):
        h = gru_step(params, prefix, x[:, t, :], h)
        outs.append(h)
    return stack(outs, axis=1)


def lattice_loss_node(logits: Tensor, labels, loss_fn) -> Tensor:
    """Wrap an analytic-gradient lattice loss as an autodiff node."""
    res = loss_fn(logits.data, labels)
    out = Tensor(np.asarray(res.loss))
    if ad._GRAD_ENABLED and (logits.requires_grad or logits._parents):
        grad = res.grad
        out._parents = (logits,)
        out._backward = lambda g: (g * grad,)
    return out


class SurtModel:
    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        if params is None:
            params = self._init_params()
        self.params: dict[str, Tensor] = {
            k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True, name=k)
            for k, v in params.items()
        }

    # -- parameters -----------------------------------------------------------

    def _init_params(self) -> dict[str, np.ndarray]:
        c = self.config
        rng = np.random.default_rng(c.seed)
        p: dict[str, np.ndarray] = {}
        F, V = c.feature_dim, c.vocab_size

        p.update(_gru_params(rng, "mask.rnn", F, c.mask_hidden))
        # The mask head sees the recurrent state, the current and previous
        # frames, the previous masks, and the elementwise persistence
        # product x_t * x_{t-1}.  Masks are updated through a per-dim copy
        # gate, m_t = g * m_{t-1} + (1-g) * candidate, with the gate bias
        # initialized toward copying: channel routing ("a dim that
        # persists keeps its channel") is then structural, so the net only
        # has to learn the boundary decisions instead of memorizing
        # channel ownership in the recurrent state
        head_in = c.mask_hidden + 5 * F
        p["mask.head_W"] = _init(rng, (head_in, c.mask_hidden), head_in)
        p["mask.head_b"] = np.zeros(c.mask_hidden)
        p["mask.out_W"] = _init(rng, (c.mask_hidden, 2 * F), c.mask_hidden)
        p["mask.out_b"] = np.zeros(2 * F)
        p["mask.gate_W"] = _init(rng, (c.mask_hidden, 2 * F), c.mask_hidden)
        p["mask.gate_b"] = np.full(2 * F, 2.0)

        p["enc.sub_W"] = _init(rng, (c.subsample * F, c.enc_hidden), c.subsample * F)
        p["enc.sub_b"] = np.zeros(c.enc_hidden)
        for l in range(c.enc_layers):
            p.update(_gru_params(rng, f"enc.rnn{l}", c.enc_hidden, c.enc_hidden))

        in_dim = c.enc_hidden
        for l in range(c.aux_layers):
            p.update(_gru_params(rng, f"aux.rnn{l}", in_dim, c.aux_hidden))
            in_dim = c.aux_hidden

        p["pred.emb"] = _init(rng, (V + 1, c.pred_hidden), c.pred_hidden)
        p["pred.h0"] = _init(rng, (c.pred_hidden,), c.pred_hidden)
        p.update(_gru_params(rng, "pred.rnn", c.pred_hidden, c.pred_hidden))

        p["joint.Wf"] = _init(rng, (c.enc_hidden, c.joint_hidden), c.enc_hidden)
        p["joint.Wg"] = _init(rng, (c.pred_hidden, c.joint_hidden), c.pred_hidden)
        p["joint.b"] = np.zeros(c.joint_hidden)
        p["joint.out_W"] = _init(rng, (c.joint_hidden, V + 1), c.joint_hidden)
        p["joint.out_b"] = np.zeros(V + 1)

        p["auxjoint.Wf"] = _init(rng, (c.aux_hidden, c.joint_hidden), c.aux_hidden)
        p["auxjoint.Wg"] = _init(rng, (c.pred_hidden, c.joint_hidden), c.pred_hidden)
        p["auxjoint.b"] = np.zeros(c.joint_hidden)
        p["auxjoint.out_W"] = _init(rng, (c.joint_hidden, c.k_max), c.joint_hidden)
        p["auxjoint.out_b"] = np.zeros(c.k_max)

        p["ctc.W"] = _init(rng, (c.enc_hidden, V + 1), c.enc_hidden)
        p["ctc.b"] = np.zeros(V + 1)
        return p

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def aux_param_names(self) -> list[str]:
        """Parameters of the speaker branch (aux encoder + aux joiner)."""
        return [k for k in self.params if k.startswith(("aux.", "auxjoint."))]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        write_tensors(path, {k: v.data for k, v in self.params.items()})
        sidecar = path.with_suffix(path.suffix + ".json")
        from .tensorio import write_text_atomic
        write_text_atomic(sidecar, json.dumps(asdict(self.config), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SurtModel":
        path = Path(path)
        sidecar = path.with_suffix(path.suffix + ".json")
        if not path.exists() or not sidecar.exists():
            raise DataError(f"checkpoint not found: {path}")
        with open(sidecar) as f:
            config = ModelConfig(**json.load(f))
        params = {k: v.astype(np.float64) for k, v in read_tensors(path).items()}
        return cls(config, params)

    # -- forward passes ---------------------------------------------------------

    def mask_net_forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """x (B, T, F) -> masks M1, M2 each (B, T, F) in [0, 1]."""
        F = self.config.feature_dim
        B, T, _ = x.shape
        h = Tensor(np.zeros((B, self.config.mask_hidden)))
        x_prev = Tensor(np.zeros((B, F)))
        m_prev = Tensor(np.full((B, 2 * F), 0.5))
        outs = []
        for t in range(T):
            x_t = x[:, t, :]
            h = gru_step(self.params, "mask.rnn", x_t, h)
            hx = concat([h, x_t, x_prev, m_prev, x_t * x_prev], axis=1)
            u = (hx @ self.params["mask.head_W"]
                 + self.params["mask.head_b"]).tanh()
            cand = (u @ self.params["mask.out_W"]
                    + self.params["mask.out_b"]).sigmoid()
            gate = (u @ self.params["mask.gate_W"]
                    + self.params["mask.gate_b"]).sigmoid()
            m = gate * m_prev + (1.0 - gate) * cand
            outs.append(m)
            x_prev, m_prev = x_t, m
        m = stack(outs, axis=1)
        return m[:, :, :F], m[:, :, F:]

    def encoder_forward(self, h_in: Tensor) -> tuple[Tensor, Tensor]:
        """h_in (B, T, F) -> (f (B, T', D), h_tap); T' = ceil(T/s).

        Strictly causal: frame j of the output depends only on input frames
        < (j+1)*s (zero lookahead beyond the subsampling block).
        """
        c = self.config
        B, T, F = h_in.shape
        s = c.subsample
        if T % s != 0:
            pad = Tensor(np.zeros((B, s - T % s, F)))
            h_in = concat([h_in, pad], axis=1)
            T = h_in.shape[1]
        x = h_in.reshape(B, T // s, s * F)
        x = (x @ self.params["enc.sub_W"] + self.params["enc.sub_b"]).tanh()
        h_tap = None
        for l in range(c.enc_layers):
            x = gru_forward(self.params, f"enc.rnn{l}", x)
            if l + 1 == c.aux_tap_layer:
                h_tap = x
        return x, h_tap

    def aux_encoder_forward(self, h_tap: Tensor) -> Tensor:
        """Recurrent (unbounded-history) speaker encoder over the tap."""
        x = h_tap
        for l in range(self.config.aux_layers):
            x = gru_forward(self.params, f"aux.rnn{l}", x)
        return x

    def predictor_forward(self, label_batch: list[list[int]]) -> Tensor:
        """Padded batch of label prefixes -> g (B, U_max+1, P); g[:,0] is the
        learned start state."""
        V = self.config.vocab_size
        for labels in label_batch:
            if labels and (min(labels) < 1 or max(labels) > V):
                raise ShapeError(f"predictor labels out of range [1, {V}]")
        B = len(label_batch)
        U_max = max((len(l) for l in label_batch), default=0)
        padded = np.zeros((B, U_max), dtype=np.int64)
        for i, labels in enumerate(label_batch):
            padded[i, :len(labels)] = labels

        h0 = self.params["pred.h0"]
        h = stack([h0] * B, axis=0)
        outs = [h]
        emb = self.params["pred.emb"]
        for u in range(U_max):
            x = gather_rows(emb, padded[:, u])
            h = gru_step(self.params, "pred.rnn", x, h)
            outs.append(h)
        return stack(outs, axis=1)

    def main_joint(self, f: Tensor, g: Tensor) -> Tensor:
        """f (T', D), g (U+1, P) -> main logits z (T', U+1, V+1)."""
        jh = (
            (f @ self.params["joint.Wf"]).reshape(f.shape[0], 1, -1)
            + (g @ self.params["joint.Wg"]).reshape(1, g.shape[0], -1)
            + self.params["joint.b"]
        ).tanh()
        return jh @ self.params["joint.out_W"] + self.params["joint.out_b"]

    def aux_joint(self, f_aux: Tensor, g: Tensor, blank: Tensor) -> Tensor:
        """Speaker logits (T', U+1, K_max+1); slot 0 is the given blank logit."""
        ah = (
            (f_aux @ self.params["auxjoint.Wf"]).reshape(f_aux.shape[0], 1, -1)
            + (g @ self.params["auxjoint.Wg"]).reshape(1, g.shape[0], -1)
            + self.params["auxjoint.b"]
        ).tanh()
        rest = ah @ self.params["auxjoint.out_W"] + self.params["auxjoint.out_b"]
        return concat([blank, rest], axis=2)

    def joint_forward(self, f: Tensor, f_aux: Tensor, g: Tensor,
                      detach_blank: bool = False) -> tuple[Tensor, Tensor]:
        """f (T', D), f_aux (T', Da), g (U+1, P) -> z (T',U+1,V+1), z_aux.

        z_aux[..., 0] is exactly the main blank logit (shared storage in the
        graph; detached from the main branch when `detach_blank`).
        """
        z = self.main_joint(f, g)
        blank = z[:, :, 0:1]
        if detach_blank:
            blank = blank.detach()
        z_aux = self.aux_joint(f_aux, g, blank)
        return z, z_aux

    def ctc_head(self, f: Tensor) -> Tensor:
        """Encoder frames -> per-frame log-distributions over V+1."""
        return (f @ self.params["ctc.W"] + self.params["ctc.b"]).log_softmax(axis=-1)
