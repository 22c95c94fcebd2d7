from .api import (
    LossResult,
    aux_hat_loss,
    ctc_loss,
    ctc_min_frames,
    hat_loss,
    rnnt_loss,
)
from .backend import NAME as BACKEND_NAME
from .oracle import enumerate_paths_oracle

__all__ = [
    "LossResult",
    "rnnt_loss",
    "hat_loss",
    "aux_hat_loss",
    "ctc_loss",
    "ctc_min_frames",
    "enumerate_paths_oracle",
    "BACKEND_NAME",
]
