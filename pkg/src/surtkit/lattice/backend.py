"""Lattice DP backend selection.

Prefers the compiled Cython kernels; falls back to the pure-Python
implementation when the extension is unavailable. Set
``SURTKIT_LATTICE_BACKEND=python`` or ``=cython`` to force a choice.
"""

import os

_choice = os.environ.get("SURTKIT_LATTICE_BACKEND", "auto").lower()

if _choice == "python":
    from ._py_backend import ctc_dp, transducer_dp
    NAME = "python"
elif _choice == "cython":
    from ._kernels import ctc_dp, transducer_dp
    NAME = "cython"
else:
    try:
        from ._kernels import ctc_dp, transducer_dp
        NAME = "cython"
    except ImportError:
        from ._py_backend import ctc_dp, transducer_dp
        NAME = "python"
