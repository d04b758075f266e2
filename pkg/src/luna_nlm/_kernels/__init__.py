"""Hot kernels: batched MLP forward/backward.

A compiled Cython extension provides the fast path; a NumPy implementation
with identical semantics is the fallback, selected at import. Set
``LUNA_NLM_FORCE_NUMPY=1`` to skip the compiled extension (useful for
benchmarking and debugging).
"""

import os

if os.environ.get("LUNA_NLM_FORCE_NUMPY"):
    from ._numpy import mlp_backward, mlp_forward

    BACKEND = "numpy"
else:
    try:
        from ._mlp import mlp_backward, mlp_forward

        BACKEND = "cython"
    except ImportError:
        from ._numpy import mlp_backward, mlp_forward

        BACKEND = "numpy"

ACT_RELU = 0
ACT_TANH = 1

__all__ = ["mlp_forward", "mlp_backward", "BACKEND", "ACT_RELU", "ACT_TANH"]
