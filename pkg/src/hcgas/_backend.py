"""Kernel selection: the compiled extension when importable, else numpy.

Set ``HCGAS_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

_NAMES = ("node_keys", "node_keys_at", "disk_counts", "replica_keys", "uniforms", "stream", "split_draw",
          "sample_tree", "composition_lse", "mcmc_chain")

if os.environ.get("HCGAS_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

node_keys = _impl.node_keys
node_keys_at = _impl.node_keys_at
disk_counts = _impl.disk_counts
replica_keys = _impl.replica_keys
uniforms = _impl.uniforms
stream = _impl.stream
split_draw = _impl.split_draw
sample_tree = _impl.sample_tree
composition_lse = _impl.composition_lse
mcmc_chain = _impl.mcmc_chain

__all__ = ["BACKEND", *_NAMES]
