"""Kernel backend selection.

The compiled extension is used when present; the numpy fallback otherwise.
Set CTRLDIFFUSE_BACKEND=python (or =compiled) to force a choice. Both
backends are bit-identical by construction, so the switch only affects speed.
"""

import os

from . import _pyloops

_choice = os.environ.get("CTRLDIFFUSE_BACKEND", "auto").lower()

if _choice in ("auto", "compiled"):
    try:
        from . import _fastloops as _impl
    except ImportError:
        if _choice == "compiled":
            raise ImportError(
                "CTRLDIFFUSE_BACKEND=compiled but the extension is not built"
            )
        _impl = _pyloops
elif _choice == "python":
    _impl = _pyloops
else:
    raise ValueError(f"unknown CTRLDIFFUSE_BACKEND: {_choice!r}")

FAMILY_OU = _pyloops.FAMILY_OU
FAMILY_CONST = _pyloops.FAMILY_CONST

name = _impl.BACKEND_NAME
nearest_index_batch = _impl.nearest_index_batch
evolve_batch = _impl.evolve_batch
rollout_cost_batch = _impl.rollout_cost_batch
qlearn_diffusion_chunk = _impl.qlearn_diffusion_chunk
qlearn_mdp_chunk = _impl.qlearn_mdp_chunk


def is_compiled() -> bool:
    return name == "compiled"
