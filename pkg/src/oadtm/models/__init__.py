from .network import TemporalModel
from .params import ParamStore, init_params
from .spec import HYBRID_PRESETS, INDIVIDUAL_KINDS, ModelSpec, canonical_kind

__all__ = [
    "HYBRID_PRESETS",
    "INDIVIDUAL_KINDS",
    "ModelSpec",
    "ParamStore",
    "TemporalModel",
    "canonical_kind",
    "init_params",
]
