"""Declarative model configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from ..errors import ConfigError

INDIVIDUAL_KINDS = (
    "avgpool",
    "maxpool",
    "tc",
    "pdc",
    "dcc",
    "lstm",
    "gru",
    "naive_sa",
    "nonlinear_sa",
    "nonlocal",
    "transformer",
)
ALL_KINDS = INDIVIDUAL_KINDS + ("hybrid",)

# stages that map a window to a sequence of the same length
SEQUENCE_STAGES = ("lstm", "gru", "dcc", "tc", "pdc")
# stages that reduce a window to one vector
AGGREGATOR_STAGES = ("avgpool", "maxpool", "transformer", "naive_sa", "nonlinear_sa", "nonlocal", "lstm", "gru")

HYBRID_PRESETS = {
    "m1": ("lstm", "transformer"),
    "m2": ("dcc", "transformer"),
    "m3": ("lstm", "dcc", "transformer"),
    "m4": ("dcc", "lstm", "transformer"),
    "m5": ("dcc", "lstm"),
    "m6": ("lstm", "dcc", "avgpool"),
}

_ALIASES = {
    "avg": "avgpool",
    "avgpool": "avgpool",
    "max": "maxpool",
    "maxpool": "maxpool",
    "tc": "tc",
    "pdc": "pdc",
    "dcc": "dcc",
    "lstm": "lstm",
    "gru": "gru",
    "naivesa": "naive_sa",
    "nonlinearsa": "nonlinear_sa",
    "nonlocal": "nonlocal",
    "transformer": "transformer",
    "transformerq": "transformer",
    "hybrid": "hybrid",
}


def canonical_kind(name: str) -> str:
    """Normalise a user-facing operator name (``"Naive-SA"``, ``"TransformerQ"``...)."""
    key = name.lower().replace("-", "").replace("_", "").replace(" ", "")
    if key in HYBRID_PRESETS:
        return key
    try:
        return _ALIASES[key]
    except KeyError:
        valid = ", ".join(INDIVIDUAL_KINDS + tuple(HYBRID_PRESETS))
        raise ConfigError(f"unknown model kind {name!r}; valid kinds: {valid}") from None


def _scaled(base: int, mult: float) -> int:
    return max(1, int(round(base * mult)))


@dataclass(frozen=True)
class ModelSpec:
    """One temporal operator (or hybrid chain) plus every hyperparameter it reads.

    Width-like fields (``hidden_size``, ``attn_hidden``, ``dcc_widths``) hold
    full-scale values; the effective widths are those times ``width_mult``.
    """

    kind: str
    feature_dim: int
    num_classes: int
    seq_len: int = 4
    kernel_size: int = 2
    dilation_rates: tuple = (1, 2, 4)
    tc_dilation: int = 1
    hidden_size: int = 4096
    num_layers: int = 1
    rnn_output: str = "last"
    attn_hidden: int = 512
    proj_dim: int | None = None
    dcc_widths: tuple | None = None
    dcc_dropout: float = 0.1
    hybrid_chain: tuple = field(default_factory=tuple)
    width_mult: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "dilation_rates", tuple(int(r) for r in self.dilation_rates))
        object.__setattr__(self, "hybrid_chain", tuple(self.hybrid_chain))
        if self.dcc_widths is not None:
            object.__setattr__(self, "dcc_widths", tuple(int(w) for w in self.dcc_widths))
        self.validate()

    @classmethod
    def named(cls, name: str, **kwargs) -> "ModelSpec":
        """Build a spec from an operator name or a hybrid preset ``m1``..``m6``."""
        kind = canonical_kind(name)
        if kind in HYBRID_PRESETS:
            return cls(kind="hybrid", hybrid_chain=HYBRID_PRESETS[kind], **kwargs)
        return cls(kind=kind, **kwargs)

    def validate(self):
        if self.kind not in ALL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        for name in ("feature_dim", "num_classes", "seq_len", "kernel_size", "hidden_size", "num_layers",
                     "attn_hidden", "tc_dilation"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.proj_dim is not None and self.proj_dim < 1:
            raise ConfigError("proj_dim must be positive")
        if not self.dilation_rates or min(self.dilation_rates) < 1:
            raise ConfigError(f"dilation rates must be positive, got {self.dilation_rates}")
        if self.rnn_output not in ("last", "average"):
            raise ConfigError(f"rnn_output must be 'last' or 'average', got {self.rnn_output!r}")
        if not 0.0 <= self.dcc_dropout < 1.0:
            raise ConfigError("dcc_dropout must lie in [0, 1)")
        if self.width_mult <= 0:
            raise ConfigError("width_mult must be positive")
        if self.kind == "hybrid":
            self._validate_chain()
        if "dcc" in self.stage_kinds():
            expected = tuple(2**i for i in range(len(self.dilation_rates)))
            if self.dilation_rates != expected:
                raise ConfigError(f"DCC rates must double per level {expected}, got {self.dilation_rates}")
            if self.dcc_widths is not None and len(self.dcc_widths) != len(self.dilation_rates):
                raise ConfigError("dcc_widths needs one entry per dilation rate")

    def _validate_chain(self):
        chain = self.hybrid_chain
        if len(chain) < 2:
            raise ConfigError("a hybrid chain needs at least one sequence stage and one aggregator")
        for stage in chain[:-1]:
            if stage not in SEQUENCE_STAGES:
                raise ConfigError(f"stage {stage!r} cannot feed a later stage; sequence stages: {SEQUENCE_STAGES}")
        if chain[-1] not in AGGREGATOR_STAGES:
            raise ConfigError(
                f"hybrid chain must end with an aggregator {AGGREGATOR_STAGES}, got sequence stage {chain[-1]!r}"
            )

    def stage_kinds(self) -> tuple:
        return self.hybrid_chain if self.kind == "hybrid" else (self.kind,)

    # effective sizes

    @property
    def effective_hidden(self) -> int:
        return _scaled(self.hidden_size, self.width_mult)

    @property
    def effective_attn_hidden(self) -> int:
        return _scaled(self.attn_hidden, self.width_mult)

    @property
    def effective_dcc_widths(self) -> tuple:
        base = self.dcc_widths
        if base is None:
            base = (4096,) + (2048,) * (len(self.dilation_rates) - 1)
        return tuple(_scaled(w, self.width_mult) for w in base)

    def projection_dim(self, input_dim: int) -> int:
        return self.proj_dim if self.proj_dim is not None else max(1, input_dim // 2)

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["dilation_rates"] = list(self.dilation_rates)
        out["hybrid_chain"] = list(self.hybrid_chain)
        out["dcc_widths"] = None if self.dcc_widths is None else list(self.dcc_widths)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        return cls(**data)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
