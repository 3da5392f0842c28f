"""Training configuration and loss selection."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

from .errors import ConfigurationError

DEFAULT_GLOBAL_BINS = 255


class LossKind(str, enum.Enum):
    BINARY_LOGISTIC = "logistic"
    SQUARED_ERROR = "squared"

    @property
    def is_classification(self) -> bool:
        return self is LossKind.BINARY_LOGISTIC

    @classmethod
    def parse(cls, value: "str | LossKind") -> "LossKind":
        if isinstance(value, LossKind):
            return value
        aliases = {
            "logistic": cls.BINARY_LOGISTIC,
            "binary:logistic": cls.BINARY_LOGISTIC,
            "squared": cls.SQUARED_ERROR,
            "reg:squarederror": cls.SQUARED_ERROR,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ConfigurationError(f"unknown loss {value!r}") from None


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters for one federated training run.

    ``epsilon_global`` is the aggregator's error budget; ``1 / epsilon_global``
    is roughly the global bin count. Leaf weights are stored unscaled and the
    ensemble applies ``learning_rate`` at prediction time.
    """

    epsilon_global: float = 1.0 / DEFAULT_GLOBAL_BINS
    max_rounds: int = 100
    reg_lambda: float = 1.0
    gamma: float = 0.0
    learning_rate: float = 0.3
    max_depth: int = 6
    min_gain: float = 0.0
    loss: LossKind = LossKind.BINARY_LOGISTIC
    quantize_predict: bool = True
    early_stopping: bool = False
    early_stopping_tol: float = 1e-6
    early_stopping_patience: int = 5

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind.parse(self.loss))
        if not 0.0 < self.epsilon_global <= 1.0:
            raise ConfigurationError("epsilon_global must lie in (0, 1]")
        if self.max_rounds < 0:
            raise ConfigurationError("max_rounds must be >= 0")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise ConfigurationError("lambda and gamma must be >= 0")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigurationError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise ConfigurationError("max_depth must be >= 1")
        if self.early_stopping_patience < 1:
            raise ConfigurationError("early_stopping_patience must be >= 1")

    @classmethod
    def from_bins(cls, bins: int, **kwargs) -> "TrainingConfig":
        if bins < 1:
            raise ConfigurationError("bins must be >= 1")
        return cls(epsilon_global=1.0 / bins, **kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.value
        return d
