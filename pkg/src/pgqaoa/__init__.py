"""Policy-gradient optimization of QAOA bang-bang protocols."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

from .models import ControlModel, Protocol, batch_fidelity, build_model, protocol_fidelity  # noqa: E402
from .noise import RewardChannel  # noqa: E402
from .pgtrain import TrainConfig, TrainRecord, pretrain_then_correlate, train, train_robust  # noqa: E402
from .policy import CorrelatedGaussianPolicy, DiagonalGaussianPolicy, initial_diagonal_policy  # noqa: E402

__all__ = [
    "ControlModel", "Protocol", "batch_fidelity", "build_model", "protocol_fidelity",
    "RewardChannel", "TrainConfig", "TrainRecord", "pretrain_then_correlate", "train", "train_robust",
    "CorrelatedGaussianPolicy", "DiagonalGaussianPolicy", "initial_diagonal_policy",
]
