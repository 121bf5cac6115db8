"""
Training/evaluation records.
"""
from dataclasses import asdict, dataclass, field
from typing import List, Optional

METRIC_COLUMNS = ["step", "loss", "ess", "logz_lb", "logz_iw", "sinkhorn", "diverged", "seconds"]


@dataclass
class EvalRecord:
    """One periodic evaluation of the sampler."""
    step: int
    loss: float
    ess: float
    logz_lb: float
    logz_iw: float
    sinkhorn: Optional[float] = None
    diverged: bool = False
    seconds: float = 0.0

    def to_dict(self):
        return {
            "step": self.step,
            "loss": self.loss,
            "ess": self.ess,
            "logz_lb": self.logz_lb,
            "logz_iw": self.logz_iw,
            "sinkhorn": self.sinkhorn,
            "diverged": self.diverged,
            "seconds": self.seconds,
        }

    @classmethod
    def from_dict(cls, row: dict) -> "EvalRecord":
        return cls(**{k: row[k] for k in METRIC_COLUMNS})


@dataclass
class TrainingEvent:
    """Diverged batch, skipped update or bound violation seen during training."""
    step: int
    kind: str
    detail: str = ""

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingResult:
    params: object
    records: List[EvalRecord]
    best: Optional[EvalRecord]
    events: List[TrainingEvent] = field(default_factory=list)
    final: Optional[EvalRecord] = None
    seconds: float = 0.0
