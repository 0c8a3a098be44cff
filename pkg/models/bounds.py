"""
Hypothesis sets and the post hoc bound reports computed over them.
"""

from bisect import bisect_left
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, computed_field, field_validator, model_validator


class Method(str, Enum):
    """How lambda was calibrated"""
    SINGLE_STEP = "single_step"
    STEP_DOWN = "step_down"
    SIMES = "simes"
    ARI = "ari"
    FWER_MINP = "fwer_minp"
    FIXED = "fixed"

    @property
    def is_bootstrap(self) -> bool:
        return self in (Method.SINGLE_STEP, Method.STEP_DOWN, Method.FWER_MINP)

    @classmethod
    def from_cli(cls, name: str) -> "Method":
        """Map CLI method names (bootstrap, bootstrap-stepdown, fwer, ...)"""
        aliases = {
            'bootstrap': cls.SINGLE_STEP,
            'bootstrap-stepdown': cls.STEP_DOWN,
            'fwer': cls.FWER_MINP,
        }
        key = name.strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key.replace('-', '_'))


class HypothesisSet(BaseModel):
    """Sorted hypothesis ids; id = l * m_pts + v"""

    indices: List[int] = Field(default_factory=list)
    label: Optional[str] = None

    @field_validator('indices', mode='before')
    @classmethod
    def sort_indices(cls, v):
        ids = [int(i) for i in v]
        if len(set(ids)) != len(ids):
            raise ValueError("hypothesis ids must not repeat")
        if any(i < 0 for i in ids):
            raise ValueError("hypothesis ids must be non-negative")
        return sorted(ids)

    @classmethod
    def full(cls, m: int, label: Optional[str] = "all") -> "HypothesisSet":
        return cls(indices=range(m), label=label)

    def check_within(self, m: int) -> "HypothesisSet":
        if self.indices and self.indices[-1] >= m:
            raise ValueError(
                f"set '{self.label}' references hypothesis {self.indices[-1]} but m={m}"
            )
        return self

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, item: int) -> bool:
        position = bisect_left(self.indices, item)
        return position < len(self.indices) and self.indices[position] == item


class BoundReport(BaseModel):
    """Simultaneous bound on false positives within one set"""

    label: Optional[str] = None
    set_size: int = Field(ge=0)
    false_positive_bound: int = Field(ge=0, description="V-bar(H)")
    lambda_used: float
    method: Method

    @model_validator(mode='after')
    def check_bound(self):
        if self.false_positive_bound > self.set_size:
            raise ValueError("bound cannot exceed the set size")
        return self

    @computed_field
    @property
    def tp_lower(self) -> int:
        """Lower bound on true positives |H| - V-bar"""
        return self.set_size - self.false_positive_bound

    @computed_field
    @property
    def tdp_lower(self) -> float:
        if self.set_size == 0:
            return 0.0
        return self.tp_lower / self.set_size

    @computed_field
    @property
    def fdp_upper(self) -> float:
        if self.set_size == 0:
            return 0.0
        return self.false_positive_bound / self.set_size

    def to_summary(self) -> dict:
        """Row of the JSON report schema"""
        return {
            'label': self.label,
            'size': self.set_size,
            'v_bar': self.false_positive_bound,
            'tp_lower': self.tp_lower,
            'fdp_upper': self.fdp_upper,
        }


class CurvePoint(BaseModel):
    """One row of a top-k confidence curve"""
    k: int = Field(ge=1)
    v_bar: int = Field(ge=0)
    tp_lower: int = Field(ge=0)
    fdp_upper: float = Field(ge=0, le=1)
