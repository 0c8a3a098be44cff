"""
Monte-Carlo configuration and report models for the JER / power experiments.
"""

import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, computed_field, field_validator

from models.bounds import Method


class RChoice(str, Enum):
    """Rejection set whose bound feeds the power metric"""
    FULL = "full"
    BH = "bh"
    P05 = "p05"


class GrfConfig(BaseModel):
    """Smoothed stationary Gaussian noise on a 2-D lattice"""
    dims: Tuple[int, int] = (25, 25)
    fwhm: float = Field(0.0, ge=0, description="Kernel FWHM in pixels")
    n_fields: int = Field(1, gt=0)
    seed: int = 0

    @field_validator('dims')
    @classmethod
    def check_dims(cls, v):
        if min(v) < 1:
            raise ValueError("each lattice dimension must be at least 1")
        return v

    @property
    def n_points(self) -> int:
        return self.dims[0] * self.dims[1]

    @property
    def kernel_sigma(self) -> float:
        """sigma = FWHM / (2 sqrt(2 ln 2))"""
        return self.fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))


class ScenarioConfig(BaseModel):
    """Three-group / two-contrast experiment"""
    grf: GrfConfig = Field(default_factory=GrfConfig)
    n_subjects: int = 50
    pi0: float = Field(1.0, ge=0, le=1)
    alpha: float = Field(0.1, gt=0, lt=1)
    reps: int = Field(500, gt=0)
    bootstraps: int = Field(100, gt=0)
    methods: List[Method] = Field(default_factory=lambda: [Method.SIMES])
    bh_q: float = Field(0.05, gt=0, lt=1)
    max_iterations: int = Field(100, gt=0)
    seed: int = 0

    @property
    def n_hypotheses(self) -> int:
        return 2 * self.grf.n_points

    @property
    def n_nulls(self) -> int:
        # round() is round-half-to-even
        return int(round(self.pi0 * self.n_hypotheses))


class RepRecord(BaseModel):
    """One method in one repetition; a row of the per-rep CSV"""
    method: Method
    rep: int
    violated: bool
    lambda_used: float = Field(ge=0, le=1)
    power_full: Optional[float] = None
    power_bh: Optional[float] = None
    power_p05: Optional[float] = None
    tp_lower_full: int = 0
    tp_lower_bh: int = 0
    tp_lower_p05: int = 0

    def power_for(self, choice: RChoice) -> Optional[float]:
        return getattr(self, f"power_{choice.value}")

    def tp_lower_for(self, choice: RChoice) -> int:
        return getattr(self, f"tp_lower_{choice.value}")


class MethodSummary(BaseModel):
    """Aggregate over repetitions for one method"""
    method: Method
    reps_used: int
    violations: int
    power: Dict[RChoice, Optional[float]]
    mean_tp_lower: Dict[RChoice, float]

    @computed_field
    @property
    def empirical_jer(self) -> float:
        return self.violations / self.reps_used if self.reps_used else 0.0

    @computed_field
    @property
    def jer_se(self) -> float:
        """Binomial standard error"""
        if not self.reps_used:
            return 0.0
        p = self.empirical_jer
        return math.sqrt(p * (1.0 - p) / self.reps_used)

    @computed_field
    @property
    def jer_band(self) -> Tuple[float, float]:
        """95% normal-approximation band for the empirical JER"""
        half = 1.96 * self.jer_se
        return (max(0.0, self.empirical_jer - half), min(1.0, self.empirical_jer + half))


class SimReport(BaseModel):
    config: ScenarioConfig
    methods: Dict[Method, MethodSummary]
