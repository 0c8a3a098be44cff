"""
Bootstrap output and lambda calibration results.
"""

from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.bounds import HypothesisSet, Method
from models.dataset import Dataset, ModelFit, Sidedness
from models.template import TemplateFamily, TemplateKind


class BootstrapSample(BaseModel):
    """
    B bootstrap t-statistic fields T^b (each L x m_pts).

    stat_fields is None in streaming mode; replicate b is then regenerated
    from its child seed, which yields the same values as the cached path.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    B: int = Field(gt=0)
    seed: int
    dof: int = Field(gt=0)
    sidedness: Sidedness = Sidedness.TWO_SIDED
    n_contrasts: int = Field(gt=0)
    n_points: int = Field(gt=0)
    stat_fields: Optional[np.ndarray] = None
    fit: Optional[ModelFit] = Field(None, exclude=True)
    dataset: Optional[Dataset] = Field(None, exclude=True)

    @model_validator(mode='after')
    def check_storage(self):
        if self.stat_fields is not None:
            expected = (self.B, self.n_contrasts, self.n_points)
            if self.stat_fields.shape != expected:
                raise ValueError(f"stat_fields shape {self.stat_fields.shape} != {expected}")
            if np.any(np.isnan(self.stat_fields)):
                raise ValueError("bootstrap fields contain NaN")
        elif self.fit is None or self.dataset is None:
            raise ValueError("streaming samples need the fit and dataset to regenerate replicates")
        return self

    @property
    def is_cached(self) -> bool:
        return self.stat_fields is not None

    @property
    def n_hypotheses(self) -> int:
        return self.n_contrasts * self.n_points


class CalibrationResult(BaseModel):
    """lambda* together with what produced it"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    lambda_star: float
    alpha: float
    B: int = 0
    method: Method
    surviving_set: Optional[HypothesisSet] = None
    rejection_set: Optional[HypothesisSet] = None
    f_samples: Optional[np.ndarray] = Field(None, exclude=True)
    iterations: int = 0
    # step-down emptied the working set; lambda* comes from the last nonempty iterate
    empty_survivors: bool = False

    @property
    def lambda_for_bounds(self) -> float:
        """lambda* clipped to the template domain; clipping down only loosens V-bar"""
        return min(max(self.lambda_star, 0.0), 1.0)

    def thresholds(self, family: TemplateFamily) -> np.ndarray:
        """Per-k thresholds t_k(lambda*)"""
        return family.thresholds(self.lambda_for_bounds)


class AnalysisOptions(BaseModel):
    """Knobs of the fit workflow; None means 'use the configured default'"""

    method: Method = Method.STEP_DOWN
    alpha: float = Field(0.1, gt=0, lt=1)
    bootstraps: Optional[int] = Field(None, gt=0)
    seed: Optional[int] = Field(None, ge=0)
    template: TemplateKind = TemplateKind.LINEAR
    template_size: Optional[int] = Field(None, gt=0, description="K, capped at m")
    one_sided: bool = False
    bh_q: float = Field(0.05, gt=0, lt=1)
    k_max: Optional[int] = Field(None, gt=0)
    max_iterations: int = Field(100, gt=0)
    threads: int = Field(1, gt=0)
    max_cached_cells: Optional[int] = Field(None, gt=0)
    select_p: Optional[float] = Field(None, ge=0, le=1)
    select_effect: Optional[float] = Field(None, ge=0)

    @model_validator(mode='after')
    def check_method(self):
        if self.method == Method.FIXED:
            raise ValueError("a fixed lambda is only available for precomputed p-values")
        if self.template != TemplateKind.LINEAR:
            raise ValueError("only the linear template can be chosen by name")
        return self

    @property
    def sidedness(self) -> Sidedness:
        return Sidedness.ONE_SIDED if self.one_sided else Sidedness.TWO_SIDED

    @property
    def wants_volcano(self) -> bool:
        return self.select_p is not None or self.select_effect is not None
