"""
Data model for the point-wise linear model: inputs, fitted quantities and
statistic fields over the hypothesis grid (contrast l, point v).
"""

from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from utils.errors import DimensionMismatchError


class StatKind(str, Enum):
    """What a StatField holds"""
    T_STATISTIC = "t_statistic"
    P_VALUE_TWO_SIDED = "p_value_two_sided"
    P_VALUE_ONE_SIDED = "p_value_one_sided"


class Sidedness(str, Enum):
    TWO_SIDED = "two_sided"
    ONE_SIDED = "one_sided"


def _as_matrix(value, name: str, vector_as_row: bool = False) -> np.ndarray:
    array = np.asarray(value, dtype=float)
    if array.ndim == 1:
        array = array.reshape(1, -1) if vector_as_row else array.reshape(-1, 1)
    if array.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got {array.ndim} dimensions")
    return array


class Dataset(BaseModel):
    """Design (n x p), response (n x m_pts) and contrasts (L x p)"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    design: np.ndarray
    response: np.ndarray
    contrasts: np.ndarray
    point_labels: Optional[List[str]] = None

    @field_validator('design', 'response', 'contrasts', mode='before')
    @classmethod
    def coerce_matrix(cls, v, info):
        # a bare contrast vector is a single row
        return _as_matrix(v, info.field_name, vector_as_row=info.field_name == 'contrasts')

    @model_validator(mode='after')
    def check_shapes(self):
        n, p = self.design.shape
        if self.response.shape[0] != n:
            raise DimensionMismatchError(
                f"response has {self.response.shape[0]} rows but design has {n}",
                file="response"
            )
        if self.contrasts.shape[1] != p:
            raise DimensionMismatchError(
                f"contrasts have {self.contrasts.shape[1]} columns but design has {p}",
                file="contrasts"
            )
        if n < 2:
            raise ValueError("at least two subjects (design rows) are required")
        for name in ('design', 'response', 'contrasts'):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")
        if np.any(np.all(self.contrasts == 0, axis=1)):
            raise ValueError("contrast rows must not be all zero")
        if self.point_labels is not None and len(self.point_labels) != self.n_points:
            raise DimensionMismatchError(
                f"{len(self.point_labels)} point labels for {self.n_points} points",
                file="response"
            )
        return self

    @property
    def n_subjects(self) -> int:
        return self.design.shape[0]

    @property
    def n_points(self) -> int:
        return self.response.shape[1]

    @property
    def n_contrasts(self) -> int:
        return self.contrasts.shape[0]

    @property
    def n_hypotheses(self) -> int:
        """m = L * m_pts"""
        return self.n_contrasts * self.n_points


class ModelFit(BaseModel):
    """Least-squares fit shared by every point"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    beta_hat: np.ndarray
    residuals: np.ndarray
    sigma_hat: np.ndarray
    rank: int = Field(gt=0)
    gram_inverse: np.ndarray
    # p x n map from responses to coefficients, reused by bootstrap refits
    solver: np.ndarray

    @property
    def dof(self) -> int:
        return self.residuals.shape[0] - self.rank


class StatField(BaseModel):
    """L x m_pts field of t-statistics or p-values"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    dof: int = Field(gt=0)
    kind: StatKind = StatKind.T_STATISTIC

    @field_validator('values', mode='before')
    @classmethod
    def coerce_values(cls, v):
        return _as_matrix(v, 'values', vector_as_row=True)

    @model_validator(mode='after')
    def check_p_range(self):
        if self.is_p_values:
            if np.any(np.isnan(self.values)) or np.any((self.values < 0) | (self.values > 1)):
                raise ValueError("p-values must lie in [0, 1]")
        return self

    @property
    def is_p_values(self) -> bool:
        return self.kind != StatKind.T_STATISTIC

    @property
    def n_hypotheses(self) -> int:
        return self.values.size

    def flat(self) -> np.ndarray:
        """Values indexed by hypothesis id l * m_pts + v"""
        return self.values.ravel()

    @classmethod
    def from_p_values(cls, p_values, dof: int = 1, one_sided: bool = False) -> "StatField":
        """Wrap externally computed p-values (one row per contrast)"""
        kind = StatKind.P_VALUE_ONE_SIDED if one_sided else StatKind.P_VALUE_TWO_SIDED
        return cls(values=p_values, dof=dof, kind=kind)
