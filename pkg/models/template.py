"""
Template families (t_k)_{1<=k<=K}: strictly increasing threshold functions
on [0, 1] with t_k(0) = 0, defining the reference rejection sets
R_k(lambda) = {p <= t_k(lambda)}.
"""

import math
from enum import Enum
from typing import Callable, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import bisect

# returned by inverse_threshold when p lies above t_k(1) and a lambda in [0, 1] is required
ABOVE_RANGE = math.inf

_CHECK_GRID = np.linspace(0.0, 1.0, 11)


def _identity(x: float) -> float:
    return x


class TemplateKind(str, Enum):
    LINEAR = "linear"
    CUSTOM = "custom"


class TemplateFamily(BaseModel):
    """Size-K template family over m hypotheses"""

    model_config = ConfigDict(frozen=True)

    size: int = Field(gt=0, description="K")
    total_hypotheses: int = Field(gt=0, description="m = L * m_pts")
    kind: TemplateKind = TemplateKind.LINEAR
    functions: Optional[List[Callable[[float], float]]] = Field(None, exclude=True)
    inverses: Optional[List[Callable[[float], float]]] = Field(None, exclude=True)

    @model_validator(mode='after')
    def check_family(self):
        if self.size > self.total_hypotheses:
            raise ValueError(f"K={self.size} exceeds m={self.total_hypotheses}")
        if self.kind == TemplateKind.CUSTOM:
            if not self.functions or len(self.functions) != self.size:
                raise ValueError("custom templates need exactly K threshold functions")
            if self.inverses is not None and len(self.inverses) != self.size:
                raise ValueError("custom templates need exactly K inverse functions")
            for k, t_k in enumerate(self.functions, start=1):
                values = np.array([t_k(float(x)) for x in _CHECK_GRID])
                if values[0] != 0:
                    raise ValueError(f"t_{k}(0) must be 0")
                if np.any(np.diff(values) <= 0):
                    raise ValueError(f"t_{k} must be strictly increasing on [0, 1]")
        return self

    @classmethod
    def linear(cls, total_hypotheses: int, size: Optional[int] = None) -> "TemplateFamily":
        """t_k(lambda) = lambda * k / m; K defaults to m and is capped at m"""
        size = total_hypotheses if size is None else min(size, total_hypotheses)
        return cls(size=size, total_hypotheses=total_hypotheses)

    @classmethod
    def by_name(
            cls,
            name: Union[TemplateKind, str],
            total_hypotheses: int,
            size: Optional[int] = None
    ) -> "TemplateFamily":
        """Family selected by name from the command line or settings"""
        kind = TemplateKind(name)
        if kind != TemplateKind.LINEAR:
            raise ValueError(f"template '{kind.value}' needs threshold functions and cannot be selected by name")
        return cls.linear(total_hypotheses, size)

    @classmethod
    def custom(
            cls,
            total_hypotheses: int,
            functions: List[Callable[[float], float]],
            inverses: Optional[List[Callable[[float], float]]] = None
    ) -> "TemplateFamily":
        return cls(
            size=len(functions),
            total_hypotheses=total_hypotheses,
            kind=TemplateKind.CUSTOM,
            functions=list(functions),
            inverses=list(inverses) if inverses is not None else None
        )

    @classmethod
    def identity(cls, total_hypotheses: int) -> "TemplateFamily":
        """K = 1, t_1(lambda) = lambda; R_1 is then the min-p FWER rejection set"""
        return cls.custom(total_hypotheses, [_identity], [_identity])

    def _check_k(self, k: int) -> None:
        if not 1 <= k <= self.size:
            raise ValueError(f"k must lie in [1, {self.size}], got {k}")

    def threshold(self, k: int, lam: float) -> float:
        """t_k(lambda)"""
        self._check_k(k)
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {lam}")
        if self.kind == TemplateKind.LINEAR:
            return lam * k / self.total_hypotheses
        return float(self.functions[k - 1](lam))

    def inverse_threshold(self, k: int, p: float, strict: bool = False) -> float:
        """
        t_k^{-1}(p).

        The linear kind returns p * m / k even above t_k(1) = k / m; only the
        minimum over k is ever compared against a lambda in [0, 1]. With
        strict=True values outside [0, 1] become ABOVE_RANGE. Custom kinds
        return ABOVE_RANGE above t_k(1).
        """
        self._check_k(k)
        if self.kind == TemplateKind.LINEAR:
            value = p * self.total_hypotheses / k
            return ABOVE_RANGE if strict and value > 1.0 else value
        t_k = self.functions[k - 1]
        if p > t_k(1.0):
            return ABOVE_RANGE
        if p <= 0.0:
            return 0.0
        if self.inverses is not None:
            return float(self.inverses[k - 1](p))
        return float(bisect(lambda lam: t_k(lam) - p, 0.0, 1.0, xtol=1e-12))

    def thresholds(self, lam: float) -> np.ndarray:
        """(t_1(lambda), ..., t_K(lambda))"""
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {lam}")
        if self.kind == TemplateKind.LINEAR:
            return lam * np.arange(1, self.size + 1) / self.total_hypotheses
        return np.array([t_k(lam) for t_k in self.functions], dtype=float)

    def inverse_thresholds(self, sorted_p: np.ndarray) -> np.ndarray:
        """
        Apply t_k^{-1} to the k-th column of an array of ascending order
        statistics (last axis indexes k = 1, 2, ...; at most K columns).
        """
        sorted_p = np.asarray(sorted_p, dtype=float)
        n_k = sorted_p.shape[-1]
        if n_k > self.size:
            raise ValueError(f"got {n_k} order statistics for a family of size {self.size}")
        if self.kind == TemplateKind.LINEAR:
            return sorted_p * self.total_hypotheses / np.arange(1, n_k + 1)
        out = np.empty_like(sorted_p)
        for k in range(1, n_k + 1):
            column = sorted_p[..., k - 1]
            inverse = np.vectorize(lambda p, k=k: self.inverse_threshold(k, p), otypes=[float])
            out[..., k - 1] = inverse(column)
        return out
