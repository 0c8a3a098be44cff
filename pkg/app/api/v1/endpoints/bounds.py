"""
Post hoc bound endpoints: the fit workflow on uploaded CSVs and bounds
from precomputed p-values.
"""

from typing import Any, Dict, List, Optional
import logging
from datetime import datetime

from fastapi import APIRouter, File, Form, HTTPException, UploadFile, status
from pydantic import BaseModel, Field

from app.config import CLI_METHODS, TEMPLATES, settings
from models.bounds import HypothesisSet, Method
from models.calibration import AnalysisOptions
from models.dataset import StatField
from services.analysis import AnalysisService
from utils import csv_io

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/bounds", tags=["Post hoc bounds"])

service = AnalysisService()


class BoundsResponse:
    """Standard response envelope"""

    @staticmethod
    def success(data: Dict[str, Any], metadata: Dict[str, Any] = None) -> Dict:
        return {
            "success": True,
            "data": data,
            "metadata": metadata or {},
            "timestamp": datetime.utcnow().isoformat()
        }


class PValueRequest(BaseModel):
    """Bounds from p-values computed elsewhere"""
    p_values: List[float] = Field(..., min_length=1)
    sets: Dict[str, List[int]] = Field(default_factory=dict)
    method: str = "simes"
    alpha: float = Field(0.1, gt=0, lt=1)
    lam: Optional[float] = Field(None, ge=0, le=1, alias="lambda")
    bh_q: float = Field(0.05, gt=0, lt=1)
    k_max: Optional[int] = Field(None, gt=0)
    template_size: Optional[int] = Field(None, gt=0)

    model_config = {"populate_by_name": True}


async def validate_file(file: UploadFile) -> bytes:
    """
    Validate an uploaded CSV and return its content.

    Raises:
        HTTPException: wrong content type, too large or empty
    """
    if file.content_type not in settings.allowed_file_types:
        raise HTTPException(
            status_code=status.HTTP_415_UNSUPPORTED_MEDIA_TYPE,
            detail=f"File type '{file.content_type}' not supported. "
                   f"Allowed types: {', '.join(settings.allowed_file_types)}"
        )

    content = await file.read()

    if len(content) > settings.max_file_size:
        raise HTTPException(
            status_code=status.HTTP_413_REQUEST_ENTITY_TOO_LARGE,
            detail=f"File too large. Maximum size: {settings.max_file_size_mb:.1f}MB"
        )

    if len(content) == 0:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=f"Empty file uploaded: {file.filename}"
        )

    return content


@router.post(
    "/analyze",
    response_model=Dict[str, Any],
    summary="Calibrate and bound",
    description="Fit the linear model on uploaded CSVs, calibrate lambda and bound the BH set"
)
async def analyze(
        design: UploadFile = File(..., description="n x p design matrix CSV"),
        response: UploadFile = File(..., description="n x m_pts response CSV"),
        contrasts: UploadFile = File(..., description="L x p contrast matrix CSV"),
        method: str = Form(settings.method),
        alpha: float = Form(settings.alpha),
        bootstraps: Optional[int] = Form(None),
        seed: Optional[int] = Form(None),
        bh_q: float = Form(settings.bh_q),
        k_max: Optional[int] = Form(None),
        one_sided: bool = Form(False),
        transpose: bool = Form(False)
) -> Dict[str, Any]:
    """
    Same report as the fit command. Domain errors are turned into 4xx
    responses by the application's exception handlers.
    """
    if method not in CLI_METHODS:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=f"Unknown method '{method}'. Choose one of: {', '.join(CLI_METHODS)}"
        )

    matrices = []
    for upload in (design, response, contrasts):
        content = await validate_file(upload)
        matrices.append(csv_io.matrix_from_bytes(content, upload.filename or "upload"))

    dataset = csv_io.build_dataset(
        *matrices,
        sources=tuple(u.filename or name for u, name in (
            (design, "design"), (response, "response"), (contrasts, "contrasts")
        )),
        transpose=transpose
    )
    options = AnalysisOptions(
        method=Method.from_cli(method),
        alpha=alpha,
        bootstraps=bootstraps,
        seed=seed,
        template=settings.template,
        one_sided=one_sided,
        bh_q=bh_q,
        k_max=k_max,
        max_iterations=settings.max_iterations,
        threads=settings.threads
    )

    logger.info(
        f"Analyzing upload: n={dataset.n_subjects}, m={dataset.n_hypotheses}, method={method}"
    )
    report = await service.analyze_async(dataset, options)
    return BoundsResponse.success(report, {
        "files": [u.filename for u in (design, response, contrasts)],
        "n_subjects": dataset.n_subjects,
        "n_hypotheses": dataset.n_hypotheses
    })


@router.post(
    "/pvalues",
    response_model=Dict[str, Any],
    summary="Bound precomputed p-values",
    description="Simes, ARI or fixed-lambda bounds for named index sets"
)
async def bound_p_values(request: PValueRequest) -> Dict[str, Any]:
    p_field = StatField.from_p_values(request.p_values)
    subsets = [HypothesisSet(indices=ids, label=label) for label, ids in request.sets.items()]
    report = await service.bound_p_values_async(
        p_field,
        subsets or None,
        method=Method.from_cli(request.method),
        alpha=request.alpha,
        lam=request.lam,
        bh_q=request.bh_q,
        k_max=request.k_max,
        template_size=request.template_size
    )
    return BoundsResponse.success(report)


@router.get(
    "/methods",
    response_model=Dict[str, Any],
    summary="Supported methods and defaults"
)
async def get_methods() -> Dict[str, Any]:
    return {
        "methods": list(CLI_METHODS),
        "p_value_methods": ["simes", "ari"],
        "templates": list(TEMPLATES),
        "defaults": {
            "method": settings.method,
            "alpha": settings.alpha,
            "bootstraps": settings.bootstraps,
            "bh_q": settings.bh_q
        },
        "max_file_size_mb": settings.max_file_size_mb
    }
