from fastapi import APIRouter, HTTPException, Query

from .. import analytics
from ..errors import HmrSimError

router = APIRouter(prefix="/models", tags=["models"])


def _constants(rapid_cycles: int, tcls_sw_cycles: int) -> analytics.RecoveryConstants:
    return analytics.RecoveryConstants(rapid_cycles, tcls_sw_cycles)


@router.get("/landmarks")
def get_landmarks(
    workload: str = Query("matmul", pattern="^(matmul|cfft)$"),
    self_consistent: bool = False,
    rapid_cycles: int = Query(24, ge=1),
    tcls_sw_cycles: int = Query(363, ge=1),
):
    try:
        marks = analytics.landmarks(workload, _constants(rapid_cycles, tcls_sw_cycles), self_consistent=self_consistent)
    except HmrSimError as exc:
        raise HTTPException(400, str(exc))
    return marks.as_dict()


@router.get("/curves")
def get_curves(
    workload: str = Query("matmul", pattern="^(matmul|cfft)$"),
    rate_max: float = Query(1e9, gt=1),
    points: int = Query(61, ge=2, le=1000),
    self_consistent: bool = False,
):
    try:
        rows = analytics.emit_curves(
            analytics.WORKLOADS[workload],
            rates=analytics.rate_grid(rate_max, points),
            self_consistent=self_consistent,
        )
    except HmrSimError as exc:
        raise HTTPException(400, str(exc))
    return {"workload": workload, "columns": analytics.CURVE_COLUMNS, "rows": rows}
