"""
Profile Endpoints

Presets, inline profiles and profile file uploads (JSON or TOML).
"""

from fastapi import APIRouter, File, HTTPException, UploadFile

from api.schemas import (CentringRow, ErrorResponse, PresetItem, PresetsResponse, ProfileRequest,
                         ProfileResponse)
from src.errors import DGFFError, RangeError
from src.parser import load_profile
from src.profile import PRESETS, StepProfile, effective_profile, expected_max, mibrw_centring

router = APIRouter(prefix="/api", tags=["profile"])

DEFAULT_N_LIST = [4, 6, 8, 10]


def describe_profile(p: StepProfile, n_list: list[int]) -> ProfileResponse:
    """
    Effective profile and centring table of a profile.

    Args:
        p: Normalized profile
        n_list: Grid exponents for the centring table

    Returns:
        ProfileResponse
    """
    eff = effective_profile(p)
    rows = []
    for n in n_list:
        try:
            rows.append(CentringRow(n=n, m_N=expected_max(p, n), M_star=mibrw_centring(p, n, n)))
        except RangeError:
            rows.append(CentringRow(n=n))
    return ProfileResponse(profile=p.to_dict(), effective=eff.to_dict(),
                           first_order=eff.first_order(), table=rows)


@router.get("/presets", response_model=PresetsResponse)
async def list_presets():
    """Named profiles available to every experiment."""
    items = []
    for name in PRESETS:
        p = StepProfile.preset(name)
        items.append(PresetItem(name=name, sigmas=list(p.sigmas), lambdas=list(p.lambdas)))
    return PresetsResponse(data=items)


@router.post(
    "/profile",
    response_model=ProfileResponse,
    responses={400: {"model": ErrorResponse}}
)
async def analyze_profile(request: ProfileRequest):
    """
    Normalize an inline profile and return its effective profile and m_N table.
    """
    try:
        p = load_profile({"sigmas": request.sigmas, "lambdas": request.lambdas}, request.strict)
        return describe_profile(p, request.n_list)
    except DGFFError as e:
        raise HTTPException(status_code=400, detail=str(e))


@router.post(
    "/profile/upload",
    response_model=ProfileResponse,
    responses={400: {"model": ErrorResponse}, 500: {"model": ErrorResponse}}
)
async def upload_profile(file: UploadFile = File(...)):
    """
    Upload a profile file (.json or .toml).

    Time Complexity: O(M) where M is the number of segments
    """
    if not file.filename:
        raise HTTPException(status_code=400, detail="No file provided")

    if not file.filename.endswith((".json", ".toml")):
        raise HTTPException(
            status_code=400,
            detail="Invalid file type. Only .json and .toml files are supported."
        )

    try:
        content = await file.read()
        p = load_profile(content)
        return describe_profile(p, DEFAULT_N_LIST)

    except HTTPException:
        raise
    except DGFFError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error processing file: {str(e)}")
