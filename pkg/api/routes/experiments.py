"""
Experiment Endpoints

Runs any CLI subcommand from a JSON config and keeps recent results in memory.
"""

import uuid
from typing import Any

from fastapi import APIRouter, Body, HTTPException
from pydantic import ValidationError

from api.schemas import ErrorResponse, RunResponse
from src.config import SUBCOMMANDS, ExperimentConfig
from src.errors import DGFFError
from src.runner import ExperimentRunner

router = APIRouter(prefix="/api", tags=["experiments"])

# In-memory run storage
runs: dict[str, RunResponse] = {}

MAX_RUNS = 100

# Keys that would make the API touch the filesystem
FORBIDDEN_KEYS = {"output", "checkpoint", "command"}


@router.post(
    "/experiments/{command}",
    response_model=RunResponse,
    responses={400: {"model": ErrorResponse}, 404: {"model": ErrorResponse},
               500: {"model": ErrorResponse}}
)
def run_experiment(command: str, body: dict[str, Any] = Body(default_factory=dict)):
    """
    Validate a config for `command`, run it and store the result.

    Returns the run with its id; the body takes the same keys as a CLI config file.
    """
    if command not in SUBCOMMANDS:
        raise HTTPException(status_code=404, detail=f"Unknown experiment '{command}'")
    rejected = FORBIDDEN_KEYS & body.keys()
    if rejected:
        raise HTTPException(status_code=400, detail=f"Keys not accepted here: {sorted(rejected)}")

    try:
        config = ExperimentConfig(command=command, **body)
        result = ExperimentRunner(config).run()
        table = None
        if result.table is not None:
            table = result.table.astype(object).where(result.table.notna(), None).to_dict(orient="records")
        run = RunResponse(run_id=str(uuid.uuid4()), command=command, passed=result.passed,
                          exit_code=result.exit_code, payload=result.payload, table=table)
        runs[run.run_id] = run

        # Keep at most MAX_RUNS, oldest first out
        if len(runs) > MAX_RUNS:
            del runs[next(iter(runs))]

        from api.stats import StatsService
        StatsService.increment_count()

        return run

    except HTTPException:
        raise
    except (ValidationError, DGFFError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error running experiment: {str(e)}")


def get_run(run_id: str) -> RunResponse:
    """
    Get a stored run.

    Raises:
        HTTPException: If the run is unknown
    """
    if run_id not in runs:
        raise HTTPException(status_code=404, detail="Run not found.")
    return runs[run_id]


@router.get("/runs/{run_id}", response_model=RunResponse, responses={404: {"model": ErrorResponse}})
async def read_run(run_id: str):
    return get_run(run_id)


@router.delete("/runs/{run_id}", responses={404: {"model": ErrorResponse}})
async def delete_run(run_id: str):
    get_run(run_id)
    del runs[run_id]
    return {"deleted": run_id}
