"""
DGFF Experiments API

FastAPI service exposing the profile tools and every experiment subcommand.
"""

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from api.routes import experiments, profile
from api.schemas import HealthResponse, StatsResponse
from api.stats import StatsService
from src import __version__

app = FastAPI(
    title="Scale-inhomogeneous DGFF API",
    description="Samplers, covariance checks and extreme-value experiments",
    version=__version__,
    docs_url="/docs",
    redoc_url="/redoc"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(profile.router)
app.include_router(experiments.router)


@app.get("/", tags=["root"])
async def root():
    """API root - points to documentation."""
    return {
        "message": "Scale-inhomogeneous DGFF API",
        "docs": "/docs",
        "version": __version__
    }


@app.get("/health", response_model=HealthResponse, tags=["health"])
async def health_check():
    """Health check endpoint for deployment monitoring."""
    return HealthResponse(status="healthy", version=__version__)


@app.get("/api/stats", response_model=StatsResponse, tags=["stats"])
async def get_stats():
    """Number of experiments run through the API."""
    return StatsResponse(total_runs=StatsService.get_count())
