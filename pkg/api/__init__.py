# DGFF experiments API
from api.main import app

__all__ = ["app"]
