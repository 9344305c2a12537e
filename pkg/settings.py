"""
Configuration for the vanishing-mass toolkit
"""

import os
from typing import Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field

# Load environment variables
load_dotenv()

# === Configuration ===
APP_NAME = os.getenv("VMASS_APP_NAME", "vanishing-mass")
APP_VERSION = "1.0.0"

LOG_LEVEL = os.getenv("VMASS_LOG_LEVEL", "INFO")
LOG_FORMAT = os.getenv("VMASS_LOG_FORMAT", "console")
OUTPUT_DIR = os.getenv("VMASS_OUTPUT_DIR", "runs")

# Solver Configuration
DEFAULT_TOL = float(os.getenv("VMASS_DEFAULT_TOL", "1e-6"))
MK_TOL = float(os.getenv("VMASS_MK_TOL", "1e-4"))
RANK_TOL = float(os.getenv("VMASS_RANK_TOL", "1e-9"))
MAX_ITER = int(os.getenv("VMASS_MAX_ITER", "200000"))
SEED = int(os.getenv("VMASS_SEED", "0"))
WORKERS = int(os.getenv("VMASS_WORKERS", "1"))

# Gauge tabulation (numeric 3D laws only)
GAUGE_RESOLUTION_DEG = float(os.getenv("VMASS_GAUGE_RESOLUTION_DEG", "1.0"))

# Floor regularization ladder for measures with holes
FLOOR_LADDER: Tuple[float, ...] = tuple(
    float(v) for v in os.getenv("VMASS_FLOOR_LADDER", "1e-4,1e-5,1e-6").split(",") if v.strip()
)


class Settings(BaseModel):
    """Resolved settings, echoed into every run manifest"""
    model_config = ConfigDict(frozen=True)

    app_name: str = APP_NAME
    app_version: str = APP_VERSION
    log_level: str = LOG_LEVEL
    log_format: str = LOG_FORMAT
    output_dir: str = OUTPUT_DIR
    default_tol: float = Field(DEFAULT_TOL, gt=0)
    mk_tol: float = Field(MK_TOL, gt=0)
    rank_tol: float = Field(RANK_TOL, gt=0)
    max_iter: int = Field(MAX_ITER, ge=1)
    seed: int = SEED
    workers: int = Field(WORKERS, ge=1)
    gauge_resolution_deg: float = Field(GAUGE_RESOLUTION_DEG, gt=0, le=45)
    floor_ladder: Tuple[float, ...] = FLOOR_LADDER


def get_settings() -> Settings:
    """Settings as currently resolved from the environment"""
    return Settings()
