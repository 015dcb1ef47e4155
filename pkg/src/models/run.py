"""Run Configuration and Report Models"""

from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from src.models.filter import FilterConfig
from src.models.floor_plan import XY
from src.models.landmark import ClassifierSpec, KStarSpec
from src.models.simulation import SurveySpec


class SurveyTimeInputs(BaseModel):
    """Offline survey effort inputs (instance and survey-point counts)"""
    method: Literal["pfml", "knn"] = "pfml"
    instances: int = Field(default=0, ge=0)
    rate_hz: float = Field(default=3.0, gt=0)
    ranging_min: float = Field(default=0.0, ge=0)
    survey_points: int = Field(default=0, ge=0)
    t_sp_s: float = Field(default=0.0, ge=0)  # collection time per survey point
    t_sw_s: float = Field(default=0.0, ge=0)  # walking time between survey points


class RunConfig(BaseModel):
    """Experiment configuration (JSON)"""
    environment: Optional[Path] = None
    scenario: Optional[Literal["office", "office_five", "office_five_spread", "single_room", "mirrored_rooms"]] = None
    shadowing_sigma_db: Optional[float] = None
    classifier: ClassifierSpec = KStarSpec()
    extra_classifiers: List[ClassifierSpec] = []
    filter: FilterConfig = FilterConfig()
    ranging: str = "fit"  # "fit", "truth" or a params CSV path
    ranging_reference: Optional[Path] = None
    reference_points: int = Field(default=40, gt=0)
    method: Literal["pfml", "nlst", "knn"] = "pfml"
    knn_k: int = Field(default=3, ge=1)
    test_points: List[XY] = []
    random_test_points: int = Field(default=20, ge=0)
    steps_per_point: int = Field(default=30, gt=0)
    warmup_steps: int = Field(default=0, ge=0)
    trace: Optional[Path] = None
    observations: Optional[Path] = None
    survey_db: Optional[Path] = None
    coord_db: Optional[Path] = None
    coord_grid_m: float = Field(default=1.0, gt=0)
    survey: SurveySpec = SurveySpec(default_instances=400)
    folds: int = Field(default=10, ge=2)
    anchor_counts: List[int] = []
    reports: List[Path] = []
    survey_time: Optional[SurveyTimeInputs] = None
    output_dir: Path = Path("out")
    seed: int = 42

    @model_validator(mode="after")
    def _warmup_below_steps(self) -> "RunConfig":
        if self.warmup_steps >= self.steps_per_point:
            raise ValueError("warmup_steps must be smaller than steps_per_point")
        return self

    def artifact(self, configured: Optional[Path], default_name: str) -> Path:
        """Configured path, or the default file name inside output_dir"""
        return configured if configured is not None else self.output_dir / default_name

    def require(self, *paths: Path):
        missing = [str(p) for p in paths if not Path(p).exists()]
        if missing:
            raise FileNotFoundError(f"required input missing: {', '.join(missing)}")


class MetricsReport(BaseModel):
    """Localization accuracy summary"""
    method: str
    per_point_errors: List[float]
    mean_error: float
    sd_error: float
    p90_error: float
    ci95_mean: Tuple[float, float]
    cdf: List[Tuple[float, float]]
    step_timing_ms: List[float] = []
    median_step_ms: Optional[float] = None
    degeneracy_count: int = 0
    skipped_frames: int = 0
    survey_time_min: Optional[float] = None
