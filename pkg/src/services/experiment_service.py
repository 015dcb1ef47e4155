"""Experiment Service"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import structlog

from src.models.floor_plan import XY
from src.models.landmark import KnnSpec, KStarSpec, RoomPosterior
from src.models.ranging import RangingParams
from src.models.run import MetricsReport, RunConfig
from src.models.sensing import ObservationFrame
from src.models.simulation import EnvironmentModel, GroundTruthTrace
from src.services.baseline_service import knn_locate, nlst_locate
from src.services.filter_service import ParticleFilter, build_bundle
from src.services.landmark_service import cross_validate, train_classifier
from src.services.metrics_service import build_report, survey_time_minutes
from src.services.ranging_service import (
    evaluate_ranging_models,
    fit_ranging_params,
    hybrid_range,
    load_ranging_params,
    load_reference_points,
    save_ranging_params,
    save_reference_points,
)
from src.services.sensing_service import (
    frames_to_matrix,
    load_coord_db,
    load_fingerprint_db,
    load_observations,
    save_coord_db,
    save_fingerprint_db,
    save_observations,
)
from src.services.simulation_service import (
    SCENARIOS,
    EnvironmentSimulator,
    load_environment,
    load_trace,
    save_environment,
    save_trace,
    stationary_trace,
)
from src.services.state_space_service import build_grid
from src.utils.config import settings
from src.utils.errors import DegenerateGeometryError, RuntimeDegeneracyError

logger = structlog.get_logger()

ENVIRONMENT_FILE = "environment.json"
SURVEY_DB_FILE = "survey_db.csv"
COORD_DB_FILE = "coord_db.csv"
REFERENCE_FILE = "reference.csv"
TRACE_FILE = "trace.csv"
OBSERVATIONS_FILE = "observations.csv"
RANGING_PARAMS_FILE = "ranging_params.csv"
RANGING_ERRORS_FILE = "ranging_errors.csv"
LANDMARK_TABLE_FILE = "landmark_accuracy.csv"
REPORT_FILE = "report.json"
ESTIMATES_FILE = "estimates.csv"
SURVEY_TIME_FILE = "survey_time.json"
SUMMARY_FILE = "summary.csv"
CDF_FILE = "error_cdf.csv"


class ExperimentService:
    """
    Experiment driver behind the CLI verbs

    Every stochastic artifact draws from a child of the run seed, so a
    fixed config reproduces byte-identical outputs.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = config.output_dir
        children = np.random.SeedSequence(config.seed).spawn(6)
        self._seeds = {
            name: int(child.generate_state(1)[0])
            for name, child in zip(("survey", "coord", "reference", "points", "observations", "filter"), children)
        }

    # --- inputs ---------------------------------------------------------

    def environment(self) -> EnvironmentModel:
        cfg = self.config
        if cfg.scenario is not None:
            kwargs = {}
            if cfg.shadowing_sigma_db is not None:
                kwargs["shadowing_sigma_db"] = cfg.shadowing_sigma_db
            return SCENARIOS[cfg.scenario](**kwargs)
        path = cfg.artifact(cfg.environment, ENVIRONMENT_FILE)
        cfg.require(path)
        return load_environment(path)

    def _saved_environment(self) -> EnvironmentModel:
        path = self.config.artifact(self.config.environment, ENVIRONMENT_FILE)
        if path.exists():
            return load_environment(path)
        return self.environment()

    def _known_environment(self) -> Optional[EnvironmentModel]:
        """Saved or scenario environment; None when the run has neither"""
        path = self.config.artifact(self.config.environment, ENVIRONMENT_FILE)
        if not path.exists() and self.config.scenario is None:
            return None
        return self._saved_environment()

    def _test_points(self, sim: EnvironmentSimulator) -> List[XY]:
        if self.config.test_points:
            return list(self.config.test_points)
        rng = np.random.default_rng(self._seeds["points"])
        graph = sim.graph
        nodes = rng.choice(graph.num_nodes, size=self.config.random_test_points, replace=False)
        return [(float(graph.x[i]), float(graph.y[i])) for i in nodes]

    def ranging_params(self, env: EnvironmentModel) -> RangingParams:
        cfg = self.config
        if cfg.ranging == "truth":
            return env.truth_ranging
        if cfg.ranging == "fit":
            path = cfg.artifact(cfg.ranging_reference, REFERENCE_FILE)
            cfg.require(path)
            return fit_ranging_params(load_reference_points(path))
        cfg.require(Path(cfg.ranging))
        return load_ranging_params(cfg.ranging)

    # --- verbs ----------------------------------------------------------

    def simulate(self) -> Dict[str, Path]:
        """Environment, survey DB, KNN coordinate DB, reference points, test trace"""
        cfg = self.config
        self.out.mkdir(parents=True, exist_ok=True)
        env = self.environment()
        sim = EnvironmentSimulator(env)

        paths = {name: self.out / name for name in (
            ENVIRONMENT_FILE, SURVEY_DB_FILE, COORD_DB_FILE, REFERENCE_FILE, TRACE_FILE, OBSERVATIONS_FILE)}
        save_environment(env, paths[ENVIRONMENT_FILE])
        save_fingerprint_db(sim.build_survey_db(cfg.survey, self._seeds["survey"]), paths[SURVEY_DB_FILE])
        save_coord_db(sim.build_coord_survey_db(cfg.coord_grid_m, seed=self._seeds["coord"]), paths[COORD_DB_FILE])
        save_reference_points(sim.gen_reference_points(cfg.reference_points, self._seeds["reference"]),
                              paths[REFERENCE_FILE])

        trace = stationary_trace(env.plan, self._test_points(sim), cfg.steps_per_point, settings.WIFI_RATE_HZ)
        save_trace(trace, paths[TRACE_FILE])
        save_observations(sim.gen_observations(trace, self._seeds["observations"]), sim.ap_list,
                          paths[OBSERVATIONS_FILE])

        logger.info("simulation_written", out=str(self.out), test_points=len(trace.segments()))
        return paths

    def survey(self) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        sim = EnvironmentSimulator(self.environment())
        path = self.config.artifact(self.config.survey_db, SURVEY_DB_FILE)
        save_fingerprint_db(sim.build_survey_db(self.config.survey, self._seeds["survey"]), path)
        return path

    def fit_ranging(self) -> Tuple[RangingParams, pd.DataFrame]:
        """Fit per-anchor constants and report LDPL / NLR / hybrid ranging errors"""
        cfg = self.config
        path = cfg.artifact(cfg.ranging_reference, REFERENCE_FILE)
        cfg.require(path)
        reference = load_reference_points(path)
        params = fit_ranging_params(reference)

        self.out.mkdir(parents=True, exist_ok=True)
        save_ranging_params(params, self.out / RANGING_PARAMS_FILE)
        table = pd.DataFrame([s.model_dump() for s in evaluate_ranging_models(params, reference)])
        table.to_csv(self.out / RANGING_ERRORS_FILE, index=False, lineterminator="\n")
        return params, table

    def evaluate_landmark(self) -> pd.DataFrame:
        """
        CV accuracy per classifier and feature set, plus anchor-count ablations
        """
        cfg = self.config
        path = cfg.artifact(cfg.survey_db, SURVEY_DB_FILE)
        cfg.require(path)
        env = self._known_environment()
        db = load_fingerprint_db(path, rooms=env.plan.room_ids if env is not None else None)

        specs = [cfg.classifier, *cfg.extra_classifiers]
        if not cfg.extra_classifiers:
            specs.append(KnnSpec(k=cfg.knn_k) if isinstance(cfg.classifier, KStarSpec) else KStarSpec())

        rows = []
        for spec in specs:
            for features, view in (("wifi", db.select(include_mf=False)), ("wifi+mf", db)):
                result = cross_validate(view, spec, cfg.folds, cfg.seed)
                rows.append(self._cv_row(result, features, len(view.ap_list)))

        counts = cfg.anchor_counts or self._default_anchor_counts(db.ap_list, env)
        for n in counts:
            if not 1 <= n <= len(db.ap_list):
                raise ValueError(f"anchor count {n} outside [1, {len(db.ap_list)}]")
            view = db.select(aps=db.ap_list[:n], include_mf=True)
            result = cross_validate(view, cfg.classifier, cfg.folds, cfg.seed)
            rows.append(self._cv_row(result, "wifi+mf", n))

        table = pd.DataFrame(rows)
        self.out.mkdir(parents=True, exist_ok=True)
        table.to_csv(self.out / LANDMARK_TABLE_FILE, index=False, lineterminator="\n")
        return table

    @staticmethod
    def _default_anchor_counts(ap_list: List[str], env: Optional[EnvironmentModel]) -> List[int]:
        """From the anchors with known positions up to every anchor in the DB"""
        if env is None:
            return [len(ap_list)]
        ranging = len(env.plan.anchor_positions())
        return list(range(max(1, min(ranging, len(ap_list))), len(ap_list) + 1))

    @staticmethod
    def _cv_row(result, features: str, anchors: int) -> dict:
        return {
            "classifier": result.classifier,
            "features": features,
            "anchors": anchors,
            "accuracy_pct": result.accuracy,
            "build_time_ms": result.build_time_ms,
            "stratified": result.stratified,
            "folds": result.folds,
        }

    def localize(self) -> MetricsReport:
        """Run the configured method over every stationary test point"""
        cfg = self.config
        trace_path = cfg.artifact(cfg.trace, TRACE_FILE)
        obs_path = cfg.artifact(cfg.observations, OBSERVATIONS_FILE)
        cfg.require(trace_path, obs_path)
        trace = load_trace(trace_path)
        _, frames = load_observations(obs_path)
        if len(frames) != len(trace):
            raise ValueError(f"trace has {len(trace)} points but {len(frames)} observation frames")

        if cfg.method == "pfml":
            errors, estimates, timing, degenerate, skipped = self._run_pfml(self._saved_environment(), trace, frames)
        elif cfg.method == "nlst":
            errors, estimates, timing, degenerate, skipped = self._run_nlst(self._saved_environment(), trace, frames)
        else:
            errors, estimates, timing, degenerate, skipped = self._run_knn(trace, frames)

        survey_min = survey_time_minutes(cfg.survey_time) if cfg.survey_time is not None else None
        report = build_report(cfg.method, errors, timing, degenerate, skipped, survey_min)

        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / REPORT_FILE).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        pd.DataFrame(estimates, columns=["point", "t", "true_x", "true_y", "est_x", "est_y", "error_m"]).to_csv(
            self.out / ESTIMATES_FILE, index=False, lineterminator="\n")
        logger.info("localization_done", method=cfg.method, mean_error=round(report.mean_error, 3),
                    p90=round(report.p90_error, 3), points=len(errors))
        return report

    def _per_point(self, point_errors: List[Optional[float]]) -> Optional[float]:
        """Mean over the frames after warm-up that produced an estimate"""
        usable = [e for e in point_errors[self.config.warmup_steps:] if e is not None]
        return float(np.mean(usable)) if usable else None

    def _run_pfml(self, env: EnvironmentModel, trace: GroundTruthTrace, frames: List[ObservationFrame]):
        cfg = self.config
        db_path = cfg.artifact(cfg.survey_db, SURVEY_DB_FILE)
        cfg.require(db_path)
        db = load_fingerprint_db(db_path, rooms=env.plan.room_ids)
        model = train_classifier(db, cfg.classifier)
        params = self.ranging_params(env)
        graph = build_grid(env.plan)
        anchors = env.plan.anchor_positions()

        errors, estimates, timing = [], [], []
        degenerate = 0
        for point, (start, stop) in enumerate(trace.segments()):
            segment = frames[start:stop]
            proba = model.predict_proba(frames_to_matrix(segment, db.ap_list, db.missing_fill))
            seed = self._seeds["filter"] + point
            pf = ParticleFilter(graph, cfg.filter.model_copy(update={"seed": seed}), anchors)
            ps = pf.init()
            point_errors = []
            for offset, frame in enumerate(segment):
                posterior = RoomPosterior(probabilities={
                    c: float(p) for c, p in zip(model.classes, proba[offset] / proba[offset].sum())
                })
                bundle = build_bundle(frame, params, anchors, cfg.filter, posterior)
                ps, record = pf.step(ps, bundle)
                truth = trace.points[start + offset]
                err = float(np.hypot(record.estimate[0] - truth.x, record.estimate[1] - truth.y))
                point_errors.append(err)
                timing.append(record.elapsed_ms)
                degenerate += int(record.degenerate)
                estimates.append((point, truth.t, truth.x, truth.y, *record.estimate, err))
            errors.append(self._per_point(point_errors))
        return errors, estimates, timing, degenerate, 0

    def _run_nlst(self, env: EnvironmentModel, trace: GroundTruthTrace, frames: List[ObservationFrame]):
        params = self.ranging_params(env)
        anchors = env.plan.anchor_positions()
        errors, estimates, unresolved = [], [], []
        skipped = 0
        converged_any = False
        for point, (start, stop) in enumerate(trace.segments()):
            point_errors = []
            for offset, frame in enumerate(frames[start:stop]):
                ranges = {
                    a: hybrid_range(p, params[a], params.los_threshold_m)
                    for a, p in frame.rssi.items() if a in anchors and a in params
                }
                try:
                    result = nlst_locate(ranges, anchors)
                except DegenerateGeometryError:
                    skipped += 1
                    point_errors.append(None)
                    continue
                converged_any |= result.converged
                truth = trace.points[start + offset]
                err = float(np.hypot(result.position[0] - truth.x, result.position[1] - truth.y))
                point_errors.append(err)
                estimates.append((point, truth.t, truth.x, truth.y, *result.position, err))
            error = self._per_point(point_errors)
            if error is None:
                unresolved.append(point)
            errors.append(error)
        if not converged_any:
            raise RuntimeDegeneracyError("NLST did not converge on any test point")
        if unresolved:
            raise RuntimeDegeneracyError(f"NLST has no estimate after warm-up for test points {unresolved}")
        return errors, estimates, [], 0, skipped

    def _run_knn(self, trace: GroundTruthTrace, frames: List[ObservationFrame]):
        cfg = self.config
        path = cfg.artifact(cfg.coord_db, COORD_DB_FILE)
        cfg.require(path)
        db = load_coord_db(path)
        env = self._known_environment()
        if env is not None:
            db.check_bounds(env.plan.bounds)
        features = frames_to_matrix(frames, db.ap_list, db.missing_fill)
        errors, estimates = [], []
        for point, (start, stop) in enumerate(trace.segments()):
            point_errors = []
            for i in range(start, stop):
                est = knn_locate(db, features[i], cfg.knn_k)
                truth = trace.points[i]
                err = float(np.hypot(est[0] - truth.x, est[1] - truth.y))
                point_errors.append(err)
                estimates.append((point, truth.t, truth.x, truth.y, *est, err))
            errors.append(self._per_point(point_errors))
        return errors, estimates, [], 0, 0

    def survey_time(self) -> float:
        if self.config.survey_time is None:
            raise ValueError("config has no survey_time section")
        minutes = survey_time_minutes(self.config.survey_time)
        self.out.mkdir(parents=True, exist_ok=True)
        payload = {**self.config.survey_time.model_dump(), "minutes": minutes}
        (self.out / SURVEY_TIME_FILE).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        return minutes

    def report(self) -> pd.DataFrame:
        """Comparison table and CDF CSV from one or more report JSONs"""
        paths = self.config.reports or [self.out / REPORT_FILE]
        self.config.require(*paths)
        reports = [MetricsReport.model_validate_json(Path(p).read_text(encoding="utf-8")) for p in paths]

        summary = pd.DataFrame([{
            "method": r.method,
            "points": len(r.per_point_errors),
            "mean_m": r.mean_error,
            "sd_m": r.sd_error,
            "p90_m": r.p90_error,
            "ci95_low_m": r.ci95_mean[0],
            "ci95_high_m": r.ci95_mean[1],
            "median_step_ms": r.median_step_ms,
        } for r in reports])
        cdf = pd.DataFrame([
            {"method": r.method, "error_m": e, "fraction": f} for r in reports for e, f in r.cdf
        ])
        self.out.mkdir(parents=True, exist_ok=True)
        summary.to_csv(self.out / SUMMARY_FILE, index=False, lineterminator="\n")
        cdf.to_csv(self.out / CDF_FILE, index=False, lineterminator="\n")
        return summary


def load_run_config(path: Optional[Path], seed: Optional[int] = None, out: Optional[Path] = None) -> RunConfig:
    """Read the JSON run config and apply command-line overrides"""
    data = {}
    if path is not None:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError("run config must be a JSON object")
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["output_dir"] = str(out)
    return RunConfig.model_validate(data)
