import os
import logging
import itertools
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from oscfb.data.constants import SLICE_NAMES
from oscfb.data.schemas import (
    Baseline,
    Boundary,
    ModelParams,
    SimConfig,
    SweepMethod,
    SweepPoint,
    SweepResult,
    SweepSpec,
    DelayModel,
)
from oscfb.physics.analytic import classify, classify_delay
from oscfb.physics.core import build_params
from oscfb.simulation.sde import classify_numeric
from oscfb.utils import get_current_time
from oscfb.utils.config import settings
from oscfb.utils.exceptions import BoundarySearchError, NoTransitionError


logger = logging.getLogger(__name__)

DEFAULT_NUMERIC_SIM = SimConfig(dt=0.01, t_final=1000.0, n_paths=500, record_stride=100)


def point_seed(master: int, index: int) -> int:
    """
    Seed of a numeric grid point, derived from (master seed, point index).
    """
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


class SweepRunner:
    """
    Evaluates a SweepSpec point by point. Each point is independent; failures
    are recorded on the point and never abort the grid.
    """

    def __init__(
        self,
        spec: SweepSpec,
        n_workers: Optional[int] = None,
        show_progress: bool = settings.SHOW_PROGRESS,
    ):
        """
        Initialize the sweep runner.

        Args:
            spec: Validated sweep specification
            n_workers: Thread count (None -> OSC_THREADS or hardware parallelism)
            show_progress: Display a progress bar on stderr
        """
        self.spec = spec
        self.n_workers = n_workers or settings.OSC_THREADS or os.cpu_count() or 1
        self.show_progress = show_progress
        self.baseline = Baseline(spec.baseline or settings.BASELINE)
        self.sim = (spec.sim or DEFAULT_NUMERIC_SIM).model_copy(update={"n_workers": 1})
        logger.info(
            f"Initialized sweep over {spec.axis_names} ({spec.method.value}), "
            f"{len(self.grid())} point(s), {self.n_workers} worker(s)"
        )

    def grid(self) -> List[tuple]:
        """
        Grid coordinates, first axis outermost.
        """
        return list(itertools.product(*(axis.values() for axis in self.spec.axes)))

    def point_params(self, coords: Sequence[float]) -> ModelParams:
        """
        Model parameters at one grid point. The gain follows k_rule unless k is an axis.
        """
        values: Dict[str, float] = dict(self.spec.fixed)
        for axis, value in zip(self.spec.axes, coords):
            # a slice axis wins over fixed per-side values
            for name in SLICE_NAMES.get(axis.name, ()):
                values.pop(name, None)
            values[axis.name] = value
        gain = values.pop("k", None)
        if gain is None and self.spec.k_rule != "k_opt":
            gain = float(self.spec.k_rule)
        return build_params(values, k=gain)

    def evaluate(self, index: int, coords: Sequence[float]) -> SweepPoint:
        """
        Evaluate one point, recording any failure on the returned SweepPoint.
        """
        point = SweepPoint(index=index, coords=list(coords), method=self.spec.method)
        try:
            params = self.point_params(coords)
            if self.spec.method == SweepMethod.NUMERIC:
                return self._numeric_node(point, params)
            if self.spec.method == SweepMethod.DELAY:
                return self._delay_node(point, params)
            return self._analytic_node(point, params)
        except Exception as e:
            return self._error_node(point, e)

    def _analytic_node(self, point: SweepPoint, params: ModelParams) -> SweepPoint:
        report = classify(params, baseline=self.baseline)
        return point.model_copy(update=dict(
            stable=report.stable,
            status=report.status,
            energy_ratio=report.energy_ratio,
            rate_ratio=report.rate_ratio,
            max_re_lambda=report.max_re_lambda,
            delay_model=report.delay_model,
        ))

    def _delay_node(self, point: SweepPoint, params: ModelParams) -> SweepPoint:
        report = classify_delay(params, baseline=self.baseline)
        return point.model_copy(update=dict(
            stable=report.stable,
            status=report.status,
            rate_ratio=report.rate_ratio,
            max_re_lambda=report.max_re_lambda,
            delay_model=report.delay_model,
        ))

    def _numeric_node(self, point: SweepPoint, params: ModelParams) -> SweepPoint:
        sim = self.sim.model_copy(update={"seed": point_seed(self.spec.seed, point.index)})
        verdict = classify_numeric(params, sim)
        return point.model_copy(update=dict(
            stable=verdict.stable,
            energy_ratio=verdict.final_ratio if verdict.stable else None,
            final_ratio=verdict.final_ratio,
            delay_model=DelayModel.FULL if params.tau > 0 else DelayModel.NONE,
        ))

    def _error_node(self, point: SweepPoint, error: Exception) -> SweepPoint:
        logger.error(f"Sweep point {point.index} at {point.coords} failed: {error}", exc_info=True)
        return point.model_copy(update={"error": str(error) or type(error).__name__})

    def run(self) -> SweepResult:
        """
        Evaluate the whole grid.

        Returns:
            SweepResult with points in grid order
        """
        started = get_current_time()
        grid = self.grid()
        with tqdm(total=len(grid), desc="sweep", disable=not self.show_progress) as bar:
            def job(item):
                point = self.evaluate(*item)
                bar.update(1)
                return point

            with ThreadPoolExecutor(max_workers=min(self.n_workers, len(grid))) as pool:
                points = list(pool.map(job, enumerate(grid)))

        failed = sum(1 for p in points if p.error)
        logger.info(f"Sweep finished: {len(points)} point(s), {failed} failure(s)")
        return SweepResult(
            axes=self.spec.axis_names,
            spec=self.spec,
            points=points,
            version=settings.VERSION,
            started_at=started,
            finished_at=get_current_time(),
        )

    def boundary(
        self,
        resolution: float,
        max_iter: int = 60,
        points: Optional[List[SweepPoint]] = None,
    ) -> Boundary:
        """
        Bracket the first stable/unstable transition along the single axis.
        The grid is evaluated unless the points of an earlier run are given.

        Numeric sweeps over tau bisect on multiples of sim.dt only and stop
        once the bracket is a single step wide.

        Raises:
            ValueError: spec has more than one axis
            NoTransitionError: every grid point has the same classification
            BoundarySearchError: a grid or bisection point could not be classified
        """
        if len(self.spec.axes) != 1:
            raise ValueError("boundary detection needs exactly one axis")

        if points is None:
            points = self.run().points
        verdicts = [self._verdict(p) for p in points]
        pair = next((i for i in range(len(points) - 1) if verdicts[i] != verdicts[i + 1]), None)
        if pair is None:
            raise NoTransitionError()

        lo, hi = points[pair].coords[0], points[pair + 1].coords[0]
        lo_stable = verdicts[pair]
        step = self._grid_step()
        resolution = max(resolution, step)
        index = len(points)
        for _ in range(max_iter):
            if abs(hi - lo) <= resolution:
                break
            mid = self._snap(0.5 * (lo + hi), step)
            if mid == lo or mid == hi:
                break
            if self._verdict(self.evaluate(index, (mid,))) == lo_stable:
                lo = mid
            else:
                hi = mid
            index += 1

        logger.info(f"Boundary on {self.spec.axes[0].name} bracketed in [{lo:.6g}, {hi:.6g}]")
        return Boundary(
            axis=self.spec.axes[0].name,
            lower=min(lo, hi),
            upper=max(lo, hi),
            lower_stable=lo_stable if lo <= hi else not lo_stable,
            evaluations=index,
        )

    def _grid_step(self) -> float:
        if self.spec.method == SweepMethod.NUMERIC and self.spec.axes[0].name == "tau":
            return self.sim.dt
        return 0.0

    @staticmethod
    def _snap(value: float, step: float) -> float:
        return round(value / step) * step if step else value

    def _verdict(self, point: SweepPoint) -> bool:
        if point.error or point.stable is None:
            raise BoundarySearchError(
                f"{self.spec.axes[0].name}={point.coords[0]:.6g}: {point.error or 'no verdict'}"
            )
        return point.stable


def run_sweep(spec: SweepSpec, n_workers: Optional[int] = None) -> SweepResult:
    return SweepRunner(spec, n_workers=n_workers).run()


def detect_instability_boundary(spec: SweepSpec, resolution: float = 1e-3, n_workers: Optional[int] = None) -> Boundary:
    return SweepRunner(spec, n_workers=n_workers).boundary(resolution)
