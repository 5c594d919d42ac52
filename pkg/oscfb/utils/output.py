"""
Writers for the CLI's data files: sweep and trajectory CSVs, pydantic JSON
dumps and the run manifest that accompanies every output.
"""
import csv
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from pydantic import BaseModel

from oscfb.data.schemas import RunManifest, SweepResult
from oscfb.utils import format_machine, get_current_time
from oscfb.utils.config import settings


logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ("stable", "energy_ratio", "rate_ratio", "max_re_lambda", "final_ratio", "error")
SIMULATE_COLUMNS = ("t", "mean_energy", "std_error")


def manifest_path(output: Path) -> Path:
    return output.with_name(output.name + ".manifest.json")


def _ensure_parent(path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_sweep_csv(result: SweepResult, path: Path) -> Path:
    """
    One row per grid point: axis values, stable, energy_ratio, rate_ratio,
    max_re_lambda, final_ratio, error.
    """
    path = _ensure_parent(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([*result.axes, *SWEEP_COLUMNS])
        for p in result.points:
            writer.writerow([
                *(format_machine(c) for c in p.coords),
                format_machine(p.stable),
                format_machine(p.energy_ratio),
                format_machine(p.rate_ratio),
                format_machine(p.max_re_lambda),
                format_machine(p.final_ratio),
                p.error or "",
            ])
    logger.info(f"Wrote {len(result.points)} sweep row(s) to {path}")
    return path


def write_series_csv(times: Iterable[float], energy: Iterable[float], std_error: Iterable[float], path: Path) -> Path:
    path = _ensure_parent(path)
    rows = 0
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SIMULATE_COLUMNS)
        for t, e, se in zip(times, energy, std_error):
            writer.writerow([format_machine(float(t)), format_machine(float(e)), format_machine(float(se))])
            rows += 1
    logger.info(f"Wrote {rows} time sample(s) to {path}")
    return path


def write_json(model: BaseModel, path: Path) -> Path:
    path = _ensure_parent(path)
    path.write_text(model.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def write_manifest(
    output: Path,
    command: str,
    config: Dict[str, Any],
    started_at,
    seed: Optional[int] = None,
    method: Optional[str] = None,
    outputs: Optional[List[Path]] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Write <output>.manifest.json next to a primary output file.

    Args:
        output: The primary output file
        command: CLI command name
        config: Fully resolved configuration (re-parseable as --config)
        started_at: Run start time
        outputs: Every file produced by the run (defaults to [output])
    """
    manifest = RunManifest(
        version=settings.VERSION,
        command=command,
        config=config,
        seed=seed,
        method=method,
        started_at=started_at,
        finished_at=get_current_time(),
        outputs=[str(p) for p in (outputs or [output])],
        metadata=metadata or {},
    )
    return write_json(manifest, manifest_path(Path(output)))
