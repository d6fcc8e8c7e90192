"""
Artifact output for experiment runs

Every file a run produces goes through ArtifactWriter, rooted at the run's
output directory.
"""
import json
import logging
import platform
from datetime import datetime
from pathlib import Path
from typing import Any, Optional

import numpy as np

from config import VERSION, ExperimentConfig
from dynamics import Trajectory
from metrics import ConfusionMatrix
from models import Checkpoint
from trainer import IterationRecord

logger = logging.getLogger(__name__)


class ArtifactWriter:
    """Writes logs, checkpoints and metric exports for one run"""

    MANIFEST = "manifest.json"
    TRAINING_LOG = "training_log.jsonl"
    TIMINGS = "timings.csv"
    TRAINING_CURVE = "training_curve.csv"
    CONFUSION = "confusion_matrices.csv"
    SUMMARY = "summary.json"
    CHECKPOINTS = "checkpoints"

    def __init__(self, output_dir: str):
        self.output_dir = Path(output_dir)

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def prepare(self) -> None:
        """Create the directory and start the columnar files with their headers"""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        (self.output_dir / self.CHECKPOINTS).mkdir(exist_ok=True)
        self.path(self.TRAINING_LOG).write_text("", encoding="utf-8")
        self.path(self.TIMINGS).write_text("iteration,wall_time\n", encoding="utf-8")
        self.path(self.TRAINING_CURVE).write_text(
            "iteration,mean_distance,test_error\n", encoding="utf-8"
        )
        self.path(self.CONFUSION).write_text("", encoding="utf-8")

    def write_json(self, name: str, data: Any) -> Path:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2)
        return target

    def write_manifest(self, config: ExperimentConfig, extra: Optional[dict] = None) -> Path:
        """Everything needed to reproduce the run"""
        manifest = {
            "software_version": VERSION,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "created": datetime.now().isoformat(),
            "seed": config.train.rng_seed,
            "config": config.to_dict(),
        }
        if extra:
            manifest.update(extra)
        target = self.write_json(self.MANIFEST, manifest)
        logger.info(f"Manifest written to {target}")
        return target

    def append_record(self, record: IterationRecord) -> None:
        """Training log line, timing row and training-curve row for one record"""
        with open(self.path(self.TRAINING_LOG), "a", encoding="utf-8") as f:
            f.write(json.dumps(record.to_dict()) + "\n")
        with open(self.path(self.TIMINGS), "a", encoding="utf-8") as f:
            f.write(f"{record.iteration},{record.wall_time!r}\n")

        test_error = ""
        if record.evaluation and "test_error" in record.evaluation:
            test_error = repr(record.evaluation["test_error"])
        mean_distance = "" if record.mean_distance is None else repr(record.mean_distance)
        with open(self.path(self.TRAINING_CURVE), "a", encoding="utf-8") as f:
            f.write(f"{record.iteration},{mean_distance},{test_error}\n")

    def write_checkpoint(self, checkpoint: Checkpoint, iteration: int) -> Path:
        target = self.output_dir / self.CHECKPOINTS / f"iteration_{iteration:06d}.json"
        target.parent.mkdir(parents=True, exist_ok=True)
        checkpoint.save(str(target))
        logger.debug(f"Checkpoint written to {target}")
        return target

    def append_confusion_matrix(self, iteration: int, confusion: ConfusionMatrix) -> None:
        with open(self.path(self.CONFUSION), "a", encoding="utf-8") as f:
            f.write(confusion.to_csv_block(iteration))

    def write_summary(self, summary: dict) -> Path:
        target = self.write_json(self.SUMMARY, summary)
        logger.info(f"Summary written to {target}")
        return target

    def write_trajectory(self, name: str, trajectory: Trajectory) -> Path:
        """Columnar text: time, phi_0 ... phi_{N-1}"""
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        data = trajectory.as_array()
        n_units = data.shape[1] - 1 if data.ndim == 2 else 0
        header = " ".join(["time"] + [f"phi_{k}" for k in range(n_units)])
        np.savetxt(target, data, header=header, comments="", fmt="%.17g")
        return target

    def write_table(self, name: str, header: list[str], rows: list[list[Any]]) -> Path:
        """Comma-separated table with a header row"""
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        lines = [",".join(header)]
        lines.extend(",".join("" if v is None else str(v) for v in row) for row in rows)
        target.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return target
