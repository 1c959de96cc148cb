import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from PIL import Image
from tqdm import tqdm

from config import CLASS_COLORS, CLASS_NAMES, IGNORE_COLOR, IGNORE_INDEX, EvalConfig
from network.cstr import CSTRSegmenter
from services.dataset_service import normalize_images
from utils.metrics import MetricsAccumulator, MetricsReport
from utils.storage import write_dataset

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ['mIoU', 'bIoU', 'F1', 'aAcc']


def colorize(labels: np.ndarray) -> np.ndarray:
    """``[H, W]`` labels to an ``[H, W, 3]`` uint8 RGB preview."""
    palette = np.zeros((256, 3), dtype=np.uint8)
    palette[:] = IGNORE_COLOR
    palette[:len(CLASS_COLORS)] = CLASS_COLORS
    palette[IGNORE_INDEX] = IGNORE_COLOR
    return palette[np.asarray(labels, dtype=np.uint8)]


def write_csv(rows: Sequence[Dict], path: str, columns: Optional[List[str]] = None) -> pd.DataFrame:
    """Write report rows with pandas; returns the frame."""
    frame = pd.DataFrame(list(rows), columns=columns)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.6f')
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return frame


class EvaluationService:
    """
    Service layer for inference and metric reports.
    """
    def __init__(self, dtype=np.float32, show_progress: bool = False):
        self.dtype = dtype
        self.show_progress = show_progress

    def predict(self, model: CSTRSegmenter, images: np.ndarray, batch_size: int = 4) -> np.ndarray:
        """
        Predicted label maps for uint8 images ``[N, 3, H, W]``.

        returns: uint8 array [N, H, W]"""
        images = np.asarray(images)
        outputs = []
        starts = range(0, len(images), batch_size)
        for start in tqdm(starts, desc='predict', disable=not self.show_progress, leave=False):
            batch = normalize_images(images[start:start + batch_size], self.dtype)
            outputs.append(model.predict(batch))
        if not outputs:
            return np.zeros((0,) + images.shape[2:], dtype=np.uint8)
        return np.concatenate(outputs)

    def evaluate(self, model: CSTRSegmenter, samples: Sequence[Tuple[np.ndarray, np.ndarray]],
                 eval_cfg: Optional[EvalConfig] = None, batch_size: int = 4) -> Tuple[MetricsReport, np.ndarray]:
        """
        Predict every sample and accumulate dataset-level metrics.

        returns: (MetricsReport, predictions)"""
        eval_cfg = eval_cfg or EvalConfig()
        images = np.stack([s[0] for s in samples])
        labels = np.stack([s[1] for s in samples])
        predictions = self.predict(model, images, batch_size)
        accumulator = MetricsAccumulator(band_width=eval_cfg.band_width, tolerance=eval_cfg.tolerance)
        accumulator.update(predictions, labels)
        report = accumulator.report()
        logger.debug(f"Evaluated {len(samples)} images: mIoU={report.miou:.4f} bIoU={report.biou:.4f} "
                     f"F1={report.boundary_f1:.4f} aAcc={report.aacc:.4f}")
        return report, predictions

    def save_predictions(self, samples: Sequence[Tuple[np.ndarray, np.ndarray]], predictions: np.ndarray,
                         path: str) -> str:
        """Write predictions in the dataset format, paired with their input images."""
        pairs = [(image, pred.astype(np.uint8)) for (image, _), pred in zip(samples, predictions)]
        height, width = predictions.shape[-2:]
        return write_dataset(pairs, path, height=height, width=width)

    def save_previews(self, samples: Sequence[Tuple[np.ndarray, np.ndarray]], predictions: np.ndarray,
                      directory: str, limit: Optional[int] = None) -> List[str]:
        """
        PNG strips (image | ground truth | prediction) per sample.

        returns: Written file paths"""
        os.makedirs(directory, exist_ok=True)
        paths = []
        for index, ((image, labels), pred) in enumerate(zip(samples, predictions)):
            if limit is not None and index >= limit:
                break
            strip = np.concatenate([np.transpose(image, (1, 2, 0)), colorize(labels), colorize(pred)], axis=1)
            path = os.path.join(directory, f"sample_{index:04d}.png")
            Image.fromarray(np.ascontiguousarray(strip)).save(path)
            paths.append(path)
        logger.info(f"Wrote {len(paths)} previews to {directory}")
        return paths

    @staticmethod
    def report_row(report: MetricsReport, **keys) -> Dict:
        row = dict(keys)
        row.update(report.as_row(CLASS_NAMES))
        return row
