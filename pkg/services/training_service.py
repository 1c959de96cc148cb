import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from config import TrainConfig
from network.cstr import CSTRSegmenter
from utils.losses import total_loss
from utils.metrics import MetricsReport
from utils.optim import SGD, NonFiniteGradient, poly_lr
from utils.storage import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

Sample = Tuple[np.ndarray, np.ndarray]


class TrainingDiverged(RuntimeError):
    """
    Raised when the loss or a gradient stops being finite.

    Attributes:
        iteration: Iteration at which training stopped.
        checkpoint_path: File holding the last good parameters, if one was written.
        state: The last good state dict (already restored into the model).
    """

    def __init__(self, iteration: int, reason: str, checkpoint_path: Optional[str] = None,
                 state: Optional[Dict[str, np.ndarray]] = None):
        self.iteration = iteration
        self.checkpoint_path = checkpoint_path
        self.state = state
        super().__init__(f"iteration {iteration}: {reason}")


@dataclass
class TrainResult:
    """
    Attributes:
        model: Trained model (train mode off).
        log: One row per logged iteration (loss terms, learning rate, gradient norm,
             metrics at evaluation iterations).
        checkpoint_path: Final checkpoint, when an output directory was given.
        report: Metrics on the evaluation set after the last iteration.
    """
    model: CSTRSegmenter
    log: List[Dict] = field(default_factory=list)
    checkpoint_path: Optional[str] = None
    report: Optional[MetricsReport] = None


class TrainingService:
    """
    Service layer for model construction, the training loop and checkpoints.
    """
    def __init__(self, dataset_service, evaluation_service, dtype=np.float32, show_progress: bool = False):
        self.dataset_service = dataset_service
        self.evaluation_service = evaluation_service
        self.dtype = dtype
        self.show_progress = show_progress

    def build_model(self, cfg: TrainConfig) -> CSTRSegmenter:
        return CSTRSegmenter(cfg.model, seed=cfg.train.seed, dtype=self.dtype)

    def train(self, cfg: TrainConfig, train_samples: Sequence[Sample],
              eval_samples: Optional[Sequence[Sample]] = None, out_dir: Optional[str] = None,
              run_name: str = 'model') -> TrainResult:
        """
        Train one model with the seeded data order of ``cfg``.

        Args:
            cfg: Validated experiment configuration.
            train_samples: Training pairs.
            eval_samples: Held-out pairs for periodic and final evaluation.
            out_dir: Where ``<run_name>.ckpt`` goes; nothing is written when omitted.

        returns: TrainResult

        Raises:
            ValueError: If ``train_samples`` is empty.
            TrainingDiverged: On a non-finite loss or gradient; the model holds the
                last good parameters and, with ``out_dir``, they are also on disk.
        """
        cfg.validate()
        if not train_samples:
            raise ValueError("training needs at least one sample")
        model = self.build_model(cfg)
        optimizer = SGD.from_config(cfg.optim, model.named_parameters())
        result = TrainResult(model=model)
        max_iters = cfg.optim.max_iters
        logger.info(f"Training {model.variant.name} ({model.parameter_count()} parameters) "
                    f"for {max_iters} iterations, seed {cfg.train.seed}")

        batches = self.dataset_service.batches(train_samples, cfg.train.batch_size, cfg.train.seed,
                                               augment=cfg.train.augment, dtype=self.dtype)
        model.train()
        try:
            progress = tqdm(range(max_iters), desc=run_name, disable=not self.show_progress, leave=False)
            for iteration in progress:
                images, labels = next(batches)
                last_good = model.state_dict()
                lr = poly_lr(iteration, cfg.optim)
                model.zero_grad()
                forward = model(images)
                losses = total_loss(forward, labels, cfg.loss)
                if not math.isfinite(losses.total.item()):
                    self._diverged(model, last_good, iteration, "non-finite loss", out_dir, run_name, cfg)
                losses.total.backward()
                try:
                    grad_norm = optimizer.step(lr)
                except NonFiniteGradient as e:
                    self._diverged(model, last_good, iteration, str(e), out_dir, run_name, cfg)

                step = iteration + 1
                if step % cfg.train.log_interval == 0 or step == max_iters:
                    row = {'iteration': step, 'lr': lr, 'loss': losses.total.item(), 'dense': losses.dense,
                           'point': losses.point, 'band': losses.band, 'grad_norm': grad_norm}
                    if eval_samples and (step % cfg.train.eval_interval == 0 or step == max_iters):
                        report, _ = self.evaluation_service.evaluate(model, eval_samples, cfg.eval)
                        row.update(report.as_row())
                        result.report = report
                        model.train()
                    result.log.append(row)
                    logger.info(f"[{run_name}] iter {step}/{max_iters} lr={lr:.5f} loss={row['loss']:.4f} "
                                f"(dense {losses.dense:.4f}, point {losses.point:.4f}, band {losses.band:.4f})"
                                + (f" mIoU={row['mIoU']:.4f}" if 'mIoU' in row else ''))
        finally:
            if hasattr(batches, 'close'):
                batches.close()

        model.eval()
        if result.report is None and eval_samples:
            result.report, _ = self.evaluation_service.evaluate(model, eval_samples, cfg.eval)
        if out_dir:
            result.checkpoint_path = self.save(model, cfg, os.path.join(out_dir, f"{run_name}.ckpt"),
                                               iteration=max_iters)
        return result

    def _diverged(self, model: CSTRSegmenter, last_good: Dict[str, np.ndarray], iteration: int, reason: str,
                  out_dir: Optional[str], run_name: str, cfg: TrainConfig):
        model.load_state_dict(last_good)
        path = None
        if out_dir:
            path = self.save(model, cfg, os.path.join(out_dir, f"{run_name}.last_good.ckpt"), iteration=iteration)
        logger.error(f"Training diverged at iteration {iteration}: {reason}")
        raise TrainingDiverged(iteration, reason, checkpoint_path=path, state=last_good)

    def save(self, model: CSTRSegmenter, cfg: TrainConfig, path: str, iteration: int = 0) -> str:
        meta = {'config': cfg.to_dict(), 'iteration': iteration, 'variant': model.variant.name}
        return save_checkpoint(model.state_dict(), path, meta=_jsonable(meta))

    def load(self, path: str, cfg: Optional[TrainConfig] = None) -> Tuple[CSTRSegmenter, TrainConfig]:
        """
        Rebuild a model from a checkpoint; the stored configuration is used unless one is given.

        returns: (model in eval mode, configuration)"""
        checkpoint = load_checkpoint(path)
        if cfg is None:
            cfg = TrainConfig.from_dict(checkpoint.meta.get('config', {}))
        model = self.build_model(cfg)
        model.load_state_dict(checkpoint.state)
        model.eval()
        logger.info(f"Loaded {model.variant.name} from {path}")
        return model, cfg


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value
