import logging
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import ConfigError, TrainConfig
from network.cstr import VARIANT_ORDER, resolve_variant
from network.gcs import GATE_PRESETS, resolve_gate
from services.dataset_service import DatasetService
from services.evaluation_service import EvaluationService, write_csv
from services.study_service import DEFAULT_RADII, StudyService
from services.training_service import TrainingService

logger = logging.getLogger(__name__)

Sample = Tuple[np.ndarray, np.ndarray]

STUDIES = ('variants', 'gates')


def parse_int_list(text: Optional[str], default: Sequence[int], flag: str) -> List[int]:
    """``'0,1,2'`` to ``[0, 1, 2]``; ``None`` keeps the default."""
    if text is None:
        return list(default)
    try:
        values = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated integers, got {text!r}")
    if not values:
        raise ConfigError(f"{flag} needs at least one value")
    return values


def build_config(args) -> TrainConfig:
    """
    Defaults, then the ``--config`` file, then explicit flags.

    Raises:
        ConfigError: Unknown keys, bad values or inconsistent schedule.
    """
    overrides = {}
    for item in getattr(args, 'set', None) or []:
        key, sep, value = item.partition('=')
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if getattr(args, 'seed', None) is not None:
        overrides['train.seed'] = args.seed
    if getattr(args, 'variant', None):
        resolve_variant(args.variant)
        overrides['model.variant'] = args.variant
    if getattr(args, 'gate', None):
        preset = resolve_gate(args.gate)
        overrides['model.gate'] = preset.name if preset is not None else args.gate
    if getattr(args, 'point_budget', None) is not None:
        overrides['model.point_budget'] = args.point_budget
    if getattr(args, 'no_point_refine', False):
        overrides['model.point_refine'] = False
    if getattr(args, 'config', None):
        cfg = TrainConfig.from_file(args.config, overrides)
    else:
        cfg = TrainConfig().update(overrides)
    resolve_variant(cfg.model.variant)
    resolve_gate(cfg.model.gate)
    return cfg.validate()


class ExperimentController:
    """Controller class for training, evaluation and studies with dependency injection."""

    def __init__(self, dataset_service: DatasetService, training_service: TrainingService,
                 evaluation_service: EvaluationService, study_service: StudyService, output_dir: str):
        self.dataset_service = dataset_service
        self.training_service = training_service
        self.evaluation_service = evaluation_service
        self.study_service = study_service
        self.output_dir = output_dir

    def _out_dir(self, args) -> str:
        out = getattr(args, 'out', None) or self.output_dir
        os.makedirs(out, exist_ok=True)
        return out

    def _datasets(self, args, cfg: TrainConfig) -> Tuple[List[Sample], List[Sample]]:
        """Dataset files when given, else the seeded synthetic split of ``cfg``."""
        data_path = getattr(args, 'data', None)
        eval_path = getattr(args, 'eval_data', None)
        if data_path is None and eval_path is None:
            return self.dataset_service.train_eval_split(cfg)
        generated = None
        if data_path is None or eval_path is None:
            generated = self.dataset_service.train_eval_split(cfg)
        train = self.dataset_service.load(data_path, scene=cfg.scene()).samples if data_path else generated[0]
        held_out = self.dataset_service.load(eval_path, scene=cfg.scene()).samples if eval_path else generated[1]
        return train, held_out

    def train(self, args) -> int:
        cfg = build_config(args)
        out_dir = self._out_dir(args)
        train, held_out = self._datasets(args, cfg)
        run_name = getattr(args, 'name', None) or 'model'
        result = self.training_service.train(cfg, train, held_out, out_dir=out_dir, run_name=run_name)
        write_csv(result.log, os.path.join(out_dir, f"{run_name}_log.csv"))
        if result.report is not None:
            row = self.evaluation_service.report_row(result.report, variant=cfg.model.variant, seed=cfg.train.seed)
            write_csv([row], os.path.join(out_dir, f"{run_name}_metrics.csv"))
            logger.info(f"Final mIoU={result.report.miou:.4f} bIoU={result.report.biou:.4f} "
                        f"F1={result.report.boundary_f1:.4f} aAcc={result.report.aacc:.4f}")
        logger.info(f"Checkpoint: {result.checkpoint_path}")
        return 0

    def evaluate(self, args) -> int:
        model, cfg = self.training_service.load(args.checkpoint)
        out_dir = self._out_dir(args)
        if getattr(args, 'data', None):
            samples = self.dataset_service.load(args.data, scene=cfg.scene()).samples
        else:
            samples = self.dataset_service.train_eval_split(cfg)[1]
        if not samples:
            raise ConfigError("nothing to evaluate: the evaluation set is empty")
        report, predictions = self.evaluation_service.evaluate(model, samples, cfg.eval)
        row = self.evaluation_service.report_row(report, checkpoint=os.path.basename(args.checkpoint))
        write_csv([row], os.path.join(out_dir, 'eval_metrics.csv'))
        logger.info(f"mIoU={report.miou:.4f} bIoU={report.biou:.4f} F1={report.boundary_f1:.4f} "
                    f"aAcc={report.aacc:.4f}")
        if getattr(args, 'save_predictions', None):
            self.evaluation_service.save_predictions(samples, predictions, args.save_predictions)
            logger.info(f"Predictions written to {args.save_predictions}")
        if getattr(args, 'preview_dir', None):
            self.evaluation_service.save_previews(samples, predictions, args.preview_dir,
                                                  limit=getattr(args, 'preview_limit', None))
        return 0

    def ablate(self, args) -> int:
        cfg = build_config(args)
        out_dir = self._out_dir(args)
        seeds = parse_int_list(getattr(args, 'seeds', None), [cfg.train.seed], '--seeds')
        study = getattr(args, 'study', 'variants')
        if study not in STUDIES:
            raise ConfigError(f"--study must be one of {STUDIES}, got {study!r}")
        if study == 'gates':
            gates = args.gates.split(',') if getattr(args, 'gates', None) else list(GATE_PRESETS)
            self.study_service.run_gate_ablation(cfg, gates=[g.strip() for g in gates], seeds=seeds,
                                                 out_dir=out_dir)
        else:
            variants = args.variants.split(',') if getattr(args, 'variants', None) else list(VARIANT_ORDER)
            self.study_service.run_ablation(cfg, variants=[v.strip() for v in variants], seeds=seeds,
                                            out_dir=out_dir)
        return 0

    def noise_study(self, args) -> int:
        cfg = build_config(args)
        out_dir = self._out_dir(args)
        seeds = parse_int_list(getattr(args, 'seeds', None), [cfg.train.seed], '--seeds')
        radii = parse_int_list(getattr(args, 'radii', None), DEFAULT_RADII, '--radii')
        self.study_service.run_noise_study(cfg, radii=radii, seeds=seeds, out_dir=out_dir)
        return 0
