import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import CLASS_NAMES, ConfigError, TrainConfig
from network.cstr import FULL_VARIANT, VARIANT_ORDER, resolve_variant
from network.gcs import GATE_PRESETS, UNIT_GATE, resolve_gate
from services.evaluation_service import METRIC_COLUMNS, write_csv
from utils.label_noise import perturb_samples

logger = logging.getLogger(__name__)

Sample = Tuple[np.ndarray, np.ndarray]

ABLATION_COLUMNS = ['variant', 'seed', 'parameters'] + METRIC_COLUMNS + list(CLASS_NAMES)
GATE_COLUMNS = ['gate', 'seed', 'parameters'] + METRIC_COLUMNS + list(CLASS_NAMES)
NOISE_COLUMNS = ['model', 'r', 'seed', 'mIoU', 'bIoU', 'F1_boundary', 'aAcc'] + list(CLASS_NAMES)
SUMMARY_COLUMNS = ['model', 'r', 'runs', 'mIoU', 'delta_mIoU']

DEFAULT_RADII = (0, 1, 3, 5)
FULL_MODEL = 'full'
NO_REG_NO_GATE = 'no-reg-no-gate'


def noise_study_models(cfg: TrainConfig) -> Dict[str, TrainConfig]:
    """The full model and its comparison without band regularizer and learned gate."""
    full = cfg.copy(model__variant=FULL_VARIANT)
    return {
        FULL_MODEL: full,
        NO_REG_NO_GATE: full.copy(loss__lambda_band=0.0, model__gate=UNIT_GATE),
    }


def summarize_noise(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Mean mIoU over seeds per (model, r) and its change from the clean run.

    ``delta_mIoU`` is NaN for a model trained without an ``r = 0`` run.
    """
    if frame.empty:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    grouped = (frame.groupby(['model', 'r'], sort=False)
               .agg(runs=('seed', 'count'), mIoU=('mIoU', 'mean'))
               .reset_index())
    clean = grouped[grouped['r'] == 0].set_index('model')['mIoU']
    grouped['delta_mIoU'] = grouped['mIoU'] - grouped['model'].map(clean)
    return grouped[SUMMARY_COLUMNS]


class StudyService:
    """
    Service layer for the incremental ablation, the gate study and the label-noise study.

    Every run of one seed sees the same generated scenes and the same batch order,
    so rows differ only by the configuration under study.
    """
    def __init__(self, dataset_service, training_service, evaluation_service):
        self.dataset_service = dataset_service
        self.training_service = training_service
        self.evaluation_service = evaluation_service
        self._data_cache: Dict[Tuple, Tuple[List[Sample], List[Sample]]] = {}

    def data_for(self, cfg: TrainConfig, seed: int) -> Tuple[List[Sample], List[Sample]]:
        key = (cfg.scene(seed), cfg.data.train_count, cfg.data.eval_count)
        if key not in self._data_cache:
            self._data_cache[key] = self.dataset_service.train_eval_split(cfg, seed)
        return self._data_cache[key]

    def _run(self, cfg: TrainConfig, seed: int, run_name: str,
             train_samples: Optional[Sequence[Sample]] = None):
        cfg = cfg.copy(train__seed=seed)
        train, held_out = self.data_for(cfg, seed)
        if not held_out:
            raise ConfigError("studies need data.eval_count >= 1")
        return self.training_service.train(cfg, train if train_samples is None else train_samples,
                                           held_out, run_name=run_name)

    def run_ablation(self, cfg: TrainConfig, variants: Sequence[str] = VARIANT_ORDER,
                     seeds: Sequence[int] = (0,), out_dir: Optional[str] = None) -> pd.DataFrame:
        """
        Train each variant once per seed.

        returns: DataFrame with one row per (variant, seed); written to
                 ``ablation.csv`` under ``out_dir`` when given.
        """
        for name in variants:
            resolve_variant(name)
        rows = []
        for seed in seeds:
            for name in variants:
                result = self._run(cfg.copy(model__variant=name), seed, f"{name}-s{seed}")
                row = self.evaluation_service.report_row(result.report, variant=name, seed=seed,
                                                          parameters=result.model.parameter_count())
                rows.append(row)
                logger.info(f"Ablation {name} seed {seed}: mIoU={row['mIoU']:.4f} bIoU={row['bIoU']:.4f} "
                            f"F1={row['F1']:.4f} aAcc={row['aAcc']:.4f}")
        return self._emit(rows, ABLATION_COLUMNS, out_dir, 'ablation.csv')

    def run_gate_ablation(self, cfg: TrainConfig, gates: Sequence[str] = tuple(GATE_PRESETS),
                          seeds: Sequence[int] = (0,), out_dir: Optional[str] = None) -> pd.DataFrame:
        """
        Train the full model once per gate preset and seed.

        returns: DataFrame with one row per (gate, seed); ``gates.csv`` under ``out_dir``.
        """
        names = []
        for gate in gates:
            preset = resolve_gate(gate)
            names.append(preset.name if preset is not None else UNIT_GATE)
        rows = []
        for seed in seeds:
            for name in names:
                run_cfg = cfg.copy(model__variant=FULL_VARIANT, model__gate=name)
                result = self._run(run_cfg, seed, f"gate[{name}]-s{seed}")
                rows.append(self.evaluation_service.report_row(result.report, gate=name, seed=seed,
                                                               parameters=result.model.parameter_count()))
                logger.info(f"Gate {name} seed {seed}: mIoU={rows[-1]['mIoU']:.4f}")
        return self._emit(rows, GATE_COLUMNS, out_dir, 'gates.csv')

    def run_noise_study(self, cfg: TrainConfig, radii: Sequence[int] = DEFAULT_RADII,
                        seeds: Sequence[int] = (0,), out_dir: Optional[str] = None,
                        models: Optional[Dict[str, TrainConfig]] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """
        Train on labels perturbed with radius ``r``; always evaluate on clean labels.

        Args:
            cfg: Base configuration; ``data.flip_prob`` drives the perturbation.
            radii: Non-negative boundary jitter radii; ``0`` trains on the clean labels.
            models: Named configurations to compare (default: :func:`noise_study_models`).

        returns: (runs frame, summary frame); written to ``noise.csv`` and
                 ``noise_summary.csv`` under ``out_dir``.

        Raises:
            ConfigError: If a radius is negative.
        """
        if any(int(r) < 0 for r in radii):
            raise ConfigError(f"noise radii must be non-negative, got {list(radii)}")
        models = models if models is not None else noise_study_models(cfg)
        rows = []
        for seed in seeds:
            train, _ = self.data_for(cfg, seed)
            for r in radii:
                noisy = perturb_samples(train, int(r), seed, flip_prob=cfg.data.flip_prob)
                for model_name, model_cfg in models.items():
                    result = self._run(model_cfg, seed, f"{model_name}-r{r}-s{seed}", train_samples=noisy)
                    row = {'model': model_name, 'r': int(r), 'seed': seed}
                    metrics = result.report.as_row(CLASS_NAMES)
                    metrics['F1_boundary'] = metrics.pop('F1')
                    row.update(metrics)
                    rows.append(row)
                    logger.info(f"Noise {model_name} r={r} seed {seed}: mIoU={row['mIoU']:.4f} "
                                f"F1_boundary={row['F1_boundary']:.4f}")
        frame = self._emit(rows, NOISE_COLUMNS, out_dir, 'noise.csv')
        summary = summarize_noise(frame)
        for _, item in summary.iterrows():
            if item['r'] != 0 and not pd.isna(item['delta_mIoU']):
                logger.info(f"{item['model']}: mIoU clean -> r={item['r']} changes by {item['delta_mIoU']:+.4f}")
        if out_dir:
            write_csv(summary.to_dict('records'), os.path.join(out_dir, 'noise_summary.csv'), SUMMARY_COLUMNS)
        return frame, summary

    @staticmethod
    def _emit(rows: List[Dict], columns: List[str], out_dir: Optional[str], filename: str) -> pd.DataFrame:
        if out_dir:
            return write_csv(rows, os.path.join(out_dir, filename), columns)
        return pd.DataFrame(rows, columns=columns)
