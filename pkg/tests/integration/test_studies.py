"""
Integration tests for the ablation, gate and label-noise studies.
"""

import math
import os

import pandas as pd
import pytest

from config import CLASS_NAMES, ConfigError
from network.cstr import FULL_VARIANT, VARIANT_ORDER
from services.study_service import (
    ABLATION_COLUMNS, FULL_MODEL, GATE_COLUMNS, NO_REG_NO_GATE, NOISE_COLUMNS, SUMMARY_COLUMNS,
    noise_study_models, summarize_noise,
)
from tests.helpers import tiny_config


@pytest.fixture
def quick_cfg():
    """Two iterations are enough to exercise every study path."""
    return tiny_config(optim__max_iters=2, train__eval_interval=2)


class TestAblation:

    def test_variant_chain(self, study_service, quick_cfg, tmp_path) -> None:
        frame = study_service.run_ablation(quick_cfg, out_dir=str(tmp_path))
        assert list(frame.columns) == ABLATION_COLUMNS
        assert list(frame['variant']) == list(VARIANT_ORDER)
        assert frame['parameters'].is_monotonic_increasing
        assert frame['mIoU'].between(0, 1).all()
        written = pd.read_csv(tmp_path / 'ablation.csv')
        assert list(written.columns) == ABLATION_COLUMNS
        assert len(written) == len(VARIANT_ORDER)

    def test_seeds_and_subset(self, study_service, quick_cfg) -> None:
        frame = study_service.run_ablation(quick_cfg, variants=['Baseline', '+GLTR'], seeds=[0, 1])
        assert list(zip(frame['seed'], frame['variant'])) == [
            (0, 'Baseline'), (0, '+GLTR'), (1, 'Baseline'), (1, '+GLTR')]

    def test_unknown_variant_fails_before_training(self, study_service, quick_cfg) -> None:
        with pytest.raises(ValueError):
            study_service.run_ablation(quick_cfg, variants=['Baseline', 'Oracle'])

    def test_data_is_shared_per_seed(self, study_service, quick_cfg) -> None:
        assert study_service.data_for(quick_cfg, 0) is study_service.data_for(quick_cfg, 0)
        assert study_service.data_for(quick_cfg, 0) is not study_service.data_for(quick_cfg, 1)

    def test_studies_need_evaluation_data(self, study_service) -> None:
        cfg = tiny_config(optim__max_iters=2, data__eval_count=0)
        with pytest.raises(ConfigError):
            study_service.run_ablation(cfg, variants=['Baseline'])


class TestGateStudy:

    def test_presets_and_unit_gate(self, study_service, quick_cfg, tmp_path) -> None:
        frame = study_service.run_gate_ablation(quick_cfg, gates=['ca', '3-way CA+TB+T0', 'unit'],
                                                out_dir=str(tmp_path))
        assert list(frame.columns) == GATE_COLUMNS
        assert list(frame['gate']) == ['1-way CA', '3-way CA+TB+T0', 'unit']
        counts = dict(zip(frame['gate'], frame['parameters']))
        assert counts['unit'] < counts['1-way CA'] < counts['3-way CA+TB+T0']
        assert os.path.exists(tmp_path / 'gates.csv')

    def test_unknown_gate(self, study_service, quick_cfg) -> None:
        with pytest.raises(ValueError):
            study_service.run_gate_ablation(quick_cfg, gates=['4-way'])


class TestNoiseStudy:

    def test_models(self, quick_cfg) -> None:
        models = noise_study_models(quick_cfg)
        assert list(models) == [FULL_MODEL, NO_REG_NO_GATE]
        assert models[FULL_MODEL].model.variant == FULL_VARIANT
        assert models[NO_REG_NO_GATE].loss.lambda_band == 0.0
        assert models[NO_REG_NO_GATE].model.gate == 'unit'
        assert quick_cfg.loss.lambda_band == 0.4

    def test_runs_and_summary(self, study_service, quick_cfg, tmp_path) -> None:
        frame, summary = study_service.run_noise_study(quick_cfg, radii=[0, 1], out_dir=str(tmp_path))
        assert list(frame.columns) == NOISE_COLUMNS
        assert list(zip(frame['model'], frame['r'])) == [
            (FULL_MODEL, 0), (NO_REG_NO_GATE, 0), (FULL_MODEL, 1), (NO_REG_NO_GATE, 1)]
        assert list(summary.columns) == SUMMARY_COLUMNS
        assert (summary[summary['r'] == 0]['delta_mIoU'] == 0).all()
        assert os.path.exists(tmp_path / 'noise.csv')
        assert os.path.exists(tmp_path / 'noise_summary.csv')

    def test_clean_radius_matches_plain_training(self, study_service, training_service, quick_cfg) -> None:
        """r = 0 trains on the clean labels, so it reproduces a plain run."""
        frame, _ = study_service.run_noise_study(quick_cfg, radii=[0], models={'plain': quick_cfg})
        train, held_out = study_service.data_for(quick_cfg, 0)
        plain = training_service.train(quick_cfg.copy(train__seed=0), train, held_out)
        assert frame['mIoU'].iloc[0] == pytest.approx(plain.report.miou)

    def test_negative_radius(self, study_service, quick_cfg) -> None:
        with pytest.raises(ConfigError):
            study_service.run_noise_study(quick_cfg, radii=[0, -1])


class TestSummarizeNoise:

    def test_mean_and_delta(self) -> None:
        frame = pd.DataFrame([
            {'model': 'a', 'r': 0, 'seed': 0, 'mIoU': 0.5},
            {'model': 'a', 'r': 0, 'seed': 1, 'mIoU': 0.7},
            {'model': 'a', 'r': 3, 'seed': 0, 'mIoU': 0.4},
            {'model': 'b', 'r': 3, 'seed': 0, 'mIoU': 0.3},
        ])
        summary = summarize_noise(frame).set_index(['model', 'r'])
        assert summary.loc[('a', 0), 'runs'] == 2
        assert summary.loc[('a', 0), 'mIoU'] == pytest.approx(0.6)
        assert summary.loc[('a', 3), 'delta_mIoU'] == pytest.approx(-0.2)
        assert math.isnan(summary.loc[('b', 3), 'delta_mIoU'])

    def test_empty(self) -> None:
        assert list(summarize_noise(pd.DataFrame()).columns) == SUMMARY_COLUMNS


def test_class_columns_present(study_service, quick_cfg) -> None:
    frame = study_service.run_ablation(quick_cfg, variants=['Baseline'])
    assert set(CLASS_NAMES) <= set(frame.columns)
