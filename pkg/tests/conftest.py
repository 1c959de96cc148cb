# conftest.py
import os

import numpy as np
import pytest

from app_factory import create_app
from services.dataset_service import DatasetService
from services.evaluation_service import EvaluationService
from services.study_service import StudyService
from services.training_service import TrainingService
from tests.helpers import tiny_config


@pytest.fixture
def rng() -> np.random.Generator:
    """Fixed generator so every test sees the same draws."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Small full-variant configuration on 32x32 scenes."""
    return tiny_config()


@pytest.fixture
def app(tmp_path):
    """
    Testing application writing into a per-test output directory.
    pytest-env sets CSTR_ENV=testing, so the config is double precision.
    """
    os.environ['CSTR_ENV'] = 'testing'
    return create_app(config_override={'OUTPUT_DIR': str(tmp_path / 'runs'), 'LOG_LEVEL': 'WARNING'})


@pytest.fixture
def dataset_service() -> DatasetService:
    return DatasetService(num_workers=0)


@pytest.fixture
def evaluation_service() -> EvaluationService:
    return EvaluationService(dtype=np.float64, show_progress=False)


@pytest.fixture
def training_service(dataset_service, evaluation_service) -> TrainingService:
    return TrainingService(dataset_service, evaluation_service, dtype=np.float64, show_progress=False)


@pytest.fixture
def study_service(dataset_service, training_service, evaluation_service) -> StudyService:
    return StudyService(dataset_service, training_service, evaluation_service)


@pytest.fixture
def tiny_split(dataset_service, tiny_cfg):
    """(train, eval) synthetic samples for ``tiny_cfg``."""
    return dataset_service.train_eval_split(tiny_cfg)
