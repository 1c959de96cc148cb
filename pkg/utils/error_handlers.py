"""
Error handlers for the command-line application.
Centralized mapping from domain exceptions to log messages and exit codes.
"""

import functools
import logging
from typing import Callable, List, Tuple, Type

from config import ConfigError
from network.cstr import UnknownVariant
from network.encoder import InputSizeError
from network.gcs import UnknownGateConfig
from services.training_service import TrainingDiverged
from utils.label_groups import UnmappedLabelError
from utils.metrics import EmptyConfusion, LabelOutOfRange
from utils.optim import NonFiniteGradient
from utils.storage import CheckpointFormatError, DatasetFormatError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

# first match wins, so subclasses go before their bases
ERROR_EXIT_CODES: List[Tuple[Type[BaseException], int, str]] = [
    (ConfigError, EXIT_USAGE, "Configuration error"),
    (UnknownGateConfig, EXIT_USAGE, "Unknown gate configuration"),
    (UnknownVariant, EXIT_USAGE, "Unknown variant"),
    (InputSizeError, EXIT_USAGE, "Invalid input size"),
    (DatasetFormatError, EXIT_DATA, "Dataset file error"),
    (CheckpointFormatError, EXIT_DATA, "Checkpoint file error"),
    (UnmappedLabelError, EXIT_DATA, "Label mapping error"),
    (LabelOutOfRange, EXIT_DATA, "Label range error"),
    (EmptyConfusion, EXIT_DATA, "Nothing to evaluate"),
    (FileNotFoundError, EXIT_DATA, "File not found"),
    (TrainingDiverged, EXIT_DIVERGED, "Training diverged"),
    (NonFiniteGradient, EXIT_DIVERGED, "Training diverged"),
]


def exit_code_for(error: BaseException) -> int:
    for error_type, code, _ in ERROR_EXIT_CODES:
        if isinstance(error, error_type):
            return code
    return EXIT_FAILURE


def handle_cli_errors(command: Callable[..., int]) -> Callable[..., int]:
    """
    Wrap a command so domain errors are logged and turned into exit codes.

    Behavior:
    - Known errors are logged as one error line with their category.
    - A divergence also logs where the last good checkpoint was written.
    - Anything else is logged with its traceback and exits with 1.
    """
    @functools.wraps(command)
    def wrapper(*args, **kwargs) -> int:
        try:
            result = command(*args, **kwargs)
            return EXIT_OK if result is None else int(result)
        except Exception as error:
            for error_type, code, title in ERROR_EXIT_CODES:
                if isinstance(error, error_type):
                    logger.error(f"{title}: {error}")
                    if isinstance(error, TrainingDiverged) and error.checkpoint_path:
                        logger.error(f"Last good checkpoint: {error.checkpoint_path}")
                    return code
            logger.exception(f"Unexpected error: {error}")
            return EXIT_FAILURE
    return wrapper
