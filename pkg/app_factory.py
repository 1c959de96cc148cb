# app_factory.py
import logging
import os
import sys
from typing import Any, Dict, Optional

import numpy as np
from dotenv import load_dotenv

from config import Config, DebugConfig, ENVIRONMENTS, TestConfig

APP_LOGGER = 'cstr'
DEBUG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
PRODUCTION_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


class CSTRApp:
    """
    Configured application: the selected environment, its settings and the logger.

    Attributes:
        env (str): One of production, debug, testing.
        config (dict): Upper-case settings from the selected Config class plus overrides.
        logger (logging.Logger): Application logger.
    """

    def __init__(self, env: str, config: Dict[str, Any]):
        self.env = env
        self.config = config
        self.logger = logging.getLogger(APP_LOGGER)

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.config.get('DTYPE', 'float32'))

    @property
    def output_dir(self) -> str:
        return self.config['OUTPUT_DIR']

    @property
    def show_progress(self) -> bool:
        return bool(self.config.get('SHOW_PROGRESS')) and self.logger.getEffectiveLevel() <= logging.INFO


def configure_logging(env: str, debug: bool = False, level: Optional[str] = None) -> logging.Logger:
    """
    Install a single stderr handler on the root logger.

    Debug and testing log DEBUG with module names; production logs INFO so training
    progress stays visible. ``level`` (CSTR_LOG_LEVEL) overrides either.
    """
    root = logging.getLogger()
    # Remove existing handlers to prevent duplicate logs
    for handler in list(root.handlers):
        root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    enable_debug = env in ('debug', 'testing') or debug
    if enable_debug:
        resolved = logging.DEBUG
        handler.setFormatter(logging.Formatter(DEBUG_FORMAT))
    else:
        resolved = logging.INFO
        handler.setFormatter(logging.Formatter(PRODUCTION_FORMAT))
    if level:
        resolved = logging.getLevelName(level.upper())
        if not isinstance(resolved, int):
            raise ValueError(f"CSTR_LOG_LEVEL={level!r} is not a logging level")
    root.setLevel(resolved)
    handler.setLevel(resolved)
    root.addHandler(handler)

    app_logger = logging.getLogger(APP_LOGGER)
    if enable_debug:
        app_logger.debug(f"Debug logging enabled (CSTR_ENV={env})")
    return app_logger


def create_app(config_override=dict()) -> CSTRApp:
    """
    Creates and configures the application.

    Args:
        config_override (dict, optional): Settings applied over the selected
                                          configuration class. Defaults to empty dict.

    Returns:
        CSTRApp: The configured application.

    Raises:
        ValueError: If CSTR_ENV is not production, debug or testing.
    """
    load_dotenv()  # Load environment variables from .env file if it exists

    env = os.getenv('CSTR_ENV', 'production')
    if env not in ENVIRONMENTS:
        raise ValueError(f"CSTR_ENV must be one of {', '.join(ENVIRONMENTS)}, got {env!r}")

    if env == 'testing':
        config_class = TestConfig
    elif env == 'debug':
        config_class = DebugConfig
    else:
        config_class = Config

    config = config_class.as_dict()
    config.update(config_override)
    configure_logging(env, debug=config.get('DEBUG', False), level=config.get('LOG_LEVEL'))
    return CSTRApp(env, config)

