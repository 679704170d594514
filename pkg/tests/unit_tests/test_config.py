import logging
import os
from unittest.mock import patch

import pytest

from src.config import get_settings, setup_logging
from src.exceptions import InvalidConfigError


class TestSettings:
    """Test cases for environment-driven settings"""

    def setup_method(self):
        """Set up test fixtures before each test method"""
        # Keep a developer's .env out of the picture
        self.dotenv_patcher = patch('src.config.settings.load_dotenv')
        self.dotenv_patcher.start()

    def teardown_method(self):
        """Clean up after each test method"""
        self.dotenv_patcher.stop()

    def test_values_from_environment(self):
        """Test that IGI_* variables populate the settings"""
        env = {"IGI_OUTPUT_DIR": "/tmp/igi", "IGI_THREADS": "3", "IGI_LOG_LEVEL": "DEBUG",
               "IGI_LOG_FILE": "/tmp/igi/run.log", "IGI_SEED": "42"}
        with patch.dict(os.environ, env, clear=True):
            settings = get_settings()

        assert settings.output_dir == "/tmp/igi"
        assert settings.threads == 3
        assert settings.log_level == "DEBUG"
        assert settings.log_file == "/tmp/igi/run.log"
        assert settings.seed == 42

    def test_defaults(self):
        """Test the defaults when nothing is set"""
        with patch.dict(os.environ, {}, clear=True):
            settings = get_settings()

        assert settings.output_dir == "runs"
        assert settings.threads >= 1
        assert settings.log_level == "INFO"
        assert settings.log_file is None
        assert settings.seed == 0

    def test_invalid_values(self):
        """Test that unparseable or out-of-range numbers are configuration errors"""
        for env in ({"IGI_THREADS": "many"}, {"IGI_THREADS": "0"}, {"IGI_SEED": "-4"}):
            with patch.dict(os.environ, env, clear=True):
                with pytest.raises(InvalidConfigError):
                    get_settings()


class TestLoggingConfig:
    """Test cases for logging setup"""

    def teardown_method(self):
        """Clean up after each test method"""
        root = logging.getLogger()
        for handler in root.handlers:
            handler.close()
        root.handlers.clear()

    def test_handlers_and_level(self, tmp_path):
        """Test that logging goes to stderr and the optional file at the given level"""
        log_file = tmp_path / "logs" / "run.log"

        setup_logging(level="warning", log_file=str(log_file))
        logging.getLogger("src.test").warning("disk almost full")

        root = logging.getLogger()
        assert root.level == logging.WARNING
        assert len(root.handlers) == 2
        assert "disk almost full" in log_file.read_text()

    def test_repeated_setup_does_not_duplicate_handlers(self):
        """Test that calling setup twice leaves a single console handler"""
        setup_logging()
        setup_logging()

        assert len(logging.getLogger().handlers) == 1

    def test_invalid_level(self):
        """Test that an unknown level name is rejected"""
        with pytest.raises(InvalidConfigError, match="Invalid log level"):
            setup_logging(level="LOUD")
