"""
Graybox NLP - Settings Tests
"""

import logging

from graybox.config import Settings, get_settings
from graybox.ipm import IpmOptions


class TestSettings:
    """Environment-driven defaults."""

    def test_defaults(self, monkeypatch):
        for name in ("GRAYBOX_TOL", "GRAYBOX_MAX_ITER", "GRAYBOX_CONFIDENCE"):
            monkeypatch.delenv(name, raising=False)
        settings = Settings(_env_file=None)
        assert settings.tol == 1e-6
        assert settings.max_iter == 3000
        assert settings.confidence == 0.6
        assert settings.frequency_floor == 59.4

    def test_environment_aliases(self, monkeypatch):
        monkeypatch.setenv("GRAYBOX_TOL", "1e-8")
        monkeypatch.setenv("GRAYBOX_BENCH_WORKERS", "3")
        monkeypatch.setenv("GRAYBOX_LOG_LEVEL", "debug")
        settings = Settings(_env_file=None)
        assert settings.tol == 1e-8
        assert settings.bench_workers == 3
        assert settings.log_level_value == logging.DEBUG

    def test_unknown_log_level(self, monkeypatch):
        monkeypatch.setenv("GRAYBOX_LOG_LEVEL", "chatty")
        assert Settings(_env_file=None).log_level_value == logging.INFO

    def test_cached(self):
        assert get_settings() is get_settings()

    def test_solver_options_follow_settings(self):
        settings = Settings(_env_file=None, GRAYBOX_TOL=1e-7, GRAYBOX_MAX_ITER=40)
        opts = IpmOptions.from_settings(settings)
        assert opts.tol == 1e-7
        assert opts.max_iter == 40
        assert IpmOptions.from_settings(settings, tol=1e-5).tol == 1e-5
