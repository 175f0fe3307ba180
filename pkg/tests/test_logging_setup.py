from loguru import logger

from execution.config import settings
from execution.logging_setup import configure_logging


def test_stderr_level_defaults_to_settings(capsys, monkeypatch):
    monkeypatch.setattr(settings, "log_level", "error")
    configure_logging(log_file="")
    logger.warning("quiet warning")
    logger.error("loud error")

    err = capsys.readouterr().err
    assert "loud error" in err
    assert "quiet warning" not in err


def test_explicit_level_wins(capsys, monkeypatch):
    monkeypatch.setattr(settings, "log_level", "ERROR")
    configure_logging("DEBUG", "")
    logger.debug("detail")
    assert "detail" in capsys.readouterr().err
