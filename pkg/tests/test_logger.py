# tests/test_logger.py

from logger import AppLogger, silent_logger


def test_levels_and_prefixes():
    """Debug messages appear only at the Debug level; the others always do."""
    messages = []
    logger = AppLogger(messages.append, "Normal")
    logger.info("plain")
    logger.debug("hidden")
    logger.warning("careful")
    logger.error("broken")
    logger.fatal("stopped")
    assert messages == [
        "plain",
        "[WARNING] careful",
        "[ERROR] broken",
        "\n--- [FATAL] stopped ---",
    ]
    logger.level = "Debug"
    logger.debug("shown")
    assert messages[-1] == "[DEBUG] shown"


def test_level_from_environment(monkeypatch):
    monkeypatch.setenv("IZMPC_LOG_LEVEL", "debug")
    assert AppLogger.from_env(print).level == "Debug"
    monkeypatch.setenv("IZMPC_LOG_LEVEL", "verbose")
    assert AppLogger.from_env(print).level == "Normal"
    monkeypatch.delenv("IZMPC_LOG_LEVEL")
    assert AppLogger.from_env(print).level == "Normal"


def test_silent_logger_drops_everything(capsys):
    logger = silent_logger()
    logger.info("quiet")
    logger.fatal("still quiet")
    captured = capsys.readouterr()
    assert captured.out == "" and captured.err == ""


def test_every_level_method_is_documented():
    for name in ("info", "debug", "warning", "error", "fatal"):
        assert getattr(AppLogger, name).__doc__, name
