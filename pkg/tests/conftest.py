import logging

import pytest


@pytest.fixture(autouse=True)
def _restore_kitsim_logger():
    # setup_logging() mutates the global "kitsim" logger; keep tests isolated
    logger = logging.getLogger("kitsim")
    saved = (logger.handlers[:], logger.level, logger.propagate)
    yield
    logger.handlers[:], logger.level, logger.propagate = saved
