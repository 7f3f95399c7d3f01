import time

from contextlib import contextmanager


def hms_string(sec_elapsed) -> str:
    """Nicely formatted time string.
    :param sec_elapsed time in s
    :return
        h:mm:ss.ss
    """
    h = int(sec_elapsed / (60 * 60))
    m = int((sec_elapsed % (60 * 60)) / 60)
    s = sec_elapsed % 60
    return "{}:{:>02}:{:>05.2f}".format(h, m, s)


@contextmanager
def stage_timer(logger,
                stage: str,
                run_logging=None):
    """Logs the wall time of a pipeline stage and records it in the run log.
    :param logger: logging.Logger used for the message
    :param stage: name of the stage
    :param run_logging: optional RunLogging object, receives the elapsed seconds under "time tracking"
    """
    start = time.perf_counter()
    try:
        yield
    finally:
        elapsed = time.perf_counter() - start
        logger.info(f"Time elapsed for {stage}: {hms_string(elapsed)}")
        if run_logging is not None:
            run_logging.add_entry("time tracking", stage, elapsed)
