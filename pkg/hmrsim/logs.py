import logging

FORMAT = "[%(asctime)s %(levelname)s %(name)s]: %(message)s"


def configure_logging(level: str = "INFO") -> None:
    root = logging.getLogger("hmrsim")
    root.setLevel(level.upper())
    if any(getattr(h, "_hmrsim", False) for h in root.handlers):
        return
    ch = logging.StreamHandler()
    ch.setFormatter(logging.Formatter(FORMAT, "%H:%M:%S"))
    ch._hmrsim = True  # type: ignore[attr-defined]
    root.addHandler(ch)
