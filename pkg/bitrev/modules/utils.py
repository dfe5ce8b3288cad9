import logging
import re

from bitrev.exceptions import BitrevError

LOG_FORMAT = "[%(stage)s] [%(levelname)s] %(message)s"

_TILE_RE = re.compile(r"^[A-Z]+_X(\d+)Y(\d+)$")


class StageTagFilter(logging.Filter):
    """Adds the upper-case stage tag (bitrev.reverse -> REVERSE) to each record."""

    def filter(self, record):
        name = record.name
        if name.startswith("bitrev."):
            record.stage = name.split(".", 1)[1].split(".")[0].upper()
        else:
            record.stage = name.upper()
        return True


def setup_logging(verbose=False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        force=True,
    )
    for handler in logging.getLogger().handlers:
        handler.addFilter(StageTagFilter())


def parse_hex_bytes(text, length=16):
    """Parse a hex string such as a 128-bit key into exactly `length` bytes."""
    cleaned = text.strip().lower().removeprefix("0x")
    try:
        data = bytes.fromhex(cleaned)
    except ValueError as e:
        raise BitrevError(f"not a hex string: {text!r}") from e
    if len(data) != length:
        raise BitrevError(f"expected {length} bytes, got {len(data)}: {text!r}")
    return data


def tile_name(prefix, x, y):
    return f"{prefix}_X{x}Y{y}"


def parse_tile_name(name):
    """Return the (x, y) coordinate encoded in a tile token, or None."""
    m = _TILE_RE.match(name)
    if not m:
        return None
    return int(m.group(1)), int(m.group(2))
