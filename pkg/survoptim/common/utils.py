import hashlib
import json
import logging
import math
import os
import tempfile

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLOAT_FORMAT = ".17g"


def make_rng(seed, *keys):
    """
    Build the random generator used by every stochastic routine.

    The contract is PCG64 seeded through a SeedSequence with ``seed`` as entropy
    and ``keys`` as spawn key. Both algorithms are specified by numpy and give the
    same stream on every platform, so identical (seed, keys) means identical draws.

    Args:
        seed (int): Non-negative 64-bit seed.
        *keys (int): Substream identifiers (restart index, tree index, replicate index, ...).

    Returns:
        numpy.random.Generator: Generator for the requested substream.
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(sequence))


def derive_seed(seed, *keys):
    """
    Derive a child 64-bit seed from (seed, keys).

    Args:
        seed (int): Parent seed.
        *keys (int): Substream identifiers.

    Returns:
        int: Child seed.
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def merge_params(user_defaults, params, name):
    """
    Merge user parameters over a task's defaults, warning about unknown keys.

    Args:
        user_defaults (dict): Default parameter values; its keys are the allowed keys.
        params (dict or None): User supplied values.
        name (str): Name used in the warning message.

    Returns:
        dict: New dict with the merged values.
    """
    merged = dict(user_defaults)
    if isinstance(params, dict):
        unknown_keys = set(params.keys()) - set(user_defaults.keys())
        if unknown_keys:
            logger.warning("%s: Unrecognized parameter(s): %s", name, ", ".join(sorted(unknown_keys)))
        for key in user_defaults:
            if key in params:
                merged[key] = params[key]
    return merged


def format_float(value):
    """Render a float with 17 significant digits (``null`` for non-finite values)."""
    value = float(value)
    if not math.isfinite(value):
        return "null"
    return format(value, FLOAT_FORMAT)


def to_builtin(obj):
    """Convert numpy containers and scalars into plain python objects."""
    if isinstance(obj, dict):
        return {str(k): to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_builtin(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_builtin(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def dumps_json(obj, indent=2, _level=0):
    """
    Serialise ``obj`` to JSON text with fixed 17-significant-digit floats.

    Args:
        obj: dict/list/scalar tree, numpy values allowed.
        indent (int): Spaces per nesting level.

    Returns:
        str: JSON document.
    """
    obj = to_builtin(obj) if _level == 0 else obj
    pad = " " * (indent * (_level + 1))
    end_pad = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {dumps_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end_pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps_json(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end_pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, int):
        return str(obj)
    return json.dumps(obj)


def write_text_atomic(path, text):
    """
    Write ``text`` to ``path`` through a temporary file and ``os.replace``.

    Args:
        path (str): Destination file.
        text (str): Content.

    Returns:
        str: The destination path.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def write_json(path, obj):
    """Atomically write ``obj`` as JSON (17-digit floats)."""
    return write_text_atomic(path, dumps_json(obj) + "\n")


def write_frame_csv(path, frame):
    """
    Atomically write a pandas DataFrame as CSV with 17-digit floats.

    Args:
        path (str): Destination file.
        frame (pandas.DataFrame): Table to write (index is not written).

    Returns:
        str: The destination path.
    """
    text = frame.to_csv(index=False, float_format="%" + FLOAT_FORMAT, lineterminator="\n")
    return write_text_atomic(path, text)


def read_json(path):
    """Load a JSON document from ``path``."""
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def file_digest(path):
    """Return the sha256 hex digest of a file."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()
