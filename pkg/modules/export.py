# modules/export.py
"""
JSON / CSV output helpers shared by the CLI.
"""

import dataclasses
import json
import math
import sys
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd


def sanitize(obj):
    """Plain-Python copy of ``obj``; NaN and infinities become None."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if hasattr(obj, "_asdict"):
        return sanitize(obj._asdict())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return sanitize({f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)})
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, pd.DataFrame):
        return sanitize(obj.to_dict(orient="records"))
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return sanitize({"re": obj.real, "im": obj.imag})
        return sanitize(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return None if math.isnan(value) or math.isinf(value) else value
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": sanitize(obj.real), "im": sanitize(obj.imag)}
    return obj


def dumps(obj) -> str:
    return json.dumps(sanitize(obj), sort_keys=True, indent=2)


def write_output(payload, out=None, fmt: str = "json", frame: pd.DataFrame = None):
    """
    Write ``frame`` as CSV when ``fmt == "csv"`` and a frame is available,
    otherwise ``payload`` as JSON; to ``out`` or standard output.
    """
    if fmt == "csv" and frame is not None:
        text = frame.to_csv(index=False)
    else:
        text = dumps(payload) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
