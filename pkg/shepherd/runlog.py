# shepherd/runlog.py
from __future__ import annotations

import json
from datetime import datetime, timezone
from typing import Any, Dict

import numpy as np

from . import settings


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def append_run_log(event: str, **payload: Any) -> None:
    """
    Append one JSON record to the run log (SHEPHERD_RUN_LOG). Never raises.
    """
    path = settings.run_log_path()
    if not path:
        return
    entry: Dict[str, Any] = {"ts": now_iso(), "event": event, **payload}
    try:
        with open(path, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry, ensure_ascii=False, default=to_jsonable) + "\n")
    except Exception:
        pass


def to_jsonable(o: Any) -> Any:
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)
