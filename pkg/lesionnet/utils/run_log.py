"""Line-delimited JSON event log for training runs."""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

log = logging.getLogger(__name__)

EVENTS = (
    "start",
    "validation",
    "lr_change",
    "loss_switch",
    "checkpoint",
    "early_stop",
    "finish",
)


class RunLog:
    """Append-only event log; keeps the events in memory as well."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self.events: List[Dict[str, Any]] = []
        if self.path is not None:
            os.makedirs(self.path.parent, exist_ok=True)
            # A rerun with --force starts from an empty log.
            self.path.write_text("", encoding="utf-8")

    def emit(self, event: str, **fields: Any) -> Dict[str, Any]:
        if event not in EVENTS:
            raise ValueError(f"unknown run-log event {event!r}")
        entry = {"event": event, **fields}
        self.events.append(entry)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
        log.debug("run-log %s: %r", event, fields)
        return entry

    def of(self, event: str) -> List[Dict[str, Any]]:
        return [e for e in self.events if e["event"] == event]

    @staticmethod
    def read(path: Union[str, Path]) -> List[Dict[str, Any]]:
        with open(path, "r", encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]
