"""Crash-safe persistence primitives.

Whole documents (rules, snapshots, indexes) go through write-temp-then-rename
so a kill mid-write leaves the previous version intact. The session log is
append-only JSON lines with fsync per record; a truncated final line from a
crash is skipped on reload, reproducing the last fully written state.
"""

from __future__ import annotations

import json
import os
import threading
from datetime import datetime, timezone

from .embedding_index import BusinessRule


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def atomic_write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_write_json(path: str, obj) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n")


def read_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


class JsonlLog:
    """Append-only JSON-lines log."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    def read_all(self) -> list[dict]:
        """Every fully written record; a torn trailing line is ignored."""
        if not os.path.exists(self.path):
            return []
        records = []
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError:
                    continue
        return records


class RuleStore:
    """Global business rules, persisted as one JSON document.

    Deleting deactivates rather than removes, preserving the audit trail.
    """

    def __init__(self, path: str):
        self.path = path
        self._rules: dict[str, BusinessRule] = {}
        self._lock = threading.Lock()
        if os.path.exists(path):
            data = read_json(path)
            for entry in data.get("rules", []):
                rule = BusinessRule.from_dict(entry)
                self._rules[rule.rule_id] = rule

    def add(self, rule: BusinessRule) -> None:
        with self._lock:
            self._rules[rule.rule_id] = rule
            self._save_locked()

    def get(self, rule_id: str) -> BusinessRule | None:
        with self._lock:
            return self._rules.get(rule_id)

    def deactivate(self, rule_id: str) -> BusinessRule | None:
        with self._lock:
            rule = self._rules.get(rule_id)
            if rule is None or not rule.active:
                return None
            rule.active = False
            rule.updated_at = utc_now()
            self._save_locked()
            return rule

    def active_rules(self) -> list[BusinessRule]:
        with self._lock:
            return sorted(
                (r for r in self._rules.values() if r.active), key=lambda r: r.created_at
            )

    def all_rules(self) -> list[BusinessRule]:
        with self._lock:
            return sorted(self._rules.values(), key=lambda r: r.created_at)

    def _save_locked(self) -> None:
        payload = {"rules": [r.to_dict() for r in sorted(self._rules.values(), key=lambda r: r.rule_id)]}
        atomic_write_json(self.path, payload)
