import datetime
import hashlib
import json
import logging
import os
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)

GENESIS_HASH = "0" * 64
ENTRY_KINDS = ("estimate", "train", "test")


def _entry_hash(content: Dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(content, sort_keys=True).encode()).hexdigest()


class RunLedger:
    """
    Append-only, hash-chained record of completed pipeline phases in one output directory.
    """
    def __init__(self, ledger_file: str):
        self.ledger_file = ledger_file
        self._entries: List[Dict[str, Any]] = []
        self.load()

    @property
    def entries(self) -> List[Dict[str, Any]]:
        """Returns a copy of the ledger entries."""
        return list(self._entries)

    @property
    def head(self) -> str:
        return self._entries[-1]["hash"] if self._entries else GENESIS_HASH

    def load(self):
        try:
            with open(self.ledger_file, "r") as f:
                self._entries = json.load(f)
        except FileNotFoundError:
            self._entries = []

    def _save(self):
        tmp = f"{self.ledger_file}.tmp"
        with open(tmp, "w") as f:
            json.dump(self._entries, f, indent=2, sort_keys=True)
        os.replace(tmp, self.ledger_file)

    def append(self, kind: str, data: Dict[str, Any], timestamp: Optional[str] = None) -> Dict[str, Any]:
        if kind not in ENTRY_KINDS:
            raise ValueError(f"unknown ledger entry kind {kind!r}")
        content = {
            "index": len(self._entries) + 1,
            "timestamp": timestamp or datetime.datetime.now().isoformat(),
            "kind": kind,
            "data": data,
            "prev_hash": self.head,
        }
        entry = {**content, "hash": _entry_hash(content)}
        self._entries.append(entry)
        self._save()
        return entry

    def validate_chain(self) -> Dict[str, Any]:
        """Re-check indices, hashes and prev-hash links of every entry."""
        report = {"is_valid": True, "length": len(self._entries), "errors": []}
        prev_hash = GENESIS_HASH
        for i, entry in enumerate(self._entries):
            label = entry.get("index", i + 1)
            if entry.get("index") != i + 1:
                report["errors"].append(f"Entry {label}: index out of sequence")
            if entry.get("prev_hash") != prev_hash:
                report["errors"].append(f"Entry {label}: Invalid prev_hash")
            content = {k: v for k, v in entry.items() if k != "hash"}
            if _entry_hash(content) != entry.get("hash"):
                report["errors"].append(f"Entry {label}: Hash mismatch")
            prev_hash = entry.get("hash")
        report["is_valid"] = not report["errors"]
        return report

    def latest(self, kind: str, **match: Any) -> Optional[Dict[str, Any]]:
        """Most recent entry of `kind` whose data contains every `match` item."""
        for entry in reversed(self._entries):
            if entry["kind"] == kind and all(entry["data"].get(k) == v for k, v in match.items()):
                return entry
        return None
