"""
Canonical JSON Codecs
=====================
Stable, versioned JSON for everything that crosses a process boundary:
transcripts, unveil messages, Bob's sealed record, Alice's notebook,
verdicts and the honest-quantile cache.

Keys are sorted, separators are compact and every float is written as a
17-significant-digit decimal string, so equal objects give equal bytes.
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .config import ProtocolConfig, config_hash
from .errors import ConfigError
from .protocol import (
    AlicePrivateState,
    Announcement,
    CommitTranscript,
    SealedSlitRecord,
    UnveilEntry,
    UnveilMessage,
)
from .verifier import CheckName, CheckResult, QuantileTable, RejectionReason, Verdict
from .wavepacket import Slit, SlitChoice


SEALED_SCHEMA = "qbc-sealed/1"
ALICE_SCHEMA = "qbc-alice/1"


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def canonical_dumps(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def _expect_schema(data: Dict[str, Any], schema: str) -> None:
    found = data.get("schema")
    if found != schema:
        raise ConfigError(f"expected schema '{schema}', found '{found}'")


# ---- transcript / unveil -------------------------------------------------

def transcript_to_dict(t: CommitTranscript) -> Dict[str, Any]:
    return {
        "schema": t.schema,
        "session_id": t.session_id,
        "seed": t.seed,
        "config_hash": t.config_hash,
        "n_trials": t.n_trials,
        "commit_end": fmt(t.commit_end),
        "announcements": [
            {"trial_id": a.trial_id, "detected": a.detected, "time": fmt(a.time)}
            for a in t.announcements
        ],
    }


def transcript_from_dict(data: Dict[str, Any]) -> CommitTranscript:
    _expect_schema(data, CommitTranscript.schema)
    return CommitTranscript(
        session_id=int(data["session_id"]),
        seed=int(data["seed"]),
        config_hash=data["config_hash"],
        n_trials=int(data["n_trials"]),
        announcements=tuple(
            Announcement(int(a["trial_id"]), bool(a["detected"]), float(a["time"]))
            for a in data["announcements"]
        ),
        commit_end=float(data["commit_end"]),
    )


def unveil_to_dict(u: UnveilMessage) -> Dict[str, Any]:
    entries = []
    for e in u.entries:
        item: Dict[str, Any] = {"trial_id": e.trial_id}
        if e.slit is not None:
            item["slit"] = e.slit.value
        if e.position is not None:
            item["position"] = fmt(e.position)
        entries.append(item)
    return {"schema": u.schema, "session_id": u.session_id, "b": u.b, "entries": entries}


def unveil_from_dict(data: Dict[str, Any]) -> UnveilMessage:
    _expect_schema(data, UnveilMessage.schema)
    entries = tuple(
        UnveilEntry(
            int(e["trial_id"]),
            slit=Slit(e["slit"]) if "slit" in e else None,
            position=float(e["position"]) if "position" in e else None,
        )
        for e in data["entries"]
    )
    return UnveilMessage(int(data["session_id"]), int(data["b"]), entries)


# ---- private records -----------------------------------------------------

def sealed_to_dict(s: SealedSlitRecord) -> Dict[str, Any]:
    return {"schema": SEALED_SCHEMA, "session_id": s.session_id, "choices": [c.value for c in s.choices]}


def sealed_from_dict(data: Dict[str, Any]) -> SealedSlitRecord:
    _expect_schema(data, SEALED_SCHEMA)
    return SealedSlitRecord(int(data["session_id"]), tuple(SlitChoice(c) for c in data["choices"]))


def alice_to_dict(state: AlicePrivateState) -> Dict[str, Any]:
    def encode(datum):
        return datum.value if isinstance(datum, Slit) else fmt(datum)

    return {
        "schema": ALICE_SCHEMA,
        "session_id": state.session_id,
        "b": state.b,
        "announced": list(state.announced),
        "data": {str(k): encode(v) for k, v in state.data.items()},
    }


def alice_from_dict(data: Dict[str, Any]) -> AlicePrivateState:
    _expect_schema(data, ALICE_SCHEMA)
    b = int(data["b"])

    def decode(value: str):
        return Slit(value) if b == 0 else float(value)

    return AlicePrivateState(
        session_id=int(data["session_id"]),
        b=b,
        announced=tuple(int(i) for i in data["announced"]),
        data={int(k): decode(v) for k, v in data["data"].items()},
    )


# ---- verdicts ------------------------------------------------------------

def _opt(x: Optional[float]) -> Optional[str]:
    return None if x is None else fmt(x)


def verdict_to_dict(v: Verdict) -> Dict[str, Any]:
    return {
        "schema": v.schema,
        "session_id": v.session_id,
        "b": v.b,
        "accept": v.accept,
        "rejection_reason": v.rejection_reason.value if v.rejection_reason else None,
        "tests": [
            {
                "name": t.name.value,
                "passed": t.passed,
                "statistic": fmt(t.statistic),
                "p_value": _opt(t.p_value),
                "threshold": _opt(t.threshold),
                "exact": t.exact,
                "skipped": t.skipped,
                "detail": t.detail,
            }
            for t in v.tests
        ],
    }


def verdict_from_dict(data: Dict[str, Any]) -> Verdict:
    _expect_schema(data, Verdict.schema)

    def num(x):
        return None if x is None else float(x)

    tests = tuple(
        CheckResult(
            CheckName(t["name"]), bool(t["passed"]), float(t["statistic"]),
            num(t["p_value"]), num(t["threshold"]), bool(t["exact"]), bool(t["skipped"]), t["detail"],
        )
        for t in data["tests"]
    )
    reason = data.get("rejection_reason")
    return Verdict(
        int(data["session_id"]), int(data["b"]), bool(data["accept"]), tests,
        RejectionReason(reason) if reason else None,
    )


# ---- quantile cache ------------------------------------------------------

def quantiles_to_dict(q: QuantileTable) -> Dict[str, Any]:
    return {
        "schema": q.schema,
        "config_hash": q.config_hash,
        "seed": q.seed,
        "sessions": q.sessions,
        "samples": [fmt(z) for z in q.samples],
    }


def quantiles_from_dict(data: Dict[str, Any]) -> QuantileTable:
    _expect_schema(data, QuantileTable.schema)
    return QuantileTable(
        config_hash=data["config_hash"],
        seed=int(data["seed"]),
        sessions=int(data["sessions"]),
        samples=np.array([float(z) for z in data["samples"]]),
    )


def quantile_cache_path(cache_dir: Union[str, Path], config: ProtocolConfig) -> Path:
    return Path(cache_dir) / f"quantiles-{config_hash(config)[:16]}.json"


def load_quantiles(config: ProtocolConfig, cache_dir: Union[str, Path]) -> Optional[QuantileTable]:
    """Cached table for this config, or None if absent or stale."""
    path = quantile_cache_path(cache_dir, config)
    if not path.is_file():
        return None
    table = quantiles_from_dict(read_json(path))
    return table if table.config_hash == config_hash(config) else None


def save_quantiles(table: QuantileTable, config: ProtocolConfig, cache_dir: Union[str, Path]) -> Path:
    return write_json(quantile_cache_path(cache_dir, config), quantiles_to_dict(table))


# ---- files ---------------------------------------------------------------

def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_dumps(payload) + "\n", encoding="utf-8")
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
