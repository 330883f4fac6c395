"""Run manifests and deterministic canonicalization of artifacts.

Timing and timestamp fields are metadata: they stay in the artifacts but
are excluded from canonical forms, so determinism hashes and golden-file
comparisons are stable across runs, machines, and parallelism settings.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import IoFailure, MissingFile

# Keys whose values vary run to run without changing results.
VOLATILE_KEYS = frozenset(
    {"generated_at", "created_at", "elapsed_ms", "timestamp", "environment"}
)


def strip_volatile(obj):
    """Recursively drop volatile keys from a JSON-like structure."""
    if isinstance(obj, dict):
        return {k: strip_volatile(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, list):
        return [strip_volatile(v) for v in obj]
    return obj


def canonical_json_bytes(obj) -> bytes:
    canonical = json.dumps(
        strip_volatile(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False
    )
    return canonical.encode("utf-8")


def canonical_file_bytes(path) -> bytes:
    """Canonical form of an artifact file, for hashing and golden comparison."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    raw = path.read_text("utf-8")
    if path.suffix == ".jsonl":
        lines = [
            canonical_json_bytes(json.loads(line)) for line in raw.splitlines() if line.strip()
        ]
        return b"\n".join(lines) + (b"\n" if lines else b"")
    if path.suffix == ".json":
        return canonical_json_bytes(json.loads(raw)) + b"\n"
    return raw.encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_sha256(path) -> str:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    return sha256_hex(path.read_bytes())


def manifest_hash(section: dict) -> str:
    """Hash of a manifest section's stable content."""
    return sha256_hex(canonical_json_bytes(section))


def write_json(path, obj) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        text = json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False)
        path.write_text(text + "\n", "utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    try:
        return json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise IoFailure(f"{path} is not valid JSON: {exc}") from exc


def update_manifest(run_dir, section_name: str, section: dict, environment: dict | None = None) -> dict:
    """Merge one command's section into the run directory's manifest file."""
    run_dir = Path(run_dir)
    path = run_dir / "manifest.json"
    manifest = load_json(path) if path.is_file() else {}
    manifest[section_name] = section
    if environment is not None:
        manifest.setdefault("environment", {}).update(environment)
    write_json(path, manifest)
    return manifest


def read_manifest_hash(run_dir, section_name: str) -> str:
    """Manifest hash previously recorded for a section, or an empty string."""
    path = Path(run_dir) / "manifest.json"
    if not path.is_file():
        return ""
    section = load_json(path).get(section_name) or {}
    return str(section.get("manifest_hash", ""))
