import hashlib
import json
import platform

from pathlib import Path


VERSION = "1.0.0"
CHUNK_SIZE = 1 << 20


def config_hash(configuration: dict) -> str:
    """sha256 of the canonical JSON form of a configuration dictionary.
    :param configuration: nested steering dictionary (RunConfig.to_dict())
    :return
        hex digest
    """
    canonical = json.dumps(configuration, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_hash(path) -> str:
    """sha256 of a file's bytes, read in chunks.
    :param path: file path
    :return
        hex digest
    """
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(CHUNK_SIZE), b""):
            digest.update(chunk)
    return digest.hexdigest()


def provenance_record(configuration: dict,
                      inputs=()) -> dict:
    """Record attached to every report and run log.
    :param configuration: nested steering dictionary
    :param inputs: iterable of input file paths
    :return
        {"version", "python", "config_sha256", "inputs": {path: sha256}}
    """
    return {"version": VERSION,
            "python": platform.python_version(),
            "config_sha256": config_hash(configuration),
            "inputs": {str(Path(p)): file_hash(p) for p in inputs}}
