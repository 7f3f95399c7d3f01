"""Reading and writing of TMEF1 containers.

A file is a sequence of records. Each record is a 4-byte little-endian header length, the
UTF-8 JSON header and the payload: channel planes, little-endian, row-major, concatenated.
The format is described in docs/tmef1_format.md.
"""
import json
import logging
import struct

import numpy as np

from dataclasses import dataclass, field
from pathlib import Path

from raster.containers import InstanceMap, LogitStack, check_rgb_tile
from utility.errors import ContainerError


logger = logging.getLogger(__name__)

MAGIC = "TMEF1"
DTYPES = {"f32": np.dtype("<f4"),
          "u8": np.dtype("u1"),
          "u32": np.dtype("<u4")}
HEADER_LENGTH = struct.Struct("<I")
RGB_CHANNELS = ["red", "green", "blue"]


@dataclass
class StackRecord:
    """One record of a TMEF1 file. `data` has shape (channels, height, width)."""
    name: str
    channels: list
    data: np.ndarray
    mpp: float | None = None
    halo: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dtype_name(self) -> str:
        for name, dtype in DTYPES.items():
            if self.data.dtype == dtype:
                return name
        raise ContainerError(f"record {self.name!r}: unsupported dtype {self.data.dtype}")

    def header(self) -> dict:
        header = {"magic": MAGIC,
                  "name": self.name,
                  "width": int(self.data.shape[2]),
                  "height": int(self.data.shape[1]),
                  "dtype": self.dtype_name,
                  "channels": list(self.channels)}
        if self.mpp is not None:
            header["mpp"] = float(self.mpp)
        if self.halo is not None:
            header["halo"] = int(self.halo)
        if self.meta:
            header["meta"] = self.meta
        return header


def save_stack(records,
               path) -> Path:
    """Writes one or several records to a TMEF1 file.
    :param records: StackRecord or list of StackRecord
    :param path: output file
    :return
        path of the written file
    """
    if isinstance(records, StackRecord):
        records = [records]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        for record in records:
            if record.data.ndim != 3 or record.data.shape[0] != len(record.channels):
                raise ContainerError(f"record {record.name!r}: data of shape {record.data.shape} "
                                     f"does not match {len(record.channels)} channels")
            header = json.dumps(record.header(), sort_keys=True).encode("utf-8")
            f.write(HEADER_LENGTH.pack(len(header)))
            f.write(header)
            f.write(np.ascontiguousarray(record.data, dtype=DTYPES[record.dtype_name]).tobytes(order="C"))
    logger.debug(f"Wrote {len(records)} record(s) to {path}")
    return path


def _parse_header(raw: bytes,
                  path) -> dict:
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise ContainerError(f"{path}: header is not valid JSON ({error})") from error
    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise ContainerError(f"{path}: magic mismatch, expected {MAGIC!r}")
    if header.get("dtype") not in DTYPES:
        raise ContainerError(f"{path}: unknown dtype {header.get('dtype')!r}, expected one of {list(DTYPES)}")
    for key in ("width", "height"):
        if not isinstance(header.get(key), int) or header[key] < 1:
            raise ContainerError(f"{path}: header field {key!r} must be a positive integer")
    if not isinstance(header.get("channels"), list) or not header["channels"]:
        raise ContainerError(f"{path}: header field 'channels' must be a non-empty list")
    return header


def load_stack(path) -> list[StackRecord]:
    """Reads all records of a TMEF1 file.
    :param path: input file
    :return
        list of StackRecord objects in file order
    """
    raw = Path(path).read_bytes()
    records = []
    offset = 0
    while offset < len(raw):
        if offset + HEADER_LENGTH.size > len(raw):
            raise ContainerError(f"{path}: truncated header length at byte {offset}")
        (length,) = HEADER_LENGTH.unpack_from(raw, offset)
        offset += HEADER_LENGTH.size
        if offset + length > len(raw):
            raise ContainerError(f"{path}: truncated header, expected {length} bytes, "
                                 f"got {len(raw) - offset}")
        header = _parse_header(raw[offset:offset + length], path)
        offset += length

        dtype = DTYPES[header["dtype"]]
        n_channels = len(header["channels"])
        expected = header["width"] * header["height"] * n_channels * dtype.itemsize
        actual = min(expected, len(raw) - offset)
        if actual < expected:
            raise ContainerError(f"{path}: truncated payload in record {header.get('name')!r}, "
                                 f"expected {expected} bytes, got {actual}")
        data = np.frombuffer(raw, dtype=dtype, count=expected // dtype.itemsize, offset=offset)
        data = data.reshape(n_channels, header["height"], header["width"]).copy()
        offset += expected
        if header["dtype"] == "f32" and not np.all(np.isfinite(data)):
            raise ContainerError(f"{path}: record {header.get('name')!r} contains NaN or Inf values")

        records.append(StackRecord(name=header.get("name", f"record_{len(records)}"),
                                   channels=header["channels"],
                                   data=data,
                                   mpp=header.get("mpp"),
                                   halo=header.get("halo"),
                                   meta=header.get("meta", {})))
    if not records:
        raise ContainerError(f"{path}: file contains no records")
    return records


def find_record(records: list[StackRecord],
                name: str | None = None) -> StackRecord:
    """Record with the given name; without a name the file has to hold exactly one record."""
    if name is None:
        if len(records) != 1:
            raise ContainerError(f"expected a single record, found {[r.name for r in records]}")
        return records[0]
    for record in records:
        if record.name == name:
            return record
    raise ContainerError(f"record {name!r} not found, file has {[r.name for r in records]}")


def rgb_to_record(pixels: np.ndarray,
                  name: str = "he",
                  **kwargs) -> StackRecord:
    pixels = check_rgb_tile(pixels)
    return StackRecord(name, RGB_CHANNELS, np.moveaxis(pixels, 2, 0).astype(np.uint8), **kwargs)


def record_to_rgb(record: StackRecord) -> np.ndarray:
    if record.dtype_name != "u8" or len(record.channels) != 3:
        raise ContainerError(f"record {record.name!r} is not an 8-bit RGB tile")
    return np.ascontiguousarray(np.moveaxis(record.data, 0, 2))


def logits_to_record(stack: LogitStack,
                     name: str = "logits",
                     **kwargs) -> StackRecord:
    return StackRecord(name, stack.channels, stack.planes.astype(DTYPES["f32"]), **kwargs)


def record_to_logits(record: StackRecord,
                     taxonomy=None) -> LogitStack:
    """LogitStack of a f32 record; channel names are resolved to canonical names when a taxonomy is given.
    :param record: StackRecord
    :param taxonomy: optional Taxonomy, raises UnknownClassError for names outside its vocabulary
    :return
        LogitStack object
    """
    if record.dtype_name != "f32":
        raise ContainerError(f"record {record.name!r} holds {record.dtype_name}, logits need f32")
    channels = record.channels
    if taxonomy is not None:
        channels = [taxonomy.name_of(taxonomy.resolve(c)) for c in channels]
    return LogitStack(channels, record.data)


def labels_to_record(labels: np.ndarray,
                     name: str = "labels",
                     **kwargs) -> StackRecord:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ContainerError(f"label raster {name!r} does not fit into u8")
    return StackRecord(name, ["class_id"], labels.astype(np.uint8)[None], **kwargs)


def record_to_labels(record: StackRecord) -> np.ndarray:
    if record.dtype_name != "u8" or len(record.channels) != 1:
        raise ContainerError(f"record {record.name!r} is not a single-channel u8 label raster")
    return record.data[0].copy()


def instances_to_record(instances: InstanceMap,
                        name: str = "nuclei",
                        classes: dict | None = None,
                        **kwargs) -> StackRecord:
    """u32 record of an InstanceMap; teacher types and optional final classes go to `meta`."""
    meta = dict(kwargs.pop("meta", {}))
    meta["teacher_types"] = {str(i): t for i, t in sorted(instances.teacher_types().items())}
    if classes is not None:
        meta["classes"] = {str(i): int(c) for i, c in sorted(classes.items())}
    return StackRecord(name, ["instance_id"], instances.ids.astype(DTYPES["u32"])[None], meta=meta, **kwargs)


def record_to_instances(record: StackRecord) -> tuple[InstanceMap, dict]:
    """InstanceMap and optional per-instance classes of a u32 record.
    :return
        (InstanceMap, {instance id: class id})
    """
    if record.dtype_name != "u32" or len(record.channels) != 1:
        raise ContainerError(f"record {record.name!r} is not a single-channel u32 instance raster")
    teacher_types = {int(i): t for i, t in record.meta.get("teacher_types", {}).items()}
    classes = {int(i): int(c) for i, c in record.meta.get("classes", {}).items()}
    return InstanceMap.from_labels(record.data[0], teacher_types), classes
