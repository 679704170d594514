from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from src.config import get_logger
from src.constants import WORLD_FORMAT_VERSION, WORLD_FILE_MAGIC
from src.exceptions import DatasetFormatError, FormatVersionError, InfoGatherError
from src.models import WorldMap, Node, NodeSet, WorldEntry, WorldDataset, validate_nodes

# Set up logger for this module
logger = get_logger(__name__)

ENCODING_JSON = "json"
ENCODING_BINARY = "binary"
ENCODINGS = (ENCODING_JSON, ENCODING_BINARY)

NODE_RECORD = np.dtype([("id", "<u4"), ("x", "<f8"), ("y", "<f8"), ("heading", "<f8")])
U32 = struct.Struct("<I")


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def check_format_version(found: str, supported: str, what: str) -> None:
    """
    Same major version required; files from an older or equal minor version are readable.

    Raises:
        FormatVersionError: If the file cannot be read by this version
    """
    try:
        found_major, found_minor = (int(part) for part in str(found).split("."))
        major, minor = (int(part) for part in supported.split("."))
    except ValueError:
        raise DatasetFormatError(f"Malformed {what} format_version '{found}'")
    if found_major != major or found_minor > minor:
        raise FormatVersionError(f"{what} format_version {found} is not readable by reader version {supported}")


def delta_encode(indices: np.ndarray) -> List[int]:
    ordered = np.sort(np.asarray(indices, dtype=np.int64))
    return np.diff(ordered, prepend=0).astype(np.int64).tolist()


def delta_decode(deltas) -> np.ndarray:
    return np.cumsum(np.asarray(deltas, dtype=np.int64))


class DatasetStoreService:
    """Service class for reading and writing world dataset files"""

    def __init__(self, encoding: Optional[str] = None):
        """
        Initialize the store.

        Args:
            encoding: Default encoding for save(); None picks json for *.json paths and binary otherwise
        """
        if encoding is not None and encoding not in ENCODINGS:
            raise DatasetFormatError(f"Unknown encoding '{encoding}'. Valid encodings are: {', '.join(ENCODINGS)}")
        self.encoding = encoding

    def header_for(self, dataset: WorldDataset) -> dict:
        height, width = dataset.dims
        return {
            "format_version": WORLD_FORMAT_VERSION,
            "generator_name": dataset.generator_name,
            "seed": int(dataset.seed),
            "resolution": dataset.resolution,
            "dims": [height, width],
            "count": len(dataset),
            "split": dataset.split,
            "num_nodes": len(dataset.entries[0].nodes),
        }

    def save(self, dataset: WorldDataset, path: str, encoding: Optional[str] = None) -> str:
        """
        Write a dataset to disk.

        Args:
            dataset: Dataset to write
            path: Destination file; parent directories are created
            encoding: json or binary

        Returns:
            The encoding used
        """
        encoding = encoding or self.encoding or (ENCODING_JSON if str(path).endswith(".json") else ENCODING_BINARY)
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        header = self.header_for(dataset)

        if encoding == ENCODING_JSON:
            worlds = [
                {
                    "occupied": delta_encode(entry.world.occupied_indices()),
                    "nodes": [[n.id, n.x, n.y, n.heading] for n in entry.nodes],
                    "start_id": entry.nodes.start_id,
                }
                for entry in dataset
            ]
            target.write_text(canonical_json({"header": header, "worlds": worlds}) + "\n", encoding="utf-8")
        elif encoding == ENCODING_BINARY:
            target.write_bytes(self._pack(header, dataset))
        else:
            raise DatasetFormatError(f"Unknown encoding '{encoding}'. Valid encodings are: {', '.join(ENCODINGS)}")

        logger.info(f"Saved {len(dataset)} worlds to {target} ({encoding})")
        return encoding

    def _pack(self, header: dict, dataset: WorldDataset) -> bytes:
        header_bytes = canonical_json(header).encode("utf-8")
        parts = [WORLD_FILE_MAGIC, U32.pack(len(header_bytes)), header_bytes]
        for entry in dataset:
            deltas = np.asarray(delta_encode(entry.world.occupied_indices()), dtype="<u4")
            parts.append(U32.pack(deltas.size))
            parts.append(deltas.tobytes())
            records = np.zeros(len(entry.nodes), dtype=NODE_RECORD)
            records["id"] = [n.id for n in entry.nodes]
            records["x"] = [n.x for n in entry.nodes]
            records["y"] = [n.y for n in entry.nodes]
            records["heading"] = [n.heading for n in entry.nodes]
            parts.append(U32.pack(records.size))
            parts.append(records.tobytes())
            parts.append(U32.pack(entry.nodes.start_id))
        return b"".join(parts)

    def load(self, path: str) -> WorldDataset:
        """
        Read a dataset written by save() in either encoding.

        Raises:
            OSError: If the file cannot be read
            DatasetFormatError: If the file is truncated or malformed
            FormatVersionError: If the format version is not readable
        """
        raw = Path(path).read_bytes()
        try:
            if raw.startswith(WORLD_FILE_MAGIC):
                header, worlds = self._unpack(raw)
            else:
                header, worlds = self._parse_json(raw)
            dataset = self._build(header, worlds)
        except DatasetFormatError:
            raise
        except InfoGatherError as e:
            raise DatasetFormatError(f"Error in {path}: {e}")
        except (KeyError, TypeError, ValueError, IndexError, AttributeError) as e:
            raise DatasetFormatError(f"Error in {path}: malformed record ({e})")

        logger.info(f"Loaded {len(dataset)} worlds from {path}")
        return dataset

    def _parse_json(self, raw: bytes) -> Tuple[dict, list]:
        try:
            data = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DatasetFormatError(f"World file is not valid JSON: {e}")
        if not isinstance(data, dict) or "header" not in data or "worlds" not in data:
            raise DatasetFormatError("World file must contain 'header' and 'worlds'")
        header = data["header"]
        check_format_version(header.get("format_version"), WORLD_FORMAT_VERSION, "World file")
        worlds = [
            (
                delta_decode(w["occupied"]),
                [(int(n[0]), float(n[1]), float(n[2]), float(n[3])) for n in w["nodes"]],
                int(w["start_id"]),
            )
            for w in data["worlds"]
        ]
        return header, worlds

    def _unpack(self, raw: bytes) -> Tuple[dict, list]:
        offset = len(WORLD_FILE_MAGIC)

        def take(size: int) -> bytes:
            nonlocal offset
            if offset + size > len(raw):
                raise DatasetFormatError(f"World file truncated at byte {offset} (needed {size} more)")
            chunk = raw[offset:offset + size]
            offset += size
            return chunk

        (header_len,) = U32.unpack(take(U32.size))
        try:
            header = json.loads(take(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DatasetFormatError(f"World file header is not valid JSON: {e}")
        check_format_version(header.get("format_version"), WORLD_FORMAT_VERSION, "World file")

        worlds = []
        for _ in range(int(header["count"])):
            (n_occ,) = U32.unpack(take(U32.size))
            deltas = np.frombuffer(take(4 * n_occ), dtype="<u4")
            (n_nodes,) = U32.unpack(take(U32.size))
            records = np.frombuffer(take(NODE_RECORD.itemsize * n_nodes), dtype=NODE_RECORD)
            (start_id,) = U32.unpack(take(U32.size))
            nodes = [(int(r["id"]), float(r["x"]), float(r["y"]), float(r["heading"])) for r in records]
            worlds.append((delta_decode(deltas), nodes, int(start_id)))
        if offset != len(raw):
            raise DatasetFormatError(f"World file has {len(raw) - offset} trailing bytes")
        return header, worlds

    def _build(self, header: dict, worlds: list) -> WorldDataset:
        height, width = (int(d) for d in header["dims"])
        if len(worlds) != int(header["count"]):
            raise DatasetFormatError(f"Header count {header['count']} does not match {len(worlds)} world records")
        entries = []
        for occupied_cells, node_rows, start_id in worlds:
            grid = np.zeros(height * width, dtype=bool)
            if occupied_cells.size and (occupied_cells.min() < 0 or occupied_cells.max() >= grid.size):
                raise DatasetFormatError("Occupied cell index outside the grid")
            grid[occupied_cells] = True
            world = WorldMap(occupied=grid.reshape(height, width), resolution=float(header["resolution"]))
            nodes = NodeSet(nodes=tuple(Node(id=i, x=x, y=y, heading=h) for i, x, y, h in node_rows),
                            start_id=start_id)
            validate_nodes(world, nodes)
            entries.append(WorldEntry(world=world, nodes=nodes))
        return WorldDataset(entries=tuple(entries), seed=int(header["seed"]),
                            generator_name=str(header["generator_name"]), split=str(header["split"]))


def save_dataset(dataset: WorldDataset, path: str, encoding: Optional[str] = None) -> str:
    return DatasetStoreService().save(dataset, path, encoding)


def load_dataset(path: str) -> WorldDataset:
    return DatasetStoreService().load(path)
