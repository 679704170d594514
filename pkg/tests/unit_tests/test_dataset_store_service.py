import json
import struct

import numpy as np
import pytest

from src.dataset_store_service import (
    DatasetStoreService, ENCODING_BINARY, ENCODING_JSON, check_format_version, delta_decode, delta_encode,
    load_dataset, save_dataset,
)
from src.exceptions import DatasetFormatError, FormatVersionError
from src.worldgen import gen_poisson_forest

from world_builders import blocks_dataset


def assert_same_worlds(first, second):
    assert len(first) == len(second)
    assert (first.seed, first.generator_name, first.split) == (second.seed, second.generator_name, second.split)
    for a, b in zip(first, second):
        assert np.array_equal(a.world.occupied, b.world.occupied)
        assert a.world.resolution == b.world.resolution
        assert a.nodes.start_id == b.nodes.start_id
        assert [(n.id, n.x, n.y, n.heading) for n in a.nodes] == [(n.id, n.x, n.y, n.heading) for n in b.nodes]


class TestDatasetStoreService:
    """Test cases for world file persistence"""

    def setup_method(self):
        """Set up test fixtures before each test method"""
        self.store = DatasetStoreService()
        self.dataset = blocks_dataset(count=3, seed=5, num_nodes=25, split="train")

    def test_json_round_trip(self, tmp_path):
        """Test that a dataset saved as JSON loads back unchanged"""
        path = str(tmp_path / "train.json")

        assert self.store.save(self.dataset, path) == ENCODING_JSON
        assert_same_worlds(self.store.load(path), self.dataset)

    def test_binary_round_trip(self, tmp_path):
        """Test that a dataset saved in the binary encoding loads back unchanged"""
        dataset = gen_poisson_forest(grid_dims=(40, 48), count=2, seed=3, num_nodes=30, resolution=0.5,
                                     split="test")
        path = str(tmp_path / "nested" / "test.igw")

        assert save_dataset(dataset, path) == ENCODING_BINARY
        assert_same_worlds(load_dataset(path), dataset)

    def test_binary_layout(self, tmp_path):
        """Test the documented byte layout: magic, header, then per world deltas, node records and start id"""
        path = tmp_path / "train.igw"
        self.store.save(self.dataset, str(path), ENCODING_BINARY)
        raw = path.read_bytes()

        assert raw[:4] == b"IGWD"
        (header_len,) = struct.unpack_from("<I", raw, 4)
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
        assert header["count"] == 3 and header["split"] == "train" and header["format_version"] == "1.0"
        assert header["dims"] == [32, 32]

        offset = 8 + header_len
        for entry in self.dataset:
            (n,) = struct.unpack_from("<I", raw, offset)
            deltas = struct.unpack_from(f"<{n}I", raw, offset + 4)
            offset += 4 + 4 * n
            assert np.array_equal(np.cumsum(deltas), entry.world.occupied_indices())

            (m,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            assert m == len(entry.nodes)
            for node in entry.nodes:
                assert struct.unpack_from("<Iddd", raw, offset) == (node.id, node.x, node.y, node.heading)
                offset += 28
            (start_id,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            assert start_id == entry.nodes.start_id
        assert offset == len(raw)

    def test_explicit_encoding_wins_over_suffix(self, tmp_path):
        """Test that a configured encoding overrides the file name"""
        path = tmp_path / "worlds.json"

        DatasetStoreService(ENCODING_BINARY).save(self.dataset, str(path))

        assert path.read_bytes().startswith(b"IGWD")
        assert_same_worlds(self.store.load(str(path)), self.dataset)

    def test_saves_are_byte_identical(self, tmp_path):
        """Test that saving the same dataset twice writes the same bytes"""
        for encoding in (ENCODING_JSON, ENCODING_BINARY):
            self.store.save(self.dataset, str(tmp_path / "a"), encoding)
            self.store.save(self.dataset, str(tmp_path / "b"), encoding)
            assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_truncated_binary_file(self, tmp_path):
        """Test that a truncated binary file is reported, not half-read"""
        path = tmp_path / "train.igw"
        self.store.save(self.dataset, str(path))
        path.write_bytes(path.read_bytes()[:-7])

        with pytest.raises(DatasetFormatError, match="truncated"):
            self.store.load(str(path))

    def test_trailing_bytes(self, tmp_path):
        """Test that extra bytes after the last world are rejected"""
        path = tmp_path / "train.igw"
        self.store.save(self.dataset, str(path))
        path.write_bytes(path.read_bytes() + b"\x00")

        with pytest.raises(DatasetFormatError, match="trailing"):
            self.store.load(str(path))

    def test_newer_major_version_rejected(self, tmp_path):
        """Test that a file from an incompatible writer version is refused"""
        path = tmp_path / "train.json"
        self.store.save(self.dataset, str(path))
        data = json.loads(path.read_text(encoding="utf-8"))
        data["header"]["format_version"] = "2.0"
        path.write_text(json.dumps(data), encoding="utf-8")

        with pytest.raises(FormatVersionError):
            self.store.load(str(path))

    def test_malformed_files(self, tmp_path):
        """Test that garbage and incomplete JSON documents raise format errors"""
        garbage = tmp_path / "garbage.json"
        garbage.write_text("not json", encoding="utf-8")
        partial = tmp_path / "partial.json"
        partial.write_text(json.dumps({"header": {}}), encoding="utf-8")

        for path in (garbage, partial):
            with pytest.raises(DatasetFormatError):
                self.store.load(str(path))

    def test_missing_file(self, tmp_path):
        """Test that a missing file raises an OS error"""
        with pytest.raises(OSError):
            self.store.load(str(tmp_path / "absent.igw"))

    def test_unknown_encoding(self):
        """Test that unknown encodings are rejected up front"""
        with pytest.raises(DatasetFormatError, match="Unknown encoding"):
            DatasetStoreService("xml")


class TestFormatHelpers:
    """Test cases for the encoding helpers"""

    def test_delta_encoding(self):
        """Test that occupied indices are stored as gaps and restored in order"""
        deltas = delta_encode(np.array([7, 2, 30]))

        assert deltas == [2, 5, 23]
        assert delta_decode(deltas).tolist() == [2, 7, 30]

    def test_format_versions(self):
        """Test that older minor versions are readable and newer ones are not"""
        check_format_version("1.0", "1.2", "World file")
        with pytest.raises(FormatVersionError):
            check_format_version("1.3", "1.2", "World file")
        with pytest.raises(DatasetFormatError, match="Malformed"):
            check_format_version("one", "1.0", "World file")
