import argparse
import logging
import os
from unittest.mock import patch

import pytest

from src.constants import EXIT_OK, EXIT_RUNTIME_ERROR, EXIT_USAGE_ERROR, PACKAGE_VERSION
from src.dataset_store_service import load_dataset, save_dataset
from src.main import main, parse_dims

from world_builders import blocks_dataset


class TestMain:
    """Test cases for the command-line entry point"""

    def setup_method(self):
        """Set up test fixtures before each test method"""
        self.env_patcher = patch.dict(os.environ, {"IGI_THREADS": "1", "IGI_LOG_LEVEL": "WARNING"}, clear=True)
        self.env_patcher.start()
        self.dotenv_patcher = patch('src.config.settings.load_dotenv')
        self.dotenv_patcher.start()

    def teardown_method(self):
        """Clean up after each test method"""
        self.dotenv_patcher.stop()
        self.env_patcher.stop()
        logging.getLogger().handlers.clear()

    def test_worldgen_creates_output_directory(self, tmp_path):
        """Test that worldgen writes every split into a directory it creates"""
        output_dir = tmp_path / "runs" / "worlds"

        code = main(["worldgen", "--generator", "distributed-blocks", "--count", "2", "--test-count", "1",
                     "--grid", "32x32", "--nodes", "20", "--encoding", "json", "--output-dir", str(output_dir)])

        assert code == EXIT_OK
        assert sorted(p.name for p in output_dir.iterdir()) == ["test.json", "train.json", "validation.json"]
        assert len(load_dataset(str(output_dir / "test.json"))) == 1
        assert load_dataset(str(output_dir / "train.json")).split == "train"

    def test_unknown_generator_is_a_usage_error(self):
        """Test that argparse rejects an unknown generator with exit code 2"""
        with pytest.raises(SystemExit) as excinfo:
            main(["worldgen", "--generator", "mountains"])

        assert excinfo.value.code == EXIT_USAGE_ERROR

    def test_invalid_grid_is_a_usage_error(self, tmp_path):
        """Test that a grid too small for the generator exits with code 2"""
        code = main(["worldgen", "--generator", "parallel-lines", "--count", "1", "--grid", "8x8",
                     "--output-dir", str(tmp_path)])

        assert code == EXIT_USAGE_ERROR

    def test_value_algorithm_without_budget(self, tmp_path):
        """Test that a budgeted algorithm on the unconstrained problem exits with code 2"""
        code = main(["train", "--algo", "qval-agg", "--train", str(tmp_path / "train.igw"),
                     "--val", str(tmp_path / "validation.igw")])

        assert code == EXIT_USAGE_ERROR

    def test_missing_world_file(self, tmp_path):
        """Test that a missing world file is a runtime error"""
        code = main(["train", "--algo", "reward-agg", "--train", str(tmp_path / "absent.igw"),
                     "--val", str(tmp_path / "absent.igw"), "--output-dir", str(tmp_path)])

        assert code == EXIT_RUNTIME_ERROR

    def test_missing_policy_file(self, tmp_path):
        """Test that evaluating a policy file that does not exist is a runtime error"""
        test_file = tmp_path / "test.igw"
        save_dataset(blocks_dataset(count=1, seed=2, num_nodes=20), str(test_file))

        code = main(["eval", "--test", str(test_file), "--policy", str(tmp_path / "policy.json"),
                     "--output-dir", str(tmp_path / "eval")])

        assert code == EXIT_RUNTIME_ERROR
        assert not (tmp_path / "eval").exists()

    def test_malformed_config_file(self, tmp_path):
        """Test that a training config that is not JSON is a usage error"""
        config = tmp_path / "train.json"
        config.write_text("{algorithm: RewardAgg", encoding="utf-8")

        code = main(["train", "--config", str(config), "--train", "a.igw", "--val", "b.igw"])

        assert code == EXIT_USAGE_ERROR

    def test_invalid_thread_count(self):
        """Test that a non-positive thread count is rejected before any work"""
        assert main(["--threads", "0", "verify", "--suite", "memorization"]) == EXIT_USAGE_ERROR

    def test_small_verify_run(self, capsys):
        """Test that a reduced verification run passes and prints its table on stdout"""
        code = main(["verify", "--suite", "memorization", "--suite", "submodularity", "--scale", "0.05"])

        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert out.startswith("suite")
        assert "memorization" in out and "PASS" in out

    def test_version(self, capsys):
        """Test that --version prints the package and format versions"""
        with pytest.raises(SystemExit) as excinfo:
            main(["--version"])

        assert excinfo.value.code == 0
        out = capsys.readouterr().out
        assert PACKAGE_VERSION in out
        assert "feature schema" in out


class TestParseDims:
    """Test cases for grid dimension parsing"""

    def test_parse_dims(self):
        """Test HxW parsing in either case"""
        assert parse_dims("64x48") == (64, 48)
        assert parse_dims("32X32") == (32, 32)

    def test_bad_dims(self):
        """Test that malformed dims raise an argparse type error"""
        with pytest.raises(argparse.ArgumentTypeError):
            parse_dims("64")
