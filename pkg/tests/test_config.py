"""
tests/test_config.py — Tests for grid parsing, the flat config format and check
verdicts.
"""

import math

import pytest
from pydantic import ValidationError

from config import RunConfig, parse_config_text, parse_grid
from errors import UsageError
from reporting import (RunManifest, check_at_most, check_close, check_decrease, check_flag, check_statistical,
                       checks_frame)


class TestParseGrid:
    def test_range(self):
        grid = parse_grid("-8:1:8")
        assert len(grid) == 17
        assert grid[0] == -8.0 and grid[-1] == 8.0

    def test_single_point(self):
        assert parse_grid("0:1:0") == [0.0]

    def test_list(self):
        assert parse_grid("1, 4,9") == [1.0, 4.0, 9.0]

    def test_fractional_step(self):
        assert parse_grid("0:0.5:1") == [0.0, 0.5, 1.0]

    @pytest.mark.parametrize("text", ["1:0:2", "2:1:1", "a,b", "1:2"])
    def test_rejects(self, text):
        with pytest.raises(UsageError):
            parse_grid(text)


class TestConfigText:
    def test_dashes_and_comments(self):
        values = parse_config_text("n-max = 4   # deep\n\nseed_spec = lognormal\n")
        assert values == {"n_max": "4", "seed_spec": "lognormal"}

    def test_duplicate_key(self):
        with pytest.raises(UsageError):
            parse_config_text("b = 2\nb = 3\n")

    def test_missing_equals(self):
        with pytest.raises(UsageError):
            parse_config_text("b 2\n")

    def test_round_trip(self, tmp_path):
        config = RunConfig(command="gmc", b=3, r=-1.25, check="kahane", allow_flagged=True, out=tmp_path)
        assert RunConfig.from_text(config.to_text()) == config

    def test_unset_mode_is_omitted(self, tmp_path):
        config = RunConfig(command="gmc", out=tmp_path)
        assert "mode =" not in config.to_text()
        assert "stabilization = mean-variance" in config.to_text()
        assert RunConfig.from_text(config.to_text()) == config
        chosen = RunConfig(command="gmc", mode="asymptotic", stabilization="none", out=tmp_path)
        assert RunConfig.from_text(chosen.to_text()) == chosen

    def test_overrides_win_and_none_is_ignored(self):
        config = RunConfig.from_text("b = 3\nr = 2\n", r=-1.0, b=None)
        assert config.b == 3
        assert config.r == -1.0

    def test_unknown_key(self):
        with pytest.raises(ValidationError):
            RunConfig.from_text("colour = blue\n")

    def test_bad_grid(self):
        with pytest.raises(ValidationError):
            RunConfig(grid="8:1:-8")

    def test_bounds(self):
        with pytest.raises(ValidationError):
            RunConfig(b=1)
        with pytest.raises(ValidationError):
            RunConfig(seed_spec="uniform")
        with pytest.raises(ValidationError):
            RunConfig(stabilization="variance")
        with pytest.raises(ValidationError):
            RunConfig(mode="continuum")


class TestVerdicts:
    def test_close(self):
        assert check_close("x", 1.0, 1.0 + 1e-13, 1e-12).verdict == "pass"
        assert check_close("x", 2.0, 2.1, 0.01, relative=True).verdict == "fail"
        assert check_close("x", 1.0, math.nan, 1.0).verdict == "fail"

    def test_statistical(self):
        assert check_statistical("x", 1.0, 1.03, 0.01).verdict == "pass"
        assert check_statistical("x", 1.0, 1.05, 0.01).verdict == "fail"
        assert check_statistical("x", 1.0, 1.05, 0.01, soft=True).verdict == "flagged"
        assert check_statistical("x", 1.0, 1.0, 0.5).verdict == "flagged"

    def test_at_most(self):
        assert check_at_most("x", 1.1, 1.0, se=0.05).verdict == "pass"
        assert check_at_most("x", 1.3, 1.0, se=0.05).verdict == "fail"

    def test_decrease(self):
        assert check_decrease("x", 1.0, 0.01, 0.9, 0.01).verdict == "pass"
        assert check_decrease("x", 1.0, 0.01, 0.96, 0.01).verdict == "fail"
        assert check_decrease("x", 0.9, 0.01, 1.0, 0.01).verdict == "fail"
        assert check_decrease("x", 1.0, 0.01, math.inf, 0.01).verdict == "fail"

    def test_manifest_exit_codes(self):
        manifest = RunManifest(command="rfunc", config={})
        manifest.add(check_flag("a", True))
        assert manifest.exit_code() == 0
        manifest.add(check_flag("b", False, soft=True))
        assert manifest.exit_code() == 1
        assert manifest.exit_code(allow_flagged=True) == 0
        manifest.add(check_flag("c", False))
        assert manifest.exit_code(allow_flagged=True) == 1
        assert manifest.counts() == {"pass": 1, "fail": 1, "flagged": 1}

    def test_checks_frame_columns(self):
        frame = checks_frame([check_flag("a", True)])
        assert list(frame.columns) == ["name", "target", "estimate", "se", "tolerance", "verdict", "detail"]
