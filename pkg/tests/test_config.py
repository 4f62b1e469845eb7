import pytest

from c2g.config import ConfigError, RunConfig, parse_config


def write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


class TestParseConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        cfg = parse_config(write(tmp_path, ""))
        assert cfg.s == 50
        assert cfg.tau == 48.0
        assert cfg.alpha == 1.0
        assert cfg.lr == 0.01
        assert cfg.batch_size == 100
        assert cfg.epochs == 200
        assert cfg.mechanism == "batch"
        # s=50 is already below the default batch budget; the clip engages at
        # desk-scale batch sizes
        assert cfg.distill_config().s == 50
        assert parse_config(write(tmp_path, "batch_size = 20")).distill_config().s == 19

    def test_comments_and_blank_lines(self, tmp_path):
        cfg = parse_config(write(tmp_path, "# full line\n\ntau = 8  # trailing\n"))
        assert cfg.tau == 8.0

    def test_zero_temperature_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="tau"):
            parse_config(write(tmp_path, "tau = 0\n"))

    def test_mechanism_mapping(self, tmp_path):
        assert parse_config(write(tmp_path, "mechanism = batch\n")).mechanism == "batch"
        assert parse_config(write(tmp_path, "mechanism = one\n")).mechanism == "one"
        with pytest.raises(ConfigError, match="mechanism"):
            parse_config(write(tmp_path, "mechanism = both\n"))

    def test_unknown_key_reports_line(self, tmp_path):
        with pytest.raises(ConfigError, match="line 2.*mystery"):
            parse_config(write(tmp_path, "tau = 4\nmystery = 1\n"))

    def test_unparsable_value_reports_line(self, tmp_path):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config(write(tmp_path, "epochs = soon\n"))

    def test_missing_equals_reports_line(self, tmp_path):
        with pytest.raises(ConfigError, match="line 3"):
            parse_config(write(tmp_path, "\n\njust words\n"))

    def test_list_values(self, tmp_path):
        cfg = parse_config(write(tmp_path, "tau_list = 1, 2, 4\ns_list = 5,10\nhead_widths = 32,16\n"))
        assert cfg.tau_list == (1.0, 2.0, 4.0)
        assert cfg.s_list == (5, 10)
        assert cfg.head_widths == (32, 16)

    def test_data_source_requirements(self, tmp_path):
        with pytest.raises(ConfigError, match="images_path"):
            parse_config(write(tmp_path, "data = idx\n"))
        with pytest.raises(ConfigError, match="csv_path"):
            parse_config(write(tmp_path, "data = csv\n"))

    def test_validation_catches_bad_values(self, tmp_path):
        for text, pattern in [
            ("alpha = -1\n", "alpha"),
            ("lr = 0\n", "lr"),
            ("batch_size = 1\n", "batch_size"),
            ("epochs = 0\n", "epochs"),
            ("s = 0\n", "s"),
            ("test_fraction = 1.5\n", "test_fraction"),
            ("graph_kind = laplacian\n", "graph_kind"),
        ]:
            with pytest.raises(ConfigError, match=pattern):
                parse_config(write(tmp_path, text))

    def test_defaults_cover_reference_sweep_grids(self):
        cfg = RunConfig()
        assert cfg.tau_list == (1.0, 4.0, 8.0, 16.0, 32.0, 64.0)
        assert cfg.s_list == (10, 30, 50, 70, 90)
