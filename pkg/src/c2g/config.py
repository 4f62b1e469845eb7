"""Line-based `key = value` run configuration with strict validation."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .distill import DistillConfig

__all__ = ["ConfigError", "RunConfig", "parse_config"]


class ConfigError(ValueError):
    """Bad configuration file or value; maps to CLI exit code 1."""


@dataclass
class RunConfig:
    """Everything one experiment run needs; unset keys take the defaults."""

    # distillation hyperparameters
    s: int = 50
    tau: float = 48.0
    alpha: float = 1.0
    lr: float = 0.01
    batch_size: int = 100
    epochs: int = 200
    seed: int = 0
    mechanism: str = "batch"

    # data source
    data: str = "blobs"
    blobs_n: int = 600
    blobs_classes: int = 3
    blobs_d: int = 32
    blobs_spread: float = 0.6
    images_path: str = ""
    labels_path: str = ""
    csv_path: str = ""
    label_column: str = "label"
    test_fraction: float = 0.3

    # model widths and graph construction
    gnn_hidden: int = 256
    head_widths: tuple = (512, 256)
    graph_columns: str = "batch"
    graph_kind: str = "learned"
    graph_threshold: float = 0.5
    teacher_channels: tuple = (4, 4)
    teacher_fc_hidden: int = 12
    teacher_epochs: int = 0  # 0: same as epochs

    # outputs and sensitivity sweep grids
    out_dir: str = "out"
    tau_list: tuple = (1.0, 4.0, 8.0, 16.0, 32.0, 64.0)
    s_list: tuple = (10, 30, 50, 70, 90)

    def distill_config(self) -> DistillConfig:
        return DistillConfig(
            s=self.s,
            tau=self.tau,
            alpha=self.alpha,
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            mechanism=self.mechanism,
        ).validated()

    def validate(self) -> "RunConfig":
        try:
            self.distill_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.data not in ("blobs", "idx", "csv"):
            raise ConfigError(f"data must be blobs, idx, or csv, got {self.data!r}")
        if self.data == "idx" and (not self.images_path or not self.labels_path):
            raise ConfigError("data = idx needs images_path and labels_path")
        if self.data == "csv" and not self.csv_path:
            raise ConfigError("data = csv needs csv_path")
        if not 0 < self.test_fraction < 1:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.blobs_n < self.blobs_classes or self.blobs_classes < 2:
            raise ConfigError("blobs need n >= classes >= 2")
        if self.blobs_d < 1 or self.blobs_spread < 0:
            raise ConfigError("blobs need d >= 1 and spread >= 0")
        if self.gnn_hidden < 1 or self.teacher_fc_hidden < 1:
            raise ConfigError("hidden widths must be positive")
        if self.teacher_epochs < 0:
            raise ConfigError(f"teacher_epochs must be >= 0, got {self.teacher_epochs}")
        if not self.head_widths or any(w < 1 for w in self.head_widths):
            raise ConfigError(f"head_widths must be positive, got {self.head_widths}")
        if not self.teacher_channels or any(c < 1 for c in self.teacher_channels):
            raise ConfigError(f"teacher_channels must be positive, got {self.teacher_channels}")
        if self.graph_columns not in ("batch", "full"):
            raise ConfigError(f"graph_columns must be batch or full, got {self.graph_columns!r}")
        if self.graph_kind not in ("learned", "inner_product", "euclidean"):
            raise ConfigError(
                f"graph_kind must be learned, inner_product, or euclidean, got {self.graph_kind!r}"
            )
        if not self.tau_list or any(t <= 0 for t in self.tau_list):
            raise ConfigError(f"tau_list entries must be positive, got {self.tau_list}")
        if not self.s_list or any(v < 1 for v in self.s_list):
            raise ConfigError(f"s_list entries must be >= 1, got {self.s_list}")
        return self


_INT_KEYS = {
    "s", "batch_size", "epochs", "seed",
    "blobs_n", "blobs_classes", "blobs_d",
    "gnn_hidden", "teacher_fc_hidden", "teacher_epochs",
}
_FLOAT_KEYS = {"tau", "alpha", "lr", "blobs_spread", "test_fraction", "graph_threshold"}
_STR_KEYS = {
    "mechanism", "data", "images_path", "labels_path", "csv_path",
    "label_column", "graph_columns", "graph_kind", "out_dir",
}
_INT_LIST_KEYS = {"head_widths", "teacher_channels", "s_list"}
_FLOAT_LIST_KEYS = {"tau_list"}
_ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _INT_LIST_KEYS | _FLOAT_LIST_KEYS

assert _ALL_KEYS == {f.name for f in fields(RunConfig)}


def _parse_value(key: str, raw: str, line_no: int):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _INT_LIST_KEYS:
            return tuple(int(v.strip()) for v in raw.split(",") if v.strip())
        if key in _FLOAT_LIST_KEYS:
            return tuple(float(v.strip()) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"line {line_no}: cannot parse value {raw!r} for key {key!r}") from None


def parse_config(path) -> RunConfig:
    """Read `key = value` lines; `#` starts a comment; unknown keys rejected."""
    cfg = RunConfig()
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"line {line_no}: expected 'key = value', got {text!r}")
            key, raw = (part.strip() for part in text.split("=", 1))
            if key not in _ALL_KEYS:
                raise ConfigError(f"line {line_no}: unknown key {key!r}")
            setattr(cfg, key, _parse_value(key, raw, line_no))
    return cfg.validate()
