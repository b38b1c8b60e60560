"""Service configuration: cells, fault profiles, notification target.

Config files are YAML (JSON works too). Every validation error names the
offending field so `serve` can fail fast with a usable message.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .core.types import Scene
from .engine import EngineConfig
from .safety import DEFAULT_BOUNDS, NotificationConfig, WorkspaceBounds
from .simcell.faults import FaultProfile
from .tasks import build_default_tasks


class ConfigError(Exception):
    def __init__(self, fieldname: str, message: str):
        self.fieldname = fieldname
        super().__init__(f"{fieldname}: {message}")


@dataclass
class CellConfig:
    cell_id: str
    task_ids: tuple[str, ...]
    fault: FaultProfile = field(default_factory=FaultProfile)
    bounds: WorkspaceBounds = DEFAULT_BOUNDS
    cooldown_period_s: float = 1200.0
    cooldown_interval_s: float = 21600.0
    seed: int = 0


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8023
    report_root: str = "./reports"
    seed: int = 0
    default_num_trials: int = 50
    submitter_pending_limit: int = 1
    cells: list[CellConfig] = field(default_factory=list)
    notification: NotificationConfig = field(default_factory=NotificationConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    console_dir: str | None = None
    event_buffer_size: int = 256


def default_service_config(seed: int = 0) -> ServiceConfig:
    return ServiceConfig(
        seed=seed,
        cells=[
            CellConfig("drawer-cell", ("open_drawer", "close_drawer"), seed=seed + 1),
            CellConfig("sink-cell", ("put_in_sink", "put_in_basket"), seed=seed + 2),
            CellConfig("cloth-cell", ("fold_cloth",), seed=seed + 3),
        ],
    )


def _require(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise ConfigError(f"{where}.{key}", "missing required key")
    value = obj[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}", f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _optional(obj: dict, key: str, kind, default, where: str):
    if key not in obj:
        return default
    return _require(obj, key, kind, where)


def _parse_fault(obj: dict, where: str) -> FaultProfile:
    kwargs = {}
    for name in (
        "motor_failure_prob_per_step",
        "reset_failure_prob",
        "object_escape_prob_per_episode",
        "reboot_failure_prob",
        "effort_fault_factor",
    ):
        if name in obj:
            value = obj[name]
            if not isinstance(value, (int, float)):
                raise ConfigError(f"{where}.{name}", "expected a number")
            kwargs[name] = float(value)
    if "classifier_confusion" in obj:
        rows = obj["classifier_confusion"]
        if not isinstance(rows, list):
            raise ConfigError(f"{where}.classifier_confusion", "expected a 3x3 list of lists")
        kwargs["classifier_confusion"] = tuple(tuple(float(v) for v in row) for row in rows)
    try:
        return FaultProfile(**kwargs)
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


def _parse_bounds(obj: dict, where: str) -> WorkspaceBounds:
    lo = _require(obj, "min_xyz", list, where)
    hi = _require(obj, "max_xyz", list, where)
    if len(lo) != 3 or len(hi) != 3:
        raise ConfigError(where, "min_xyz and max_xyz must each have 3 entries")
    kwargs = {"min_xyz": tuple(float(v) for v in lo), "max_xyz": tuple(float(v) for v in hi)}
    if "effort_limit" in obj:
        kwargs["effort_limit"] = tuple(float(v) for v in obj["effort_limit"])
    try:
        return WorkspaceBounds(**kwargs)
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


def load_config(path: str | Path) -> ServiceConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"not valid YAML: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")

    cfg = ServiceConfig()
    cfg.host = _optional(raw, "host", str, cfg.host, "config")
    cfg.port = _optional(raw, "port", int, cfg.port, "config")
    cfg.report_root = _optional(raw, "report_root", str, cfg.report_root, "config")
    cfg.seed = _optional(raw, "seed", int, cfg.seed, "config")
    cfg.default_num_trials = _optional(raw, "default_num_trials", int, cfg.default_num_trials, "config")
    if cfg.default_num_trials < 1:
        raise ConfigError("config.default_num_trials", "must be >= 1")
    cfg.submitter_pending_limit = _optional(
        raw, "submitter_pending_limit", int, cfg.submitter_pending_limit, "config"
    )
    cfg.console_dir = _optional(raw, "console_dir", str, cfg.console_dir, "config")
    cfg.event_buffer_size = _optional(raw, "event_buffer_size", int, cfg.event_buffer_size, "config")
    if cfg.event_buffer_size < 1:
        raise ConfigError("config.event_buffer_size", "must be >= 1")

    known_tasks = build_default_tasks()
    cells_raw = raw.get("cells")
    if cells_raw is None:
        cfg.cells = default_service_config(cfg.seed).cells
    else:
        if not isinstance(cells_raw, list) or not cells_raw:
            raise ConfigError("config.cells", "expected a non-empty list")
        cells = []
        for i, cell_raw in enumerate(cells_raw):
            where = f"config.cells[{i}]"
            if not isinstance(cell_raw, dict):
                raise ConfigError(where, "expected a mapping")
            cell_id = _require(cell_raw, "cell_id", str, where)
            task_ids = _require(cell_raw, "tasks", list, where)
            if not task_ids:
                raise ConfigError(f"{where}.tasks", "must list at least one task")
            for t in task_ids:
                if t not in known_tasks:
                    raise ConfigError(
                        f"{where}.tasks", f"unknown task {t!r}; known: {sorted(known_tasks)}"
                    )
            scenes = {known_tasks[t].scene for t in task_ids}
            if len(scenes) > 1:
                raise ConfigError(
                    f"{where}.tasks",
                    f"tasks span multiple scenes {sorted(s.value for s in scenes)}; one scene per cell",
                )
            cell = CellConfig(cell_id=cell_id, task_ids=tuple(task_ids))
            if "fault_profile" in cell_raw:
                cell.fault = _parse_fault(
                    _require(cell_raw, "fault_profile", dict, where), f"{where}.fault_profile"
                )
            if "workspace_bounds" in cell_raw:
                cell.bounds = _parse_bounds(
                    _require(cell_raw, "workspace_bounds", dict, where), f"{where}.workspace_bounds"
                )
            cell.cooldown_period_s = float(
                _optional(cell_raw, "cooldown_period_s", (int, float), 1200.0, where)
            )
            cell.cooldown_interval_s = float(
                _optional(cell_raw, "cooldown_interval_s", (int, float), 21600.0, where)
            )
            if cell.cooldown_period_s <= 0 or cell.cooldown_interval_s <= 0:
                raise ConfigError(f"{where}.cooldown", "cooldown values must be positive")
            cell.seed = _optional(cell_raw, "seed", int, cfg.seed + i + 1, where)
            cells.append(cell)
        ids = [c.cell_id for c in cells]
        if len(set(ids)) != len(ids):
            raise ConfigError("config.cells", f"duplicate cell_id in {ids}")
        cfg.cells = cells

    if "notifications" in raw:
        n = _require(raw, "notifications", dict, "config")
        url = _optional(n, "webhook_url", str, None, "config.notifications")
        backoff = _optional(n, "retry_backoff_ms", list, [100, 500, 2000], "config.notifications")
        if not backoff or not all(isinstance(b, int) and b >= 0 for b in backoff):
            raise ConfigError("config.notifications.retry_backoff_ms", "expected non-negative integers")
        window = _optional(n, "idempotency_window_s", int, 3600, "config.notifications")
        cfg.notification = NotificationConfig(
            webhook_url=url, retry_backoff_ms=backoff, idempotency_window_s=window
        )

    if "engine" in raw:
        e = _require(raw, "engine", dict, "config")
        kwargs = {}
        for name, kind in (
            ("reset_max_attempts", int),
            ("reboot_max_attempts", int),
            ("max_consecutive_policy_errors", int),
            ("early_stop_on_oracle_success", bool),
            ("include_proprio", bool),
        ):
            if name in e:
                kwargs[name] = _require(e, name, kind, "config.engine")
        try:
            cfg.engine = EngineConfig(**kwargs)
        except ValueError as exc:
            raise ConfigError("config.engine", str(exc)) from None

    return cfg
