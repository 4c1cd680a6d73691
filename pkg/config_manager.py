#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
配置管理模块
默认配置、配置文件加载与补全、合法性校验、命令行参数覆盖
"""

import copy
import json
import logging
import os

from rich import box
from rich.console import Console
from rich.table import Table

from errors import ConfigError
from utils import get_script_dir

logger = logging.getLogger(__name__)

CONFIG_ENV = "VOXLOCUS_CONFIG_DIR"
CONFIG_NAME = "config.json"

DEFAULT_CONFIG = {
    "scene_settings": {
        "track": "ssl",
        "sample_rate": 16000,
        "duration_s": 2.0,
        "room_size_min": [3.0, 3.0],
        "room_size_max": [8.0, 8.0],
        "room_height": 3.0,
        "rt60_range": [0.2, 0.8],
        "speed_of_sound": 343.0,
        "fractional_delay": True,
        "wall_margin": 0.5,
        "device_height_range": [0.3, 1.2],
        "distance_range": [1.5, 5.0],
        "source_height_range": [1.0, 1.8],
        "snr_range": [-5.0, 10.0],
        "ser_range": [-5.0, 10.0],
        "mech_snr_range": [-5.0, 10.0],
        "scenario_weights": {
            "only": 1.0,
            "noise": 1.0,
            "echo": 1.0,
            "noise_echo": 1.0,
            "echo_mech": 1.0
        },
        "keyword_ratio": 0.5,
        "signal_folders": {}
    },
    "frontend_settings": {
        "use_aec": True,
        "filter_len": 4096,
        "block_len": 4096,
        "step_size": 0.5,
        "regularization": 1e-6,
        "interp": 16,
        "write_posteriors": True
    },
    "kws_settings": {
        "w_smooth": 30,
        "threshold": 0.5
    },
    "scoring_settings": {
        "mae_baseline": 20.0,
        "time_delay_ms": 0.0
    },
    "processing_options": {
        "debug_mode": False,
        "output_folder": "voxlocus_output"
    },
    "performance_settings": {
        "parallel_processing": True,
        "num_workers": 0,
        "batch_size": 4
    }
}

# 挑战赛数据范围；超出只警告，不拒绝
CONFORMANCE = {
    "scene_settings.room_size_min": (3.0, 8.0),
    "scene_settings.room_size_max": (3.0, 8.0),
    "scene_settings.rt60_range": (0.2, 0.8),
    "scene_settings.distance_range": (1.5, 5.0),
    "scene_settings.snr_range": (-5.0, 10.0),
    "scene_settings.ser_range": (-5.0, 10.0),
    "scene_settings.mech_snr_range": (-5.0, 10.0),
}

SCENARIO_NAMES = ("only", "noise", "echo", "noise_echo", "echo_mech")
SIGNAL_ROLES = ("speech", "keyword", "noise", "echo", "mech")


def get_config_path():
    """环境变量指定的目录优先，其次是脚本所在目录"""
    env_dir = os.environ.get(CONFIG_ENV)
    if env_dir:
        return os.path.join(env_dir, CONFIG_NAME)
    return os.path.join(get_script_dir(), CONFIG_NAME)


def _merge(defaults, loaded):
    """缺失的段和键用默认值补全"""
    config = copy.deepcopy(defaults)
    for key, value in loaded.items():
        if isinstance(value, dict) and isinstance(config.get(key), dict) \
                and key not in ("signal_folders", "scenario_weights"):
            config[key] = _merge(config[key], value)
        else:
            config[key] = value
    return config


def load_config(path=None):
    """加载配置：显式路径 → $VOXLOCUS_CONFIG_DIR/config.json → 脚本目录 → 默认值"""
    config_path = path or get_config_path()

    if not os.path.exists(config_path):
        if path:
            raise ConfigError(f"配置文件不存在: {path}")
        logger.debug("未找到配置文件 %s，使用默认配置", config_path)
        return copy.deepcopy(DEFAULT_CONFIG)

    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            loaded = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"加载配置文件 {config_path} 时出错: {e}") from e
    if not isinstance(loaded, dict):
        raise ConfigError(f"配置文件 {config_path} 顶层必须是对象")

    logger.debug("已加载配置 %s", config_path)
    return _merge(DEFAULT_CONFIG, loaded)


def save_config(config, path=None):
    """保存配置到文件"""
    config_path = path or get_config_path()
    try:
        with open(config_path, 'w', encoding='utf-8') as f:
            json.dump(config, f, ensure_ascii=False, indent=2)
        return True
    except OSError as e:
        logger.error("保存配置文件时出错: %s", e)
        return False


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_range(v, positive=False, allow_equal=True):
    if not (isinstance(v, (list, tuple)) and len(v) == 2 and all(_is_number(x) for x in v)):
        return False
    lo, hi = v
    if lo > hi or (not allow_equal and lo == hi):
        return False
    return not positive or lo > 0


def validate_config(config):
    """返回所有不合法的配置键（点分路径），有问题时抛出 ConfigError"""
    bad = []
    scene = config.get("scene_settings", {})
    front = config.get("frontend_settings", {})
    kws = config.get("kws_settings", {})
    scoring = config.get("scoring_settings", {})
    perf = config.get("performance_settings", {})

    def check(ok, key):
        if not ok:
            bad.append(key)

    check(scene.get("track") in ("kws", "ssl"), "scene_settings.track")
    check(_is_number(scene.get("sample_rate")) and scene.get("sample_rate") > 0
          and float(scene.get("sample_rate")).is_integer(), "scene_settings.sample_rate")
    check(_is_number(scene.get("duration_s")) and scene.get("duration_s") > 0, "scene_settings.duration_s")
    for key in ("room_size_min", "room_size_max"):
        v = scene.get(key)
        check(isinstance(v, (list, tuple)) and len(v) == 2 and all(_is_number(x) and x > 0 for x in v),
              f"scene_settings.{key}")
    lo, hi = scene.get("room_size_min"), scene.get("room_size_max")
    if "scene_settings.room_size_min" not in bad and "scene_settings.room_size_max" not in bad:
        check(all(a <= b for a, b in zip(lo, hi)), "scene_settings.room_size_max")
    check(_is_number(scene.get("room_height")) and scene.get("room_height") > 0, "scene_settings.room_height")
    check(_is_range(scene.get("rt60_range")) and scene["rt60_range"][0] >= 0, "scene_settings.rt60_range")
    check(_is_number(scene.get("speed_of_sound")) and scene.get("speed_of_sound") > 0,
          "scene_settings.speed_of_sound")
    check(isinstance(scene.get("fractional_delay"), bool), "scene_settings.fractional_delay")
    check(_is_number(scene.get("wall_margin")) and scene.get("wall_margin") >= 0, "scene_settings.wall_margin")
    for key in ("device_height_range", "source_height_range", "distance_range"):
        check(_is_range(scene.get(key), positive=True), f"scene_settings.{key}")
    for key in ("snr_range", "ser_range", "mech_snr_range"):
        check(_is_range(scene.get(key)), f"scene_settings.{key}")
    weights = scene.get("scenario_weights")
    check(isinstance(weights, dict) and weights and set(weights) <= set(SCENARIO_NAMES)
          and all(_is_number(w) and w >= 0 for w in weights.values())
          and sum(weights.values()) > 0, "scene_settings.scenario_weights")
    check(_is_number(scene.get("keyword_ratio")) and 0.0 <= scene.get("keyword_ratio") <= 1.0,
          "scene_settings.keyword_ratio")
    folders = scene.get("signal_folders")
    check(isinstance(folders, dict) and set(folders) <= set(SIGNAL_ROLES), "scene_settings.signal_folders")

    check(isinstance(front.get("use_aec"), bool), "frontend_settings.use_aec")
    for key in ("filter_len", "block_len", "interp"):
        check(isinstance(front.get(key), int) and not isinstance(front.get(key), bool) and front.get(key) >= 1,
              f"frontend_settings.{key}")
    if "frontend_settings.filter_len" not in bad and "frontend_settings.block_len" not in bad:
        check(front["block_len"] >= front["filter_len"], "frontend_settings.block_len")
    check(_is_number(front.get("step_size")) and 0.0 < front.get("step_size") < 2.0, "frontend_settings.step_size")
    check(_is_number(front.get("regularization")) and front.get("regularization") > 0,
          "frontend_settings.regularization")
    check(isinstance(front.get("write_posteriors"), bool), "frontend_settings.write_posteriors")

    w = kws.get("w_smooth")
    check(isinstance(w, int) and not isinstance(w, bool) and w >= 1, "kws_settings.w_smooth")
    check(_is_number(kws.get("threshold")) and 0.0 < kws.get("threshold") <= 1.0, "kws_settings.threshold")

    check(_is_number(scoring.get("mae_baseline")) and scoring.get("mae_baseline") > 0,
          "scoring_settings.mae_baseline")
    check(_is_number(scoring.get("time_delay_ms")) and scoring.get("time_delay_ms") >= 0,
          "scoring_settings.time_delay_ms")

    check(isinstance(perf.get("parallel_processing"), bool), "performance_settings.parallel_processing")
    for key in ("num_workers", "batch_size"):
        v = perf.get(key)
        check(isinstance(v, int) and not isinstance(v, bool) and v >= 0, f"performance_settings.{key}")

    if bad:
        raise ConfigError("配置项无效", bad)
    return bad


def conformance_issues(config):
    """列出超出挑战赛数据范围的配置键"""
    issues = []
    for dotted, (lo, hi) in CONFORMANCE.items():
        section, key = dotted.split('.')
        values = config[section][key]
        if any(v < lo or v > hi for v in values):
            issues.append(dotted)
    if config["scene_settings"]["room_height"] != 3.0:
        issues.append("scene_settings.room_height")
    for dotted in issues:
        logger.warning("%s 超出挑战赛数据范围，相关场景将标记为 conformant=false", dotted)
    return issues


def apply_overrides(config, overrides):
    """overrides: {点分键: 值}；值为 None 的项跳过，命令行优先于配置文件"""
    config = copy.deepcopy(config)
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, key = dotted.split('.', 1)
        if section not in config or key not in config[section]:
            raise ConfigError("未知配置项", [dotted])
        config[section][key] = value
    return config


def show_config(config, console=None):
    """以表格展示当前配置"""
    console = console or Console()
    table = Table(box=box.SIMPLE_HEAD, border_style="blue", highlight=True)
    table.add_column("配置项", style="bright_cyan", justify="right")
    table.add_column("当前值", style="yellow")

    for section, settings in config.items():
        table.add_section()
        table.add_row(f"[bold blue]{section}[/bold blue]", "")
        if isinstance(settings, dict):
            for key, value in settings.items():
                table.add_row(key, json.dumps(value, ensure_ascii=False))
        else:
            table.add_row("", json.dumps(settings, ensure_ascii=False))

    console.print(table)
    return config
