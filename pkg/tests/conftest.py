# -*- coding: utf-8 -*-

"""pytest 公共夹具"""

import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from room_sim import DeviceGeometry  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def point_geometry():
    """四个麦克风都在原点：所有方向的期望时延为零"""
    return DeviceGeometry(np.zeros((4, 3)), np.zeros((2, 3)), np.zeros(3), 90.0)


@pytest.fixture
def isolated_config(tmp_path, monkeypatch):
    """配置目录指向空目录，load_config 回落到默认配置"""
    cfg_dir = tmp_path / "cfg"
    cfg_dir.mkdir()
    monkeypatch.setenv("VOXLOCUS_CONFIG_DIR", str(cfg_dir))
    return cfg_dir
