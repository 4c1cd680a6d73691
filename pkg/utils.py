#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
工具函数模块
包含日志初始化、依赖检查、随机数派生等辅助函数
"""

import logging
import os
import sys

import numpy as np
from rich.console import Console
from rich.logging import RichHandler

logger = logging.getLogger(__name__)

# 日志统一输出到 stderr，stdout 留给结果表格
err_console = Console(stderr=True)


def get_script_dir():
    """获取脚本当前路径"""
    current_dir = os.path.dirname(os.path.abspath(sys.argv[0]))
    if not current_dir:  # 如果为空，使用当前工作目录
        current_dir = os.getcwd()
    return current_dir


def setup_logging(debug_mode=False):
    """安装 RichHandler；debug_mode 打开 DEBUG 级别"""
    level = logging.DEBUG if debug_mode else logging.INFO
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, RichHandler):
            root.removeHandler(handler)
    handler = RichHandler(console=err_console, show_path=debug_mode, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(handler)
    root.setLevel(level)
    # numba / librosa 在 DEBUG 下非常吵
    for noisy in ('numba', 'matplotlib'):
        logging.getLogger(noisy).setLevel(logging.WARNING)


def check_dependencies():
    """检查必要的依赖库"""
    required_libs = ['numpy', 'scipy', 'soundfile', 'librosa', 'pandas']
    missing_libs = []

    for lib in required_libs:
        try:
            __import__(lib)
        except ImportError:
            missing_libs.append(lib)

    if missing_libs:
        logger.warning("未安装以下库: %s", ', '.join(missing_libs))
        for lib in missing_libs:
            logger.warning("  pip install %s", lib)

    return len(missing_libs) == 0


def derive_rng(seed, index):
    """由 (seed, index) 派生独立的 PCG64 随机数生成器，结果与进程调度无关"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def format_time(seconds):
    """格式化时间，将秒数转为人类可读形式"""
    if seconds < 60:
        return f"{seconds:.1f}秒"
    elif seconds < 3600:
        minutes = seconds // 60
        remaining_seconds = seconds % 60
        return f"{int(minutes)}分{int(remaining_seconds)}秒"
    else:
        hours = seconds // 3600
        minutes = (seconds % 3600) // 60
        remaining_seconds = seconds % 60
        return f"{int(hours)}时{int(minutes)}分{int(remaining_seconds)}秒"

