#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
异常定义模块
所有模块抛出的错误都继承自 VoxLocusError，命令行据 exit_code 返回退出码：
2 = 配置/解析错误，3 = 数据错误
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


class VoxLocusError(Exception):
    """项目异常基类"""
    exit_code = EXIT_DATA

    def to_dict(self):
        """转换为机器可读的错误记录"""
        return {
            'error': type(self).__name__,
            'message': str(self),
            'exit_code': self.exit_code,
        }


# ---------- 配置 / 解析类（退出码 2） ----------
class ConfigError(VoxLocusError):
    """配置文件或命令行参数无效"""
    exit_code = EXIT_CONFIG

    def __init__(self, message, keys=None):
        self.keys = list(keys or [])
        if self.keys:
            message = f"{message}: {', '.join(self.keys)}"
        super().__init__(message)


class ParameterError(VoxLocusError, ValueError):
    """函数参数超出允许范围"""
    exit_code = EXIT_CONFIG


class ParseError(VoxLocusError, ValueError):
    """文本文件解析失败，line 为出错的物理行号（从 1 开始）"""
    exit_code = EXIT_CONFIG

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ''
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f"{':' if where else ''}line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class LabelError(ParseError):
    """标签文件违反字母表约束（KWS 只允许 0/1，SSL 只允许 1..360）"""


# ---------- 数据类（退出码 3） ----------
class DataError(VoxLocusError):
    """输入数据本身有问题"""
    exit_code = EXIT_DATA


class WavFormatError(DataError):
    """WAV 头损坏或不是 RIFF/WAVE"""


class UnsupportedFormatError(DataError):
    """WAV 合法但不是 16 bit PCM"""


class AudioIOError(DataError, OSError):
    """音频文件无法读写"""


class EmptyInputError(DataError):
    """信号比一帧还短"""


class GeometryError(DataError):
    """声源/麦克风/设备位置不合法"""


class DegenerateSignalError(DataError):
    """零能量信号，比例或白化无定义"""


class NoDecisionError(DataError):
    """SSL×SNS 乘积全零，无法给出方向"""


class UndefinedMetricError(DataError):
    """缺少正例或负例，指标无定义"""


class MissingIdError(DataError):
    """标签文件与真值文件的 id 不对齐"""
