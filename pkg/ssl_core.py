#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
声源定位基础模块
环形角度运算、高斯 SSL 目标、语音/非语音（SNS）目标、多任务 MSE 损失以及最终方向判决
方位角取 1..360 的整数网格，90° 为设备正前方
"""

import enum
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet

import numpy as np

from errors import NoDecisionError, ParameterError, ParseError

logger = logging.getLogger(__name__)

N_AZIMUTHS = 360
AZIMUTHS = np.arange(1, N_AZIMUTHS + 1)
DEFAULT_SIGMA = 45.0


class AngleRole(enum.Enum):
    SPEECH = 'speech'
    NOISE = 'noise'


@dataclass(frozen=True, eq=False)
class DoaDistribution:
    """长度 360 的方向分布，values[i - 1] 对应方位角 i"""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if values.shape != (N_AZIMUTHS,):
            raise ParameterError(f"方向分布长度必须为 {N_AZIMUTHS}，实际 {values.size}")
        if not np.all(np.isfinite(values)):
            raise ParameterError("方向分布中存在 NaN/Inf")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    def at(self, azimuth):
        return float(self.values[_check_azimuth(azimuth) - 1])

    def argmax(self):
        """并列时取最小方位角"""
        return int(np.argmax(self.values)) + 1

    def rotated(self, shift):
        """整体旋转 shift 度"""
        return DoaDistribution(np.roll(self.values, int(shift)))

    @classmethod
    def uniform(cls, value=1.0):
        return cls(np.full(N_AZIMUTHS, float(value)))


@dataclass(frozen=True)
class AngleSet:
    degrees: FrozenSet[int]
    role: AngleRole = AngleRole.SPEECH

    def __post_init__(self):
        object.__setattr__(self, 'degrees', frozenset(_check_azimuth(d) for d in self.degrees))

    def __len__(self):
        return len(self.degrees)

    def __iter__(self):
        return iter(sorted(self.degrees))


def speech_angles(degrees):
    return AngleSet(frozenset(degrees), AngleRole.SPEECH)


def noise_angles(degrees):
    return AngleSet(frozenset(degrees), AngleRole.NOISE)


def _check_azimuth(a):
    if isinstance(a, bool) or not isinstance(a, (int, np.integer)):
        if not (isinstance(a, (float, np.floating)) and float(a).is_integer()):
            raise ParameterError(f"方位角必须是整数: {a!r}")
    a = int(a)
    if not 1 <= a <= N_AZIMUTHS:
        raise ParameterError(f"方位角超出 1..360: {a}")
    return a


def angle_distance(a, b):
    """两个方位角之间的环形距离，取值 [0, 180]"""
    diff = abs(_check_azimuth(a) - _check_azimuth(b))
    return min(diff, N_AZIMUTHS - diff)


def circular_distance(a, b):
    """向量化的环形距离，不做取值检查"""
    diff = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) % N_AZIMUTHS
    return np.minimum(diff, N_AZIMUTHS - diff)


def _distance_matrix(angles):
    """[len(angles) × 360]：每个源角到网格各点的距离"""
    return circular_distance(np.asarray(sorted(angles))[:, None], AZIMUTHS[None, :])


def encode_ssl_target(speech, noise, sigma=DEFAULT_SIGMA):
    """以所有声源方向为中心的高斯函数取最大值"""
    if sigma <= 0:
        raise ParameterError(f"sigma 必须为正: {sigma}")
    angles = set(speech.degrees) | set(noise.degrees)
    if not angles:
        raise ParameterError("声源方向集合为空")
    d = _distance_matrix(angles)
    return DoaDistribution(np.max(np.exp(-d ** 2 / sigma ** 2), axis=0))


def encode_sns_target(speech, noise):
    """最近声源为语音的方向记 1，否则记 0；等距时算语音"""
    if not speech.degrees and not noise.degrees:
        raise ParameterError("声源方向集合为空")
    if not noise.degrees:
        return DoaDistribution.uniform(1.0)
    if not speech.degrees:
        return DoaDistribution.uniform(0.0)
    d_speech = _distance_matrix(speech.degrees).min(axis=0)
    d_noise = _distance_matrix(noise.degrees).min(axis=0)
    return DoaDistribution((d_speech <= d_noise).astype(np.float64))


def _vector(x):
    return x.values if isinstance(x, DoaDistribution) else DoaDistribution(x).values


def ssl_sns_loss(est_ssl, est_sns, tgt_ssl, tgt_sns):
    """两路平方误差之和（按频点求和，不取平均）"""
    e1 = _vector(tgt_ssl) - _vector(est_ssl)
    e2 = _vector(tgt_sns) - _vector(est_sns)
    return float(np.dot(e1, e1) + np.dot(e2, e2))


def decide_doa(est_ssl, est_sns):
    """SSL 与 SNS 逐点相乘后取最大值所在方位角"""
    product = _vector(est_ssl) * _vector(est_sns)
    if not np.any(product):
        raise NoDecisionError("SSL×SNS 乘积全零，没有可判决的语音方向")
    return int(np.argmax(product)) + 1


# =================== 向量文件 ===================
def write_doa_vectors(path, vectors):
    """每行 360 个逗号分隔的实数"""
    lines = [','.join(f"{v:.8g}" for v in _vector(vec)) for vec in vectors]
    Path(path).write_text(''.join(line + '\n' for line in lines), encoding='utf-8')


def read_doa_vectors(path):
    """读取方向向量文件，空行跳过，格式错误报告物理行号"""
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise ParseError(f"无法读取: {e}", path=path) from e
    vectors = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(',')
        if len(fields) != N_AZIMUTHS:
            raise ParseError(f"需要 {N_AZIMUTHS} 个数值，实际 {len(fields)}", line=lineno, path=path)
        try:
            values = np.array([float(f) for f in fields])
        except ValueError as e:
            raise ParseError(f"无法解析数值: {e}", line=lineno, path=path) from e
        if not np.all(np.isfinite(values)):
            raise ParseError("存在 NaN/Inf", line=lineno, path=path)
        vectors.append(DoaDistribution(values))
    return vectors


def decide_from_file(path):
    """估计文件：第一行 SSL 向量，可选第二行 SNS 向量（缺省全 1）"""
    vectors = read_doa_vectors(path)
    if not vectors:
        raise ParseError("估计文件为空", path=path)
    est_sns = vectors[1] if len(vectors) > 1 else DoaDistribution.uniform(1.0)
    return decide_doa(vectors[0], est_sns)

