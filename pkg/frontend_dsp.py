#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
前端信号处理模块
频域块 LMS（FLMS）回声消除、GCC-PHAT 时延估计、SRP-PHAT 方位角搜索与延时求和波束形成
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from audio_core import SAMPLE_RATE
from errors import DataError, DegenerateSignalError, ParameterError
from room_sim import SPEED_OF_SOUND
from ssl_core import AZIMUTHS, DoaDistribution, decide_doa

logger = logging.getLogger(__name__)

PHAT_FLOOR = 1e-12
DEFAULT_INTERP = 16
# 每块输出能量不超过麦克风块能量的 10^0.3 倍（+3 dB）
GUARD_RATIO = 10.0 ** 0.3
POWER_SMOOTHING = 0.9


# =================== 回声消除 ===================
@dataclass(frozen=True)
class AecConfig:
    filter_len: int = 4096
    block_len: int = 4096
    step_size: float = 0.5
    regularization: float = 1e-6

    def __post_init__(self):
        if self.filter_len < 1 or self.block_len < 1:
            raise ParameterError("filter_len 和 block_len 必须为正")
        if self.block_len < self.filter_len:
            raise ParameterError(f"block_len ({self.block_len}) 不能小于 filter_len ({self.filter_len})")
        if not 0.0 < self.step_size < 2.0:
            raise ParameterError(f"step_size 必须在 (0, 2) 内: {self.step_size}")
        if self.regularization <= 0:
            raise ParameterError(f"regularization 必须为正: {self.regularization}")

    @property
    def fft_size(self):
        return self.filter_len + self.block_len


@dataclass(frozen=True, eq=False)
class AecResult:
    output: np.ndarray
    adapted: bool
    erle_db: Optional[float] = None


def erle_db(echo, residual):
    """回声能量与残差能量之比（dB）；残差为零时返回 inf"""
    p_echo = float(np.sum(np.square(echo)))
    p_res = float(np.sum(np.square(residual)))
    if p_echo <= 0:
        raise DegenerateSignalError("回声能量为零，ERLE 无定义")
    if p_res <= 0:
        return math.inf
    return 10.0 * math.log10(p_echo / p_res)


class FlmsEchoCanceller:
    """
    约束型重叠保留频域 LMS 自适应滤波器
    每个参考通道一组滤波器，输出相加；逐频点步长用所有参考的联合功率归一化
    一个实例对应一路麦克风流，状态不可跨线程共享
    """

    def __init__(self, cfg, n_refs=2, ref_power=1.0):
        self.cfg = cfg
        self.n_refs = n_refs
        n = cfg.fft_size
        self.weights = np.zeros((n_refs, n // 2 + 1), dtype=np.complex128)
        self.history = np.zeros((n_refs, cfg.filter_len))
        self.power = None
        # 正则项换算到频点功率尺度
        self.delta = cfg.regularization * n * max(float(ref_power), 1e-20)
        self.blocks = 0
        self.guarded = 0

    def process_block(self, mic_block, ref_blocks):
        """处理 block_len 个新样本，返回回声消除后的输出块"""
        cfg = self.cfg
        B, L, N = cfg.block_len, cfg.filter_len, cfg.fft_size
        mic_block = np.asarray(mic_block, dtype=np.float64)
        ref_blocks = np.atleast_2d(np.asarray(ref_blocks, dtype=np.float64))
        if mic_block.shape != (B,) or ref_blocks.shape != (self.n_refs, B):
            raise ParameterError("块长度与配置不符")

        buf = np.concatenate([self.history, ref_blocks], axis=1)
        self.history = buf[:, -L:]
        X = np.fft.rfft(buf, n=N, axis=1)
        y = np.fft.irfft(np.sum(X * self.weights, axis=0), n=N)[-B:]
        e = mic_block - y
        self.blocks += 1

        e_energy = float(np.dot(e, e))
        d_energy = float(np.dot(mic_block, mic_block))
        if e_energy > GUARD_RATIO * d_energy:
            self.guarded += 1
            logger.debug("第 %d 块残差能量超过麦克风能量，输出原信号并跳过更新", self.blocks)
            return mic_block.copy()

        x_power = np.sum(np.abs(X) ** 2, axis=0)
        if not np.any(x_power > 0):
            return e
        if self.power is None:
            self.power = np.full_like(x_power, x_power.mean())
        self.power = POWER_SMOOTHING * self.power + (1.0 - POWER_SMOOTHING) * x_power

        E = np.fft.rfft(np.concatenate([np.zeros(L), e]), n=N)
        grad = np.conj(X) * E * (cfg.step_size / (self.power + self.delta))
        # 梯度约束：时域只保留前 L 个系数
        g = np.fft.irfft(grad, n=N, axis=1)
        g[:, L:] = 0.0
        self.weights += np.fft.rfft(g, n=N, axis=1)
        return e


def flms_aec(mic, refs, cfg=None):
    """
    对整段麦克风信号做回声消除，输出长度与输入相同
    参考信号全零时原样返回输入并标记未自适应
    """
    cfg = cfg or AecConfig()
    mic = np.asarray(mic, dtype=np.float64)
    refs = np.atleast_2d(np.asarray(refs, dtype=np.float64))
    if mic.ndim != 1 or refs.shape[1] != len(mic):
        raise ParameterError(f"麦克风与参考信号长度不一致: {mic.shape} vs {refs.shape}")

    ref_power = float(np.mean(np.square(refs)))
    if ref_power == 0.0:
        return AecResult(mic.copy(), adapted=False, erle_db=None)

    B = cfg.block_len
    n = len(mic)
    n_blocks = int(math.ceil(n / B))
    pad = n_blocks * B - n
    mic_p = np.pad(mic, (0, pad))
    refs_p = np.pad(refs, ((0, 0), (0, pad)))

    aec = FlmsEchoCanceller(cfg, refs.shape[0], ref_power)
    out = np.empty_like(mic_p)
    for k in range(n_blocks):
        sl = slice(k * B, (k + 1) * B)
        out[sl] = aec.process_block(mic_p[sl], refs_p[:, sl])
    out = out[:n]

    if aec.guarded:
        logger.debug("AEC: %d/%d 块触发输出保护", aec.guarded, n_blocks)
    erle = erle_db(mic, out) if np.any(mic) else None
    return AecResult(out, adapted=True, erle_db=erle)


# =================== GCC-PHAT ===================
@dataclass(frozen=True, eq=False)
class CrossCorr:
    """values 覆盖时延 [-max_lag, +max_lag]，步长 1/interp 个采样点"""
    values: np.ndarray
    max_lag: int
    interp: int = 1

    @property
    def lags(self):
        half = self.max_lag * self.interp
        return np.arange(-half, half + 1) / self.interp

    def peak_lag(self):
        """最大值对应的时延（采样点，可为小数）"""
        return float(self.lags[int(np.argmax(self.values))])

    def value_at(self, lag):
        """最近邻取值，lag 可为数组"""
        half = self.max_lag * self.interp
        idx = np.clip(np.round(np.asarray(lag) * self.interp).astype(np.int64) + half, 0, 2 * half)
        return self.values[idx]


def gcc_phat(a, b, max_lag, interp=1):
    """
    相位变换加权的广义互相关
    约定：b 相对 a 延迟 k 个采样点时峰值位于 -k
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    max_lag = int(max_lag)
    interp = int(interp)
    if a.ndim != 1 or a.shape != b.shape:
        raise ParameterError("两路信号必须是等长一维向量")
    if max_lag < 0 or interp < 1:
        raise ParameterError(f"max_lag 不能为负且 interp >= 1: {max_lag}, {interp}")
    if len(a) < max(2 * max_lag, 1):
        raise ParameterError(f"信号长度 {len(a)} 小于 2·max_lag = {2 * max_lag}")
    if not np.any(a) or not np.any(b):
        raise DegenerateSignalError("零信号无法做相位白化")

    n = 1 << (2 * len(a) - 1).bit_length()
    R = np.fft.rfft(a, n=n) * np.conj(np.fft.rfft(b, n=n))
    R /= np.maximum(np.abs(R), PHAT_FLOOR)
    cc = np.fft.irfft(R, n=n * interp) * interp

    half = max_lag * interp
    values = np.concatenate([cc[len(cc) - half:], cc[:half + 1]]) if half else cc[:1].copy()
    return CrossCorr(values, max_lag, interp)


# =================== SRP-PHAT ===================
@dataclass(frozen=True, eq=False)
class SteeringGrid:
    """
    tdoas[p, i]: 第 p 对麦克风 (m1, m2) 在方位角 i+1 下的到达时间差 delay_m1 - delay_m2（秒）
    delays[m, i]: 各麦克风相对阵列中心的到达时延（秒），远场平面波
    """
    azimuths: np.ndarray
    pairs: Tuple[Tuple[int, int], ...]
    tdoas: np.ndarray
    delays: np.ndarray
    sample_rate: int = SAMPLE_RATE
    aperture: float = 0.0
    speed_of_sound: float = SPEED_OF_SOUND

    @property
    def max_lag(self):
        """GCC 需要覆盖的最大时延（采样点）"""
        return int(math.ceil(np.max(np.abs(self.tdoas)) * self.sample_rate)) + 1 if self.tdoas.size else 1


def _unit_vectors(azimuths):
    a = np.radians(np.asarray(azimuths, dtype=np.float64))
    return np.stack([np.cos(a), np.sin(a), np.zeros_like(a)], axis=1)


def build_steering_grid(geometry, speed_of_sound=SPEED_OF_SOUND, sample_rate=SAMPLE_RATE):
    """按设备坐标系下的麦克风位置计算 1..360° 的导向时延"""
    if speed_of_sound <= 0:
        raise ParameterError(f"声速必须为正: {speed_of_sound}")
    local = np.asarray(geometry.local_mic_positions, dtype=np.float64)
    delays = -(local @ _unit_vectors(AZIMUTHS).T) / speed_of_sound
    pairs = tuple(itertools.combinations(range(len(local)), 2))
    tdoas = np.array([delays[i] - delays[j] for i, j in pairs]).reshape(len(pairs), len(AZIMUTHS))
    aperture = max((float(np.linalg.norm(local[i] - local[j])) for i, j in pairs), default=0.0)
    return SteeringGrid(AZIMUTHS.copy(), pairs, tdoas, delays, int(sample_rate), aperture, float(speed_of_sound))


def srp_phat_doa(mics, geometry, grid=None, interp=DEFAULT_INTERP):
    """
    各方位角得分 = 六对麦克风 GCC-PHAT 在该方向期望时延处（最近邻）的取值之和
    得分以 0 为下限截断后归一化到和为 1，输出分布非负，可与 SNS 分布逐点相乘；
    截断后全零时返回均匀分布。截断不改变 argmax（最大得分为负时全部并列，取 1°）
    """
    mics = np.atleast_2d(np.asarray(mics, dtype=np.float64))
    if mics.shape[0] != len(geometry.mic_positions):
        raise ParameterError(f"需要 {len(geometry.mic_positions)} 路麦克风，实际 {mics.shape[0]}")
    grid = grid or build_steering_grid(geometry)
    max_lag = grid.max_lag

    scores = np.zeros(len(grid.azimuths))
    for p, (i, j) in enumerate(grid.pairs):
        cc = gcc_phat(mics[i], mics[j], max_lag, interp)
        scores += cc.value_at(grid.tdoas[p] * grid.sample_rate)

    scores = np.maximum(scores, 0.0)
    total = scores.sum()
    if total <= 0:
        return DoaDistribution.uniform(1.0 / len(scores))
    return DoaDistribution(scores / total)


# =================== 延时求和 ===================
def steering_shifts(geometry, doa, speed_of_sound=SPEED_OF_SOUND, sample_rate=SAMPLE_RATE):
    """各麦克风朝向 doa 的整数采样时延"""
    grid = build_steering_grid(geometry, speed_of_sound, sample_rate)
    return np.round(grid.delays[:, int(doa) - 1] * sample_rate).astype(np.int64)


def _advance(x, k):
    """y[n] = x[n + k]，越界补零"""
    if k == 0:
        return x.copy()
    y = np.zeros_like(x)
    if k > 0:
        y[:-k] = x[k:]
    else:
        y[-k:] = x[:k]
    return y


def dsbf(mics, geometry, doa, speed_of_sound=SPEED_OF_SOUND, sample_rate=SAMPLE_RATE):
    """各通道按期望时延提前后取平均，朝 doa 方向单位增益"""
    if isinstance(doa, bool) or not 1 <= int(doa) <= 360 or int(doa) != doa:
        raise ParameterError(f"doa 必须是 1..360 的整数: {doa}")
    mics = np.atleast_2d(np.asarray(mics, dtype=np.float64))
    shifts = steering_shifts(geometry, doa, speed_of_sound, sample_rate)
    if len(shifts) != mics.shape[0]:
        raise ParameterError(f"麦克风数 {mics.shape[0]} 与几何 {len(shifts)} 不符")
    return np.mean([_advance(x, int(k)) for x, k in zip(mics, shifts)], axis=0)


# =================== 前端链路 ===================
@dataclass(frozen=True)
class FrontendConfig:
    aec: AecConfig = field(default_factory=AecConfig)
    use_aec: bool = True
    interp: int = DEFAULT_INTERP
    speed_of_sound: float = SPEED_OF_SOUND


@dataclass(frozen=True, eq=False)
class FrontendResult:
    cleaned: np.ndarray
    distribution: DoaDistribution
    doa: int
    beam: np.ndarray
    adapted: bool
    erle_db: Optional[float] = None


def run_frontend(audio, geometry, cfg=None):
    """AEC（每路麦克风一个实例）→ SRP-PHAT → DSBF，结果只取决于输入"""
    cfg = cfg or FrontendConfig()
    mics = audio.mics()
    if mics.shape[0] != 4:
        raise ParameterError(f"前端需要四路麦克风，实际 {mics.shape[0]}")

    adapted = False
    erles = []
    if cfg.use_aec:
        refs = audio.refs()
        if refs.shape[0] == 0:
            raise DataError("请求了 AEC 但录音中没有参考通道")
        cleaned = []
        for m in mics:
            res = flms_aec(m, refs, cfg.aec)
            cleaned.append(res.output)
            adapted = adapted or res.adapted
            if res.erle_db is not None:
                erles.append(res.erle_db)
        cleaned = np.array(cleaned)
    else:
        cleaned = mics.copy()

    grid = build_steering_grid(geometry, cfg.speed_of_sound, audio.sample_rate)
    dist = srp_phat_doa(cleaned, geometry, grid, cfg.interp)
    doa = decide_doa(dist, DoaDistribution.uniform(1.0))
    beam = dsbf(cleaned, geometry, doa, cfg.speed_of_sound, audio.sample_rate)
    erle = float(np.mean(erles)) if erles else None
    logger.debug("前端: doa=%d, aec=%s, erle=%s", doa, adapted, erle)
    return FrontendResult(cleaned, dist, doa, beam, adapted, erle)
