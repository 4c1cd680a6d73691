#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
音频基础模块
16 bit PCM WAV 读写、分帧、STFT、梅尔滤波器组特征以及 SSL 输入张量的拼装
"""

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple

import numpy as np
import soundfile as sf
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from errors import (
    AudioIOError,
    EmptyInputError,
    ParameterError,
    UnsupportedFormatError,
    WavFormatError,
)

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
PCM_SCALE = 32768.0
LOG_FLOOR = 1e-10

# KWS 特征 25 ms / 10 ms，SSL 特征 32 ms / 16 ms（16 kHz 下的采样点数）
KWS_FRAME_LEN, KWS_HOP = 400, 160
SSL_FRAME_LEN, SSL_HOP = 512, 256
SSL_CHANNELS = 5

WINDOWS = {'hann': 'hann', 'rect': 'boxcar'}


class RoleKind(enum.Enum):
    MIC = 'mic'
    REF = 'ref'
    MONO = 'mono'


@dataclass(frozen=True)
class ChannelRole:
    kind: RoleKind
    index: int = 0

    def __str__(self):
        if self.kind is RoleKind.MONO:
            return 'mono'
        return f"{self.kind.value}{self.index}"


ALPHA_MINI_ROLES = tuple(
    [ChannelRole(RoleKind.MIC, i) for i in range(4)]
    + [ChannelRole(RoleKind.REF, i) for i in range(2)]
)


def default_roles(n_channels):
    """单声道为 Mono，其余按麦克风编号"""
    if n_channels == 1:
        return (ChannelRole(RoleKind.MONO),)
    return tuple(ChannelRole(RoleKind.MIC, i) for i in range(n_channels))


@dataclass(frozen=True, eq=False)
class MultiChannelAudio:
    """带采样率的 [channels × length] 实数矩阵，构造后只读"""
    samples: np.ndarray
    sample_rate: int
    channel_roles: Tuple[ChannelRole, ...] = ()

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64, copy=True)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2:
            raise ParameterError(f"samples 必须是二维矩阵，实际维度 {samples.ndim}")
        if int(self.sample_rate) <= 0:
            raise ParameterError(f"采样率必须为正: {self.sample_rate}")
        samples.setflags(write=False)
        roles = tuple(self.channel_roles) or default_roles(samples.shape[0])
        if len(roles) != samples.shape[0]:
            raise ParameterError(f"channel_roles 数量 {len(roles)} 与通道数 {samples.shape[0]} 不符")
        if any(r.kind is RoleKind.REF for r in roles) and samples.shape[0] == 6 \
                and roles != ALPHA_MINI_ROLES:
            raise ParameterError("六通道格式必须是 mic0..mic3, ref0, ref1")
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'sample_rate', int(self.sample_rate))
        object.__setattr__(self, 'channel_roles', roles)

    @property
    def n_channels(self):
        return self.samples.shape[0]

    @property
    def length(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.length / self.sample_rate

    @property
    def is_alpha_mini(self):
        return self.channel_roles == ALPHA_MINI_ROLES

    def mics(self):
        """麦克风通道 [n_mic × length]"""
        idx = [i for i, r in enumerate(self.channel_roles) if r.kind is RoleKind.MIC]
        return self.samples[idx]

    def refs(self):
        """扬声器参考通道 [n_ref × length]"""
        idx = [i for i, r in enumerate(self.channel_roles) if r.kind is RoleKind.REF]
        return self.samples[idx]

    def channel(self, i):
        return self.samples[i]


def mono(signal, sample_rate=SAMPLE_RATE):
    """包装一维信号"""
    return MultiChannelAudio(np.asarray(signal, dtype=np.float64)[np.newaxis, :], sample_rate)


# =================== WAV 读写 ===================
def read_wav(path, alpha_mini=True):
    """
    读取 16 bit PCM WAV，样本除以 32768 归一化到 [-1, 1)
    六通道文件在 alpha_mini=True 时标记为 mic0..mic3 + ref0, ref1
    """
    if not Path(path).is_file():
        raise AudioIOError(f"文件不存在: {path}")
    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise WavFormatError(f"无法解析 WAV 头 {path}: {e}") from e

    if info.format not in ('WAV', 'WAVEX'):
        raise UnsupportedFormatError(f"{path} 不是 RIFF/WAVE 文件 (format={info.format})")
    if info.subtype != 'PCM_16':
        raise UnsupportedFormatError(f"{path} 不是 16 bit PCM (subtype={info.subtype})")

    try:
        data, sample_rate = sf.read(str(path), dtype='int16', always_2d=True)
    except RuntimeError as e:
        raise WavFormatError(f"读取 {path} 失败: {e}") from e

    samples = data.T.astype(np.float64) / PCM_SCALE
    roles = ALPHA_MINI_ROLES if (alpha_mini and samples.shape[0] == 6) else ()
    logger.debug("读取 %s: %d 通道, %d Hz, %d 点", path, samples.shape[0], sample_rate, samples.shape[1])
    return MultiChannelAudio(samples, sample_rate, roles)


def to_pcm16(samples):
    """浮点样本量化为 int16，写入端截断到 [-32768, 32767]"""
    samples = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(samples)):
        raise ParameterError("样本中存在 NaN/Inf")
    return np.clip(np.round(samples * PCM_SCALE), -32768, 32767).astype(np.int16)


def write_wav(path, audio):
    """写出 16 bit PCM WAV"""
    pcm = to_pcm16(audio.samples)
    try:
        sf.write(str(path), pcm.T, audio.sample_rate, subtype='PCM_16', format='WAV')
    except (RuntimeError, OSError) as e:
        raise AudioIOError(f"无法写入 {path}: {e}") from e


# =================== STFT ===================
@dataclass(frozen=True, eq=False)
class Spectrogram:
    """bins: [frames × freq_bins] 复数矩阵"""
    bins: np.ndarray
    frame_len: int
    hop: int
    window: str = 'hann'
    sample_rate: int = SAMPLE_RATE

    @property
    def n_frames(self):
        return self.bins.shape[0]

    @property
    def n_freq(self):
        return self.bins.shape[1]

    def power(self):
        return np.abs(self.bins) ** 2


def frame_signal(signal, frame_len, hop):
    """[frames × frame_len] 视图"""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise ParameterError("只能对单通道信号分帧")
    if len(signal) < frame_len:
        raise EmptyInputError(f"信号长度 {len(signal)} 小于一帧 {frame_len}")
    return sliding_window_view(signal, frame_len)[::hop]


def analysis_window(name, frame_len):
    if name not in WINDOWS:
        raise ParameterError(f"未知窗函数 {name}，可选 {sorted(WINDOWS)}")
    # 周期 Hann，与分析-合成常用约定一致
    return get_window(WINDOWS[name], frame_len, fftbins=True)


def stft(channel, frame_len=SSL_FRAME_LEN, hop=SSL_HOP, window='hann', sample_rate=SAMPLE_RATE):
    """加窗 DFT，bins[t][k] 为第 t 帧第 k 个频点"""
    if frame_len <= 0 or frame_len % 2:
        raise ParameterError(f"frame_len 必须为正偶数: {frame_len}")
    if hop <= 0:
        raise ParameterError(f"hop 必须为正: {hop}")
    frames = frame_signal(channel, frame_len, hop)
    win = analysis_window(window, frame_len)
    bins = np.fft.rfft(frames * win, n=frame_len, axis=-1)
    return Spectrogram(bins, frame_len, hop, window, sample_rate)


# =================== 梅尔特征 ===================
def mel_filterbank(n_mels, frame_len, sample_rate=SAMPLE_RATE):
    """HTK 梅尔刻度三角滤波器，覆盖 0 到 fs/2，峰值为 1"""
    import librosa

    return librosa.filters.mel(
        sr=sample_rate, n_fft=frame_len, n_mels=n_mels,
        fmin=0.0, fmax=sample_rate / 2, htk=True, norm=None,
    )


@dataclass(frozen=True, eq=False)
class MelFeatures:
    values: np.ndarray
    n_mels: int
    frame_len: int
    hop: int


def mel_features(spectrogram, n_mels=40):
    """对数梅尔功率，功率下限 1e-10"""
    if n_mels < 1:
        raise ParameterError(f"n_mels 必须 >= 1: {n_mels}")
    if spectrogram.n_frames == 0:
        raise EmptyInputError("频谱为空")
    if n_mels > spectrogram.n_freq:
        raise ParameterError(f"n_mels={n_mels} 超过频点数 {spectrogram.n_freq}")
    fb = mel_filterbank(n_mels, spectrogram.frame_len, spectrogram.sample_rate)
    mel_power = spectrogram.power() @ fb.T
    values = np.log(np.maximum(mel_power, LOG_FLOOR))
    return MelFeatures(values, n_mels, spectrogram.frame_len, spectrogram.hop)


def kws_features(signal, n_mels=40, sample_rate=SAMPLE_RATE):
    """KWS 基线特征：25 ms 窗 10 ms 移（40 维或 71 维）"""
    frame_len = int(round(0.025 * sample_rate))
    hop = int(round(0.010 * sample_rate))
    return mel_features(stft(signal, frame_len, hop, 'hann', sample_rate), n_mels)


# =================== SSL 输入张量 ===================
@dataclass(frozen=True, eq=False)
class FeatureTensor:
    """values: [2C × F × T]，前 C 个平面为幅度，后 C 个为相位"""
    values: np.ndarray
    n_channels: int = field(default=SSL_CHANNELS)

    @property
    def shape(self):
        return self.values.shape

    def magnitudes(self):
        return self.values[:self.n_channels]

    def phases(self):
        return self.values[self.n_channels:]

    def complex_bins(self):
        """由幅度和相位还原复数频谱 [C × F × T]"""
        return self.magnitudes() * np.exp(1j * self.phases())


def assemble_ssl_features(audio, frame_len=SSL_FRAME_LEN, hop=SSL_HOP):
    """取前五个通道做 STFT，拼接幅度与相位"""
    if audio.n_channels < SSL_CHANNELS:
        raise ParameterError(f"SSL 特征需要至少 {SSL_CHANNELS} 个通道，实际 {audio.n_channels}")
    specs = [stft(audio.channel(c), frame_len, hop, 'hann', audio.sample_rate).bins.T
             for c in range(SSL_CHANNELS)]
    bins = np.stack(specs)  # [C × F × T]
    phase = np.angle(bins)
    # 相位取 (-π, π]
    phase[phase <= -np.pi] = np.pi
    return FeatureTensor(np.concatenate([np.abs(bins), phase], axis=0), SSL_CHANNELS)
