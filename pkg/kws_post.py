#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
唤醒词后处理模块
后验平滑、阈值判决和后验文件读写
"""

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from audio_core import frame_signal
from errors import EmptyInputError, ParameterError, ParseError

logger = logging.getLogger(__name__)

DEFAULT_HOP_MS = 10.0
DEFAULT_W_SMOOTH = 30
DEFAULT_THRESHOLD = 0.5

_HOP_HEADER = re.compile(r'^#\s*hop_ms\s*=\s*(\S+)\s*$')


@dataclass(frozen=True, eq=False)
class PosteriorTrack:
    """逐帧关键词后验概率 p_t ∈ [0, 1]"""
    keyword_prob: np.ndarray
    frame_hop: float = DEFAULT_HOP_MS

    def __post_init__(self):
        p = np.array(self.keyword_prob, dtype=np.float64, copy=True).reshape(-1)
        if p.size and (not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0):
            raise ParameterError("后验概率必须在 [0, 1] 内")
        if self.frame_hop <= 0:
            raise ParameterError(f"帧移必须为正: {self.frame_hop}")
        p.setflags(write=False)
        object.__setattr__(self, 'keyword_prob', p)

    def __len__(self):
        return len(self.keyword_prob)

    def duration_ms(self):
        return len(self) * self.frame_hop


@dataclass(frozen=True)
class KwsDecision:
    detected: bool
    trigger_frame: Optional[int] = None
    peak_confidence: float = 0.0

    @property
    def label(self):
        return int(self.detected)


def smooth_posteriors(track, w_smooth=DEFAULT_W_SMOOTH):
    """因果滑动平均：p'_t 为最近 w_smooth 帧（不足时为全部已有帧）的均值"""
    if int(w_smooth) != w_smooth or w_smooth < 1:
        raise ParameterError(f"w_smooth 必须是正整数: {w_smooth}")
    w = int(w_smooth)
    p = track.keyword_prob
    if not len(p):
        return track
    csum = np.concatenate([[0.0], np.cumsum(p)])
    t = np.arange(1, len(p) + 1)
    start = np.maximum(t - w, 0)
    smoothed = (csum[t] - csum[start]) / (t - start)
    # 累加误差可能略微越界
    smoothed = np.clip(smoothed, p.min(), p.max())
    return PosteriorTrack(smoothed, track.frame_hop)


def decide_keyword(track, w_smooth=DEFAULT_W_SMOOTH, threshold=DEFAULT_THRESHOLD):
    """
    平滑后的后验即置信度，任一帧严格大于阈值即唤醒
    判决只用到当前帧及之前的帧，零前瞻
    """
    if not 0.0 < threshold <= 1.0:
        raise ParameterError(f"threshold 必须在 (0, 1] 内: {threshold}")
    smoothed = smooth_posteriors(track, w_smooth).keyword_prob
    if not len(smoothed):
        return KwsDecision(False, None, 0.0)
    peak = float(smoothed.max())
    above = np.flatnonzero(smoothed > threshold)
    if above.size:
        return KwsDecision(True, int(above[0]), peak)
    return KwsDecision(False, None, peak)


# =================== 后验文件 ===================
def posterior_provider(path):
    """
    读取后验文件：每行一个概率，可选表头 "#hop_ms=10"
    空行与其它 # 注释行跳过；错误信息带物理行号
    """
    try:
        text = Path(path).read_text(encoding='utf-8')
    except (OSError, UnicodeDecodeError) as e:
        raise ParseError(f"无法读取后验文件: {e}", path=path) from e

    hop = DEFAULT_HOP_MS
    values = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith('#'):
            m = _HOP_HEADER.match(line)
            if m:
                try:
                    hop = float(m.group(1))
                except ValueError as e:
                    raise ParseError(f"帧移无法解析: {m.group(1)}", line=lineno, path=path) from e
                if not hop > 0 or not math.isfinite(hop):
                    raise ParseError(f"帧移必须为正: {m.group(1)}", line=lineno, path=path)
            continue
        try:
            v = float(line)
        except ValueError as e:
            raise ParseError(f"无法解析概率值 {line!r}", line=lineno, path=path) from e
        if not math.isfinite(v) or not 0.0 <= v <= 1.0:
            raise ParseError(f"概率值超出 [0, 1]: {line}", line=lineno, path=path)
        values.append(v)
    return PosteriorTrack(np.array(values, dtype=np.float64), hop)


def write_posteriors(path, track):
    lines = [f"#hop_ms={track.frame_hop:g}"] + [f"{v:.6f}" for v in track.keyword_prob]
    Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')


def energy_gate_posteriors(signal, sample_rate=16000, hop_ms=DEFAULT_HOP_MS, frame_ms=25.0,
                           floor_percentile=10.0, offset_db=12.0, scale_db=3.0):
    """
    能量门限伪后验（非神经网络，仅用于端到端演示）：
    帧对数能量高出噪声底 offset_db 时后验过 0.5，用 logistic 函数压到 (0, 1)
    """
    frame_len = int(round(frame_ms * sample_rate / 1000.0))
    hop = int(round(hop_ms * sample_rate / 1000.0))
    try:
        frames = frame_signal(signal, frame_len, hop)
    except EmptyInputError:
        return PosteriorTrack(np.zeros(0), hop_ms)
    energy_db = 10.0 * np.log10(np.mean(frames ** 2, axis=1) + 1e-12)
    floor = np.percentile(energy_db, floor_percentile)
    z = (energy_db - floor - offset_db) / scale_db
    prob = 0.5 * (1.0 + np.tanh(0.5 * z))
    return PosteriorTrack(np.clip(prob, 0.0, 1.0), hop_ms)
