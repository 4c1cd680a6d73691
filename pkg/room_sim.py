#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
房间仿真模块
镜像源法生成矩形房间冲激响应，描述 Alpha-mini 设备几何，
按给定 SNR/SER 混合语音、噪声、回声和机械噪声，生成带真值的六通道场景
"""

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.signal import butter, fftconvolve, resample_poly, sosfilt

from audio_core import ALPHA_MINI_ROLES, MultiChannelAudio, SAMPLE_RATE, read_wav
from errors import DegenerateSignalError, GeometryError, ParameterError

logger = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0

# Alpha-mini 头部几何（米）
MIC_SPACING = 0.037
LOUDSPEAKER_SPACING = 0.063
LOUDSPEAKER_DROP = 0.13
MECH_DROP = 0.10

# 挑战赛数据范围
CONFORMANT_ROOM_XY = (3.0, 8.0)
CONFORMANT_ROOM_Z = 3.0
CONFORMANT_RT60 = (0.2, 0.8)
CONFORMANT_DISTANCE = (1.5, 5.0)
CONFORMANT_RATIO_DB = (-5.0, 10.0)

# 分数延时：在 K 倍采样率上累加镜像源，再多相抽取回 fs
FRACTIONAL_OVERSAMPLE = 8
FRACTIONAL_PAD = 32

SIGNAL_RMS = 0.05


# =================== 房间 ===================
@dataclass(frozen=True)
class RoomSpec:
    """矩形房间；rt60 == 0 表示自由场（反射系数为 0）"""
    dims: Tuple[float, float, float]
    rt60: float
    sample_rate: int = SAMPLE_RATE
    speed_of_sound: float = SPEED_OF_SOUND
    fractional_delay: bool = False

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != 3 or min(dims) <= 0:
            raise ParameterError(f"房间尺寸必须是三个正数: {self.dims}")
        if self.rt60 < 0:
            raise ParameterError(f"rt60 不能为负: {self.rt60}")
        if self.sample_rate <= 0 or self.speed_of_sound <= 0:
            raise ParameterError("采样率和声速必须为正")
        object.__setattr__(self, 'dims', dims)

    @property
    def volume(self):
        lx, ly, lz = self.dims
        return lx * ly * lz

    @property
    def surface(self):
        lx, ly, lz = self.dims
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    @property
    def is_anechoic(self):
        return self.rt60 == 0

    def is_conformant(self):
        lx, ly, lz = self.dims
        lo, hi = CONFORMANT_ROOM_XY
        return (lo <= lx <= hi and lo <= ly <= hi
                and math.isclose(lz, CONFORMANT_ROOM_Z)
                and CONFORMANT_RT60[0] <= self.rt60 <= CONFORMANT_RT60[1])

    def absorption(self):
        """各墙面统一吸声系数；Sabine 关系取 Eyring 形式，使镜像源能量衰减落在目标 RT60"""
        if self.is_anechoic:
            return 1.0
        k = 24.0 * math.log(10.0) * self.volume / (self.speed_of_sound * self.surface * self.rt60)
        return 1.0 - math.exp(-k)

    def reflection_coefficient(self):
        return math.sqrt(1.0 - self.absorption())

    def contains(self, point, margin=0.0):
        p = np.asarray(point, dtype=np.float64)
        dims = np.asarray(self.dims)
        return bool(np.all(p > margin) and np.all(p < dims - margin))

    @property
    def label(self):
        """按混响时间分档，作为分房间统计的行标签"""
        if self.is_anechoic:
            return 'anechoic'
        if self.rt60 < 0.45:
            return 'low-reverb'
        if self.rt60 < 0.65:
            return 'mid-reverb'
        return 'high-reverb'


def _axis_images(s, L, order):
    """单轴镜像坐标及反射次数：x = (1-2q)s + 2nL，反射 |n-q| + |n| 次"""
    n = np.arange(-order, order + 1)
    coords = np.concatenate([s + 2.0 * n * L, -s + 2.0 * n * L])
    refl = np.concatenate([2 * np.abs(n), np.abs(n - 1) + np.abs(n)])
    return coords, refl


def image_method_rirs(room, src, mics):
    """
    镜像源法计算一个声源到多个麦克风的冲激响应，返回 [M × L]
    镜像源最大距离覆盖 c·rt60，即完整的 60 dB 衰减
    """
    src = np.asarray(src, dtype=np.float64)
    mics = np.atleast_2d(np.asarray(mics, dtype=np.float64))
    if not room.contains(src):
        raise GeometryError(f"声源 {src.tolist()} 不在房间 {room.dims} 内")
    for m in mics:
        if not room.contains(m):
            raise GeometryError(f"麦克风 {m.tolist()} 不在房间 {room.dims} 内")
        if np.linalg.norm(src - m) < 1e-9:
            raise GeometryError("声源与麦克风重合")

    fs, c = room.sample_rate, room.speed_of_sound
    beta = room.reflection_coefficient()
    direct = np.linalg.norm(mics - src, axis=1)
    if room.is_anechoic:
        max_dist = float(direct.max())
        orders = (0, 0, 0)
    else:
        max_dist = max(c * room.rt60, float(direct.max()))
        orders = tuple(int(math.ceil(max_dist / (2.0 * L))) + 1 for L in room.dims)

    length = int(math.floor(max_dist / c * fs + 0.5)) + 1
    oversample = FRACTIONAL_OVERSAMPLE if room.fractional_delay else 1
    if room.fractional_delay:
        length += FRACTIONAL_PAD

    axes = [_axis_images(src[k], room.dims[k], orders[k]) for k in range(3)]
    (cx, rx), (cy, ry), (cz, rz) = axes
    refl = rx[:, None, None] + ry[None, :, None] + rz[None, None, :]
    gain = np.power(beta, refl)

    rirs = np.zeros((len(mics), length))
    for i, m in enumerate(mics):
        dist = np.sqrt((cx - m[0])[:, None, None] ** 2
                       + (cy - m[1])[None, :, None] ** 2
                       + (cz - m[2])[None, None, :] ** 2)
        mask = (dist <= max_dist + 1e-9) & (gain > 0)
        d = dist[mask]
        amp = gain[mask] / (4.0 * math.pi * d)
        taps = np.round(d / c * fs * oversample).astype(np.int64)
        h = np.bincount(taps, weights=amp, minlength=length * oversample)
        if oversample > 1:
            h = resample_poly(h, 1, oversample) * oversample
        rirs[i] = h[:length]
    logger.debug("RIR: rt60=%.2f beta=%.3f orders=%s length=%d", room.rt60, beta, orders, length)
    return rirs


def image_method_rir(room, src, mic):
    """单个声源到单个麦克风的冲激响应"""
    return image_method_rirs(room, src, np.asarray(mic, dtype=np.float64)[np.newaxis, :])[0]


def schroeder_rt60(rir, fs, fit_db=(-5.0, -25.0)):
    """Schroeder 反向积分，在 fit_db 区间内直线拟合并外推到 60 dB"""
    energy = np.asarray(rir, dtype=np.float64) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    if edc[0] <= 0:
        raise DegenerateSignalError("冲激响应能量为零")
    edc_db = 10.0 * np.log10(np.maximum(edc / edc[0], 1e-300))
    hi, lo = fit_db
    start = int(np.argmax(edc_db <= hi))
    stop = int(np.argmax(edc_db <= lo))
    if edc_db[stop] > lo or stop - start < 2:
        raise ParameterError(f"衰减未达到 {lo} dB，无法估计 RT60")
    t = np.arange(start, stop) / fs
    slope, _ = np.polyfit(t, edc_db[start:stop], 1)
    return -60.0 / slope


# =================== 设备几何 ===================
# 设备坐标系：+y 为机器人正前方（方位角 90°），麦克风平面 z = 0
_HALF = MIC_SPACING / 2.0
LOCAL_MICS = np.array([
    [_HALF, _HALF, 0.0],
    [-_HALF, _HALF, 0.0],
    [-_HALF, -_HALF, 0.0],
    [_HALF, -_HALF, 0.0],
])
LOCAL_LOUDSPEAKERS = np.array([
    [LOUDSPEAKER_SPACING / 2.0, 0.0, -LOUDSPEAKER_DROP],
    [-LOUDSPEAKER_SPACING / 2.0, 0.0, -LOUDSPEAKER_DROP],
])
LOCAL_MECH = np.array([0.0, 0.0, -MECH_DROP])


def _rotation(heading):
    """设备坐标 → 世界坐标的绕 z 轴旋转，heading = 90 时两者重合"""
    a = math.radians(heading - 90.0)
    return np.array([
        [math.cos(a), -math.sin(a), 0.0],
        [math.sin(a), math.cos(a), 0.0],
        [0.0, 0.0, 1.0],
    ])


def quantize_azimuth(deg):
    """取最近整数度，0 记为 360"""
    q = int(np.round(float(deg))) % 360
    return 360 if q == 0 else q


@dataclass(frozen=True, eq=False)
class DeviceGeometry:
    mic_positions: np.ndarray
    loudspeaker_positions: np.ndarray
    origin: np.ndarray
    heading: float

    @property
    def mech_position(self):
        return self.origin + _rotation(self.heading) @ LOCAL_MECH

    @property
    def local_mic_positions(self):
        """设备坐标系下的麦克风位置，用于导向矢量"""
        return self.to_device_frame(self.mic_positions)

    def to_device_frame(self, points):
        points = np.asarray(points, dtype=np.float64)
        return (points - self.origin) @ _rotation(self.heading)

    def azimuth_of(self, point):
        """点相对阵列中心的设备方位角（度，未量化）"""
        local = self.to_device_frame(point)
        return math.degrees(math.atan2(local[1], local[0])) % 360.0

    def doa_of(self, point):
        return quantize_azimuth(self.azimuth_of(point))

    def point_at(self, azimuth, distance, height):
        """设备方位角 azimuth、三维距离 distance、绝对高度 height 处的世界坐标"""
        dz = height - self.origin[2]
        if distance <= abs(dz):
            raise GeometryError(f"距离 {distance} 小于高度差 {abs(dz):.2f}")
        r = math.sqrt(distance ** 2 - dz ** 2)
        a = math.radians(azimuth)
        local = np.array([r * math.cos(a), r * math.sin(a), dz])
        return self.origin + _rotation(self.heading) @ local


def place_device(room, origin, heading=90.0):
    """把 Alpha-mini 放到 origin（阵列中心），朝向 heading 度"""
    origin = np.asarray(origin, dtype=np.float64)
    rot = _rotation(heading)
    mics = origin + LOCAL_MICS @ rot.T
    speakers = origin + LOCAL_LOUDSPEAKERS @ rot.T
    mech = origin + rot @ LOCAL_MECH
    for p in np.vstack([mics, speakers, mech]):
        if not room.contains(p):
            raise GeometryError(f"设备部件 {np.round(p, 3).tolist()} 越出房间 {room.dims}")
    return DeviceGeometry(mics, speakers, origin, float(heading) % 360.0)


# =================== 场景描述 ===================
class SourceRole(str, enum.Enum):
    SPEECH = 'speech'
    KEYWORD = 'keyword'
    NOISE = 'noise'
    ECHO = 'echo'
    MECH = 'mech'


TARGET_ROLES = (SourceRole.SPEECH, SourceRole.KEYWORD)
DEVICE_ROLES = (SourceRole.ECHO, SourceRole.MECH)

# 场景 → 干扰源组合
SCENARIOS = {
    'only': (),
    'noise': (SourceRole.NOISE,),
    'echo': (SourceRole.ECHO,),
    'noise_echo': (SourceRole.NOISE, SourceRole.ECHO),
    'echo_mech': (SourceRole.ECHO, SourceRole.MECH),
}


def scenario_tag(target_role, interferers):
    head = 'Keyword' if target_role is SourceRole.KEYWORD else 'Speech'
    kinds = set(interferers)
    for key, combo in SCENARIOS.items():
        if set(combo) == kinds:
            if not combo:
                return f"{head} only"
            names = {SourceRole.NOISE: 'Noise', SourceRole.ECHO: 'Echo', SourceRole.MECH: 'Mech'}
            return '+'.join([head] + [names[r] for r in combo])
    raise ParameterError(f"不支持的干扰组合: {sorted(r.value for r in kinds)}")


@dataclass(frozen=True, eq=False)
class SourceSpec:
    """
    position: 外部声源坐标；Echo/Mech 使用设备上的位置，可为 None
    signal: 单声道信号；None 时由场景种子合成
    signal_path, signal_offset: 语料来源及截取起点，用于从场景文件复现 signal
    level_db: Noise/Mech 为 SNR，Echo 为 SER，目标声源为 None（参考电平）
    """
    role: SourceRole
    position: Optional[np.ndarray] = None
    signal: Optional[MultiChannelAudio] = None
    level_db: Optional[float] = None
    signal_path: Optional[str] = None
    signal_offset: Optional[int] = None


@dataclass(frozen=True, eq=False)
class SceneSpec:
    room: RoomSpec
    device: DeviceGeometry
    sources: Tuple[SourceSpec, ...]
    duration: float = 2.0
    scene_id: str = 'scene'

    @property
    def targets(self):
        return [s for s in self.sources if s.role in TARGET_ROLES]

    @property
    def interferers(self):
        return [s for s in self.sources if s.role not in TARGET_ROLES]

    @property
    def scenario_tag(self):
        targets = self.targets
        if not targets or len({s.role for s in targets}) != 1:
            raise ParameterError("场景必须恰好包含一种目标声源（Speech 或 Keyword）")
        return scenario_tag(targets[0].role, [s.role for s in self.interferers])

    def validate(self):
        """校验场景声源与场景标签一致，外部声源在房间内"""
        roles = [s.role for s in self.interferers]
        if len(roles) != len(set(roles)):
            raise ParameterError("每类干扰源最多一个")
        tag = self.scenario_tag
        for s in self.sources:
            if s.role in DEVICE_ROLES:
                continue
            if s.position is None:
                raise ParameterError(f"{s.role.value} 声源缺少位置")
            if not self.room.contains(s.position):
                raise GeometryError(f"{s.role.value} 声源越出房间")
            if s.role not in TARGET_ROLES and s.level_db is None:
                raise ParameterError(f"{s.role.value} 声源缺少 SNR")
        for s in self.interferers:
            if s.role in DEVICE_ROLES and s.level_db is None:
                raise ParameterError(f"{s.role.value} 声源缺少电平")
        return tag

    def source_distance(self, source):
        return float(np.linalg.norm(np.asarray(source.position) - self.device.origin))

    def is_conformant(self):
        if not self.room.is_conformant():
            return False
        for s in self.sources:
            if s.role not in DEVICE_ROLES:
                d = self.source_distance(s)
                if not CONFORMANT_DISTANCE[0] <= d <= CONFORMANT_DISTANCE[1]:
                    return False
            if s.level_db is not None:
                if not CONFORMANT_RATIO_DB[0] <= s.level_db <= CONFORMANT_RATIO_DB[1]:
                    return False
        return True


@dataclass(frozen=True)
class GroundTruth:
    keyword_present: bool
    speech_doas: Tuple[int, ...]
    noise_doas: Tuple[int, ...]
    scenario_tag: str
    room: dict = field(default_factory=dict)
    positions: dict = field(default_factory=dict)
    levels: dict = field(default_factory=dict)
    conformant: bool = True

    def to_record(self, scene_id):
        """真值 JSONL 中的一行"""
        return {
            'id': scene_id,
            'scenario': self.scenario_tag,
            'keyword': bool(self.keyword_present),
            'speech_doas': list(self.speech_doas),
            'noise_doas': list(self.noise_doas),
            'room': self.room,
            'positions': self.positions,
            'levels': self.levels,
            'conformant': bool(self.conformant),
        }


# =================== 混合 ===================
def ratio_gain(target, interferer, ratio_db):
    """使 10·log10(P_target / P_interferer) = ratio_db 的干扰增益"""
    p_t = float(np.mean(np.square(target)))
    p_i = float(np.mean(np.square(interferer)))
    if p_t <= 0 or p_i <= 0:
        raise DegenerateSignalError("目标或干扰信号功率为零，比例无定义")
    return math.sqrt(p_t / (p_i * 10.0 ** (ratio_db / 10.0)))


def mix_at_ratio(target, interferer, ratio_db):
    """按通道 0 的均方功率缩放干扰后相加"""
    if target.samples.shape != interferer.samples.shape or target.sample_rate != interferer.sample_rate:
        raise ParameterError("目标与干扰的形状或采样率不一致")
    g = ratio_gain(target.samples[0], interferer.samples[0], ratio_db)
    return MultiChannelAudio(target.samples + g * interferer.samples,
                             target.sample_rate, target.channel_roles)


# =================== 合成信号 ===================
def _normalize(x, rms=SIGNAL_RMS):
    p = math.sqrt(float(np.mean(x ** 2)))
    return x * (rms / p) if p > 0 else x


def _syllable_envelope(n, fs, rng, rate_hz=4.0, duty=0.8):
    """随机音节包络：Hann 凸包序列，间或停顿"""
    env = np.zeros(n)
    t = int(rng.uniform(0.02, 0.15) * fs)
    while t < n:
        width = int(rng.uniform(0.12, 0.25) * fs)
        if rng.random() < duty:
            seg = np.hanning(width) * rng.uniform(0.5, 1.0)
            end = min(n, t + width)
            env[t:end] += seg[:end - t]
        t += int(fs / rate_hz * rng.uniform(0.7, 1.4))
    return env


def _voiced(n, fs, rng, f0_range=(100.0, 240.0)):
    """带抖动基频的脉冲串 + 气声，带通 200–4000 Hz"""
    f0 = rng.uniform(*f0_range) * (1.0 + 0.05 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * np.arange(n) / fs))
    phase = np.cumsum(f0 / fs)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    x = pulses + 0.1 * rng.standard_normal(n)
    sos = butter(4, [200.0, min(4000.0, 0.45 * fs)], btype='bandpass', fs=fs, output='sos')
    return sosfilt(sos, x)


def synthesize_signal(role, n, fs, rng):
    """无语料时的确定性替代信号，RMS 归一化到 SIGNAL_RMS"""
    role = SourceRole(role)
    if role is SourceRole.SPEECH:
        x = _voiced(n, fs, rng) * _syllable_envelope(n, fs, rng)
    elif role is SourceRole.KEYWORD:
        # 唤醒词：一段 0.6–0.9 s 的三音节突发
        x = np.zeros(n)
        burst = min(n, int(rng.uniform(0.6, 0.9) * fs))
        start = int(rng.integers(0, max(1, n - burst)))
        env = _syllable_envelope(burst, fs, rng, rate_hz=3.5, duty=1.0)
        x[start:start + burst] = _voiced(burst, fs, rng, (150.0, 260.0)) * env
    elif role is SourceRole.NOISE:
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.fft.rfftfreq(n, 1.0 / fs)
        spec[1:] /= np.sqrt(f[1:])
        spec[0] = 0.0
        x = np.fft.irfft(spec, n)
    elif role is SourceRole.ECHO:
        # 音乐类回声：随机音符的谐波音
        x = np.zeros(n)
        t = 0
        while t < n:
            dur = min(n - t, int(rng.uniform(0.2, 0.4) * fs))
            f = 440.0 * 2.0 ** ((rng.integers(48, 85) - 69) / 12.0)
            tt = np.arange(dur) / fs
            note = sum(np.sin(2 * np.pi * f * h * tt) / h for h in (1, 2, 3))
            x[t:t + dur] = note * np.exp(-3.0 * tt)
            t += dur
        x += 0.01 * rng.standard_normal(n)
    else:
        # 电机嗡声 + 齿轮咔嗒
        tt = np.arange(n) / fs
        f_m = rng.uniform(80.0, 150.0)
        fm = 1.0 + 0.02 * np.sin(2 * np.pi * 0.5 * tt)
        x = sum(np.sin(2 * np.pi * f_m * h * np.cumsum(fm) / fs) / h for h in (1, 2, 3, 4))
        clicks = np.zeros(n)
        k = int(rng.poisson(8.0 * n / fs))
        clicks[rng.integers(0, n, size=k)] = rng.uniform(2.0, 5.0, size=k)
        sos = butter(2, [1000.0, min(6000.0, 0.45 * fs)], btype='bandpass', fs=fs, output='sos')
        x = x + sosfilt(sos, clicks)
    return _normalize(np.asarray(x, dtype=np.float64))


def load_source_signal(path, n, fs, rng=None, start=None):
    """
    读取单声道语料；不足 n 点循环拼接，否则截取 n 点
    start 为 None 时由 rng 随机选取起点。返回 (信号, 起点)
    """
    audio = read_wav(path, alpha_mini=False)
    if audio.sample_rate != fs:
        raise ParameterError(f"{path} 采样率 {audio.sample_rate} 与场景 {fs} 不符（不做重采样）")
    x = audio.channel(0)
    if len(x) == 0:
        raise DegenerateSignalError(f"{path} 为空")
    if len(x) < n:
        x = np.tile(x, int(math.ceil(n / len(x))))[:n]
        start = 0
    else:
        if start is None:
            if rng is None:
                raise ParameterError("随机截取语料需要 rng")
            start = int(rng.integers(0, len(x) - n + 1))
        start = int(start)
        if not 0 <= start <= len(x) - n:
            raise ParameterError(f"{path} 截取起点 {start} 越界")
        x = x[start:start + n]
    return _normalize(np.array(x, dtype=np.float64)), start


# =================== 场景渲染 ===================
def _source_signal(source, n, fs, rng):
    if source.signal is None:
        return synthesize_signal(source.role, n, fs, rng)
    x = source.signal.channel(0)
    if source.signal.sample_rate != fs:
        raise ParameterError("声源信号采样率与房间不符")
    if len(x) < n:
        x = np.pad(x, (0, n - len(x)))
    return np.asarray(x[:n], dtype=np.float64)


def _emitters(spec, source):
    """声源的发声位置及增益；回声平均分给两个扬声器"""
    if source.role is SourceRole.ECHO:
        return [(p, 0.5) for p in spec.device.loudspeaker_positions]
    if source.role is SourceRole.MECH:
        return [(spec.device.mech_position, 1.0)]
    return [(np.asarray(source.position, dtype=np.float64), 1.0)]


def _reverberate(spec, source, signal, n):
    out = np.zeros((4, n))
    for pos, gain in _emitters(spec, source):
        rirs = image_method_rirs(spec.room, pos, spec.device.mic_positions)
        for m in range(4):
            out[m] += gain * fftconvolve(signal, rirs[m])[:n]
    return out


def render_scene_images(spec, seed):
    """
    逐声源渲染四个麦克风上的（已按电平缩放的）分量
    返回 (images, dry)：images 与 sources 一一对应，dry 为各声源干信号
    """
    spec.validate()
    fs = spec.room.sample_rate
    n = int(round(spec.duration * fs))
    rng = np.random.default_rng(seed)
    # 先按声源顺序取信号，保证随机流与渲染顺序无关
    dry = [_source_signal(s, n, fs, rng) for s in spec.sources]
    images = [_reverberate(spec, s, x, n) for s, x in zip(spec.sources, dry)]

    target = sum(img for s, img in zip(spec.sources, images) if s.role in TARGET_ROLES)
    scaled = []
    for s, img in zip(spec.sources, images):
        if s.role in TARGET_ROLES:
            scaled.append(img)
        else:
            # SNR/SER 在 mic0 上以混响后的目标信号为参考
            scaled.append(ratio_gain(target[0], img[0], s.level_db) * img)
    return scaled, dry


def simulate_scene(spec, seed):
    """
    生成六通道录音和真值：通道 0–3 为各声源混响分量之和，
    通道 4–5 为未经处理的回声源信号（无回声时为静音），与声学回声零偏移
    """
    images, dry = render_scene_images(spec, seed)
    fs = spec.room.sample_rate
    n = images[0].shape[1]
    samples = np.zeros((6, n))
    samples[:4] = sum(images)
    for s, x in zip(spec.sources, dry):
        if s.role is SourceRole.ECHO:
            samples[4] = x
            samples[5] = x
    audio = MultiChannelAudio(samples, fs, ALPHA_MINI_ROLES)
    return audio, ground_truth(spec)


def ground_truth(spec):
    """由几何计算真值 DOA（90° 为正前方）"""
    dev = spec.device
    speech = sorted({dev.doa_of(s.position) for s in spec.targets})
    noise = sorted({dev.doa_of(s.position) for s in spec.sources if s.role is SourceRole.NOISE})
    levels = {}
    for s in spec.interferers:
        key = {SourceRole.NOISE: 'snr_db', SourceRole.ECHO: 'ser_db', SourceRole.MECH: 'mech_snr_db'}[s.role]
        levels[key] = round(float(s.level_db), 4)
    positions = {
        'device': [round(float(v), 4) for v in dev.origin],
        'heading': round(dev.heading, 4),
    }
    for s in spec.sources:
        if s.role not in DEVICE_ROLES:
            positions[s.role.value] = [round(float(v), 4) for v in s.position]
            positions[f"{s.role.value}_distance"] = round(spec.source_distance(s), 4)
    room = {
        'label': spec.room.label,
        'dims': [round(d, 4) for d in spec.room.dims],
        'rt60': round(spec.room.rt60, 4),
    }
    return GroundTruth(
        keyword_present=any(s.role is SourceRole.KEYWORD for s in spec.sources),
        speech_doas=tuple(speech),
        noise_doas=tuple(noise),
        scenario_tag=spec.scenario_tag,
        room=room,
        positions=positions,
        levels=levels,
        conformant=spec.is_conformant(),
    )


# =================== 随机场景 ===================
def _uniform(rng, lo_hi):
    lo, hi = lo_hi
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _place_source(room, device, rng, settings, attempts=200):
    """随机方位角和距离放置外部声源，保持离墙 wall_margin"""
    margin = settings['wall_margin']
    for _ in range(attempts):
        az = float(rng.uniform(0.0, 360.0))
        dist = _uniform(rng, settings['distance_range'])
        height = _uniform(rng, settings['source_height_range'])
        try:
            p = device.point_at(az, dist, height)
        except GeometryError:
            continue
        if room.contains(p, margin):
            return p
    return None


def draw_scene(settings, scenario, rng, index, signal_pool=None, target_role=SourceRole.SPEECH):
    """
    按 scene_settings 随机生成一个场景
    scenario 取 SCENARIOS 的键；signal_pool 为 {role: [wav 路径]}，缺省时合成信号
    """
    if scenario not in SCENARIOS:
        raise ParameterError(f"未知场景 {scenario}，可选 {sorted(SCENARIOS)}")
    fs = int(settings['sample_rate'])
    (x_lo, y_lo), (x_hi, y_hi) = settings['room_size_min'], settings['room_size_max']
    margin = settings['wall_margin']

    for _ in range(50):
        room = RoomSpec(
            dims=(_uniform(rng, (x_lo, x_hi)), _uniform(rng, (y_lo, y_hi)), float(settings['room_height'])),
            rt60=_uniform(rng, settings['rt60_range']),
            sample_rate=fs,
            speed_of_sound=float(settings['speed_of_sound']),
            fractional_delay=bool(settings['fractional_delay']),
        )
        origin = np.array([
            rng.uniform(margin, room.dims[0] - margin),
            rng.uniform(margin, room.dims[1] - margin),
            _uniform(rng, settings['device_height_range']),
        ])
        try:
            device = place_device(room, origin, float(rng.uniform(0.0, 360.0)))
        except GeometryError:
            continue
        positions = {}
        for role in (target_role,) + tuple(r for r in SCENARIOS[scenario] if r not in DEVICE_ROLES):
            positions[role] = _place_source(room, device, rng, settings)
        if all(p is not None for p in positions.values()):
            break
    else:
        raise GeometryError(f"场景 {index}: 无法在给定房间/距离范围内放置声源")

    level_ranges = {
        SourceRole.NOISE: settings['snr_range'],
        SourceRole.ECHO: settings['ser_range'],
        SourceRole.MECH: settings['mech_snr_range'],
    }
    sources = []
    for role in (target_role,) + SCENARIOS[scenario]:
        path = None
        if signal_pool and signal_pool.get(role.value):
            pool = signal_pool[role.value]
            path = str(pool[int(rng.integers(0, len(pool)))])
        signal = offset = None
        if path is not None:
            n = int(round(settings['duration_s'] * fs))
            x, offset = load_source_signal(path, n, fs, rng)
            signal = MultiChannelAudio(x, fs)
        sources.append(SourceSpec(
            role=role,
            position=positions.get(role),
            signal=signal,
            level_db=None if role in TARGET_ROLES else _uniform(rng, level_ranges[role]),
            signal_path=path,
            signal_offset=offset,
        ))
    return SceneSpec(room, device, tuple(sources), float(settings['duration_s']), f"{index:06d}")


# =================== 场景序列化 ===================
def scene_to_dict(spec):
    return {
        'scene_id': spec.scene_id,
        'duration': spec.duration,
        'room': {
            'dims': list(spec.room.dims),
            'rt60': spec.room.rt60,
            'sample_rate': spec.room.sample_rate,
            'speed_of_sound': spec.room.speed_of_sound,
            'fractional_delay': spec.room.fractional_delay,
        },
        'device': {
            'origin': [float(v) for v in spec.device.origin],
            'heading': spec.device.heading,
        },
        'sources': [
            {
                'role': s.role.value,
                'position': None if s.position is None else [float(v) for v in s.position],
                'level_db': s.level_db,
                'signal_path': s.signal_path,
                'signal_offset': s.signal_offset,
            }
            for s in spec.sources
        ],
    }


def scene_from_dict(data):
    room = RoomSpec(**{k: (tuple(v) if k == 'dims' else v) for k, v in data['room'].items()})
    device = place_device(room, data['device']['origin'], data['device']['heading'])
    n = int(round(data['duration'] * room.sample_rate))
    sources = []
    for s in data['sources']:
        signal = offset = None
        if s.get('signal_path'):
            # 按记录的起点重新截取并归一化，与生成时的信号一致
            x, offset = load_source_signal(s['signal_path'], n, room.sample_rate,
                                           start=s.get('signal_offset') or 0)
            signal = MultiChannelAudio(x, room.sample_rate)
        sources.append(SourceSpec(
            role=SourceRole(s['role']),
            position=None if s.get('position') is None else np.asarray(s['position'], dtype=np.float64),
            signal=signal,
            level_db=s.get('level_db'),
            signal_path=s.get('signal_path'),
            signal_offset=offset,
        ))
    return SceneSpec(room, device, tuple(sources), float(data['duration']), data.get('scene_id', 'scene'))


def save_scene_spec(path, spec):
    Path(path).write_text(json.dumps(scene_to_dict(spec), ensure_ascii=False, indent=2), encoding='utf-8')


def load_scene_spec(path):
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise ParameterError(f"无法读取场景文件 {path}: {e}") from e
    return scene_from_dict(data)
