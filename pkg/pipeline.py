#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
流水线模块
清单 / 标签 / 真值文件读写，以及 simulate、frontend、features、kws-decide、ssl-decide 的单条目工作函数
工作函数都在模块顶层，供多进程池调用
"""

import json
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from audio_core import ALPHA_MINI_ROLES, MultiChannelAudio, assemble_ssl_features, kws_features, mono, read_wav, \
    write_wav
from errors import DataError, LabelError, MissingIdError, ParameterError, ParseError
from frontend_dsp import AecConfig, FrontendConfig, run_frontend
from kws_post import decide_keyword, energy_gate_posteriors, posterior_provider, write_posteriors
from room_sim import LOCAL_LOUDSPEAKERS, LOCAL_MICS, DeviceGeometry, SourceRole, draw_scene, save_scene_spec, \
    simulate_scene
from scoring import score_kws, score_ssl
from ssl_core import angle_distance, decide_from_file, write_doa_vectors
from utils import derive_rng

logger = logging.getLogger(__name__)

OUTPUT_PEAK = 0.5
SCENARIO_ORDER = ("only", "noise", "echo", "noise_echo", "echo_mech")


# =================== 清单 ===================
def read_manifest(path, required=('id',)):
    """JSON-lines 清单，每行一个对象；id 必须唯一"""
    try:
        lines = Path(path).read_text(encoding='utf-8').splitlines()
    except OSError as e:
        raise ParseError(f"无法读取清单: {e}", path=path) from e
    entries, seen = [], set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"JSON 解析失败: {e.msg}", line=lineno, path=path) from e
        if not isinstance(entry, dict):
            raise ParseError("每行必须是 JSON 对象", line=lineno, path=path)
        for key in required:
            if key not in entry:
                raise ParseError(f"缺少字段 {key}", line=lineno, path=path)
        entry['id'] = str(entry['id'])
        if entry['id'] in seen:
            raise ParseError(f"重复的 id: {entry['id']}", line=lineno, path=path)
        seen.add(entry['id'])
        entries.append(entry)
    return entries


def write_jsonl(path, records):
    """按 id 排序写出 JSON-lines"""
    records = sorted(records, key=lambda r: r['id'])
    text = ''.join(json.dumps(r, ensure_ascii=False, sort_keys=True) + '\n' for r in records)
    Path(path).write_text(text, encoding='utf-8')


def read_ground_truth(path):
    return {e['id']: e for e in read_manifest(path, required=('id', 'scenario', 'keyword', 'speech_doas'))}


# =================== 标签文件 ===================
def _check_label(value, track, row, path=None):
    """KWS 只允许 0/1，SSL 只允许 1..360 的整数"""
    text = str(value).strip()
    if track == 'kws':
        if text not in ('0', '1'):
            raise LabelError(f"KWS 标签必须是 0 或 1，实际 {text!r}", line=row, path=path)
        return int(text)
    if not text.isdigit() or not 1 <= int(text) <= 360:
        raise LabelError(f"SSL 标签必须是 1..360 的整数，实际 {text!r}", line=row, path=path)
    return int(text)


def write_labels(path, labels, track):
    """labels: {id: label}；写出前同样检查字母表"""
    rows = sorted(labels.items())
    for i, (_, label) in enumerate(rows, start=2):
        _check_label(label, track, i)
    frame = pd.DataFrame(rows, columns=['id', 'label'])
    frame.to_csv(path, index=False, lineterminator='\n')


def read_labels(path, track):
    """读取 id,label 的 CSV；行号按文件物理行（表头为第 1 行）"""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"无法读取标签文件: {e}", path=path) from e
    if list(frame.columns) != ['id', 'label']:
        raise LabelError(f"表头必须是 id,label，实际 {','.join(frame.columns)}", line=1, path=path)
    labels = {}
    for idx, (entry_id, label) in enumerate(zip(frame['id'], frame['label'])):
        row = idx + 2
        if not entry_id:
            raise LabelError("id 为空", line=row, path=path)
        if entry_id in labels:
            raise LabelError(f"重复的 id: {entry_id}", line=row, path=path)
        labels[entry_id] = _check_label(label, track, row, path)
    return labels


# =================== simulate ===================
def _choose(rng, weights):
    names = [n for n in SCENARIO_ORDER if weights.get(n, 0) > 0]
    p = np.array([weights[n] for n in names], dtype=np.float64)
    return names[int(rng.choice(len(names), p=p / p.sum()))]


def signal_pool(settings):
    """signal_folders 中每类声源的 WAV 列表（排序后保证可复现）"""
    pool = {}
    for role, folder in settings.get('signal_folders', {}).items():
        files = sorted(str(p) for p in Path(folder).glob('*.wav'))
        if not files:
            logger.warning("%s 目录 %s 中没有 WAV，改用合成信号", role, folder)
            continue
        pool[role] = files
    return pool


def _output_path(out_dir, sub, name):
    path = Path(out_dir) / sub / name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _peak_gain(x):
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    return OUTPUT_PEAK / peak if peak > 0 else 1.0


def simulate_entry(item, config):
    """
    生成一个场景：item = {id, index, seed, out_dir}
    场景类型、声源和房间都由 (seed, index) 派生的随机数决定
    """
    settings = config['scene_settings']
    rng = derive_rng(item['seed'], item['index'])
    scenario = _choose(rng, settings['scenario_weights'])
    target = SourceRole.SPEECH
    if settings['track'] == 'kws' and rng.random() < settings['keyword_ratio']:
        target = SourceRole.KEYWORD

    spec = draw_scene(settings, scenario, rng, item['index'], signal_pool(settings), target)
    audio, truth = simulate_scene(spec, int(rng.integers(0, 2 ** 63 - 1)))

    # 麦克风四路共用一个增益，参考两路共用一个增益，峰值都归一到 OUTPUT_PEAK
    samples = np.array(audio.samples)
    mic_gain = _peak_gain(samples[:4])
    ref_gain = _peak_gain(samples[4:])
    samples[:4] *= mic_gain
    samples[4:] *= ref_gain

    wav_path = _output_path(item['out_dir'], 'wav', f"{item['id']}.wav")
    write_wav(wav_path, MultiChannelAudio(samples, audio.sample_rate, ALPHA_MINI_ROLES))
    save_scene_spec(_output_path(item['out_dir'], 'scenes', f"{item['id']}.json"), spec)

    record = truth.to_record(item['id'])
    record['gains'] = {'mic': round(mic_gain, 6), 'ref': round(ref_gain, 6)}
    return {'id': item['id'], 'wav_path': str(wav_path), 'truth': record}


# =================== frontend ===================
def alpha_mini_geometry():
    """设备坐标系下的名义几何（原点为阵列中心，朝向 90°）"""
    return DeviceGeometry(LOCAL_MICS.copy(), LOCAL_LOUDSPEAKERS.copy(), np.zeros(3), 90.0)


def frontend_config(config):
    front = config['frontend_settings']
    return FrontendConfig(
        aec=AecConfig(front['filter_len'], front['block_len'], float(front['step_size']),
                      float(front['regularization'])),
        use_aec=bool(front['use_aec']),
        interp=int(front['interp']),
        speed_of_sound=float(config['scene_settings']['speed_of_sound']),
    )


def frontend_entry(item, config):
    """AEC → SRP-PHAT → DSBF；写出单声道波束输出、方向分布，以及可选的伪后验"""
    audio = read_wav(item['wav_path'])
    cfg = frontend_config(config)
    if cfg.use_aec and not audio.is_alpha_mini:
        raise DataError(f"{item['wav_path']} 不是六通道格式，无法取得参考通道做 AEC")
    result = run_frontend(audio, alpha_mini_geometry(), cfg)

    beam_path = _output_path(item['out_dir'], 'beam', f"{item['id']}.wav")
    write_wav(beam_path, mono(result.beam, audio.sample_rate))
    doa_path = _output_path(item['out_dir'], 'doa', f"{item['id']}.txt")
    write_doa_vectors(doa_path, [result.distribution])

    out = {
        'id': item['id'],
        'doa': result.doa,
        'beam_path': str(beam_path),
        'vector_path': str(doa_path),
        'adapted': result.adapted,
        'erle_db': None if result.erle_db is None or math.isinf(result.erle_db) else round(result.erle_db, 4),
    }
    if config['frontend_settings']['write_posteriors']:
        post_path = _output_path(item['out_dir'], 'posteriors', f"{item['id']}.txt")
        write_posteriors(post_path, energy_gate_posteriors(result.beam, audio.sample_rate))
        out['posterior_path'] = str(post_path)
    return out


def features_entry(item, config):
    """写出 KWS 梅尔特征（mic0 或单声道）和 SSL 输入张量（五通道以上才有）"""
    audio = read_wav(item['wav_path'])
    kws = kws_features(audio.channel(0), sample_rate=audio.sample_rate)
    kws_path = _output_path(item['out_dir'], 'features', f"{item['id']}_kws.npy")
    np.save(kws_path, kws.values)
    out = {'id': item['id'], 'kws_path': str(kws_path), 'kws_shape': list(kws.values.shape)}
    if audio.n_channels >= 5:
        tensor = assemble_ssl_features(audio)
        ssl_path = _output_path(item['out_dir'], 'features', f"{item['id']}_ssl.npy")
        np.save(ssl_path, tensor.values)
        out.update({'ssl_path': str(ssl_path), 'ssl_shape': list(tensor.shape)})
    return out


# =================== 判决 ===================
def kws_decide_entry(item, config):
    kws = config['kws_settings']
    path = item.get('posterior_path') or item.get('path')
    if not path:
        raise ParameterError(f"条目 {item['id']} 缺少 posterior_path")
    decision = decide_keyword(posterior_provider(path), kws['w_smooth'], kws['threshold'])
    return {'id': item['id'], 'label': decision.label, 'trigger_frame': decision.trigger_frame,
            'peak_confidence': round(decision.peak_confidence, 6)}


def ssl_decide_entry(item, config):
    path = item.get('vector_path') or item.get('path')
    if not path:
        raise ParameterError(f"条目 {item['id']} 缺少 vector_path")
    return {'id': item['id'], 'label': decide_from_file(path)}


# =================== 评分 ===================
def align_ids(truth, labels):
    """真值与标签的 id 必须一一对应"""
    for entry_id in sorted(truth):
        if entry_id not in labels:
            raise MissingIdError(f"标签文件缺少 id {entry_id}")
    for entry_id in sorted(labels):
        if entry_id not in truth:
            raise MissingIdError(f"真值中没有 id {entry_id}")


def nearest_truth_doa(doas, pred):
    """多个语音方向时取离预测最近的一个"""
    if not doas:
        raise DataError("真值中没有语音方向")
    return min(doas, key=lambda d: (angle_distance(d, pred), d))


def score_labels(track, truth, labels, config, system=None):
    align_ids(truth, labels)
    scoring = config['scoring_settings']
    records = []
    for entry_id in sorted(truth):
        t = truth[entry_id]
        room = t.get('room', {}).get('label', 'unknown')
        if track == 'kws':
            records.append({'room': room, 'scenario': t['scenario'],
                            'truth': bool(t['keyword']), 'pred': bool(labels[entry_id])})
        else:
            pred = labels[entry_id]
            records.append({'room': room, 'scenario': t['scenario'],
                            'truth': nearest_truth_doa(t['speech_doas'], pred), 'pred': pred})
    if track == 'kws':
        return score_kws(records, scoring['time_delay_ms'], system)
    return score_ssl(records, scoring['mae_baseline'], scoring['time_delay_ms'], system)
