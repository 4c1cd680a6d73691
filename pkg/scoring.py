#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
评分模块
KWS 与 SSL 的挑战赛指标、系统排名规则、学习率调度工具，以及分房间/分场景的统计表
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from errors import ParameterError, ParseError, UndefinedMetricError
from ssl_core import angle_distance

logger = logging.getLogger(__name__)

SSL_TOLERANCES = (10.0, 7.5, 5.0)
SSL_WEIGHTS = (0.3, 0.35, 0.35)
REPORT_DECIMALS = 4


@dataclass(frozen=True)
class KwsScore:
    n_key: int
    n_nonkey: int
    n_fr: int
    n_fa: int
    frr: float
    far: float
    score: float


@dataclass(frozen=True)
class SslScore:
    errors: Tuple[float, ...]
    mae: float
    acc10: float
    acc7_5: float
    acc5: float
    mae_baseline: float
    score: float

    @property
    def n(self):
        return len(self.errors)


def _as_bool(v):
    if isinstance(v, dict):
        v = v.get('has_keyword', v.get('keyword', v.get('label')))
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if v in (0, 1):
        return bool(v)
    raise ParameterError(f"KWS 标签必须是 0/1: {v!r}")


def kws_metrics(truth, pred):
    """FRR = N_FR/N_key，FAR = N_FA/N_non-key，score = FRR + FAR（所有房间合并计数）"""
    truth = [_as_bool(t) for t in truth]
    pred = [_as_bool(p) for p in pred]
    if len(truth) != len(pred):
        raise ParameterError(f"真值 {len(truth)} 条与预测 {len(pred)} 条数量不一致")
    n_key = sum(truth)
    n_nonkey = len(truth) - n_key
    if n_key == 0 or n_nonkey == 0:
        raise UndefinedMetricError(f"需要同时有正例和负例 (正例 {n_key}, 负例 {n_nonkey})")
    n_fr = sum(1 for t, p in zip(truth, pred) if t and not p)
    n_fa = sum(1 for t, p in zip(truth, pred) if p and not t)
    frr = n_fr / n_key
    far = n_fa / n_nonkey
    return KwsScore(n_key, n_nonkey, n_fr, n_fa, frr, far, frr + far)


def ssl_errors(truth, pred):
    """逐条环形角度误差（度）"""
    if len(truth) != len(pred):
        raise ParameterError(f"真值 {len(truth)} 条与预测 {len(pred)} 条数量不一致")
    return [float(angle_distance(t, p)) for t, p in zip(truth, pred)]


def ssl_metrics(truth, pred, mae_baseline):
    """score = 0.3·ACC10 + 0.35·ACC7.5 + 0.35·ACC5 + (1 − MAE/MAE_baseline)"""
    if not mae_baseline > 0 or not math.isfinite(mae_baseline):
        raise ParameterError(f"mae_baseline 必须为正: {mae_baseline}")
    errors = ssl_errors(truth, pred)
    if not errors:
        raise ParameterError("SSL 评分需要至少一条样本")
    e = np.asarray(errors)
    mae = float(np.mean(e))
    accs = [float(np.mean(e <= delta)) for delta in SSL_TOLERANCES]
    score = sum(w * a for w, a in zip(SSL_WEIGHTS, accs)) + (1.0 - mae / mae_baseline)
    return SslScore(tuple(errors), mae, accs[0], accs[1], accs[2], float(mae_baseline), score)


# =================== 排名 ===================
def rank_systems(entries, direction):
    """
    KWS 分数升序、SSL 分数降序；分数相同看时延（低者优先），再相同保持提交顺序
    entries 为含 score 和 time_delay_ms 的字典列表
    """
    if direction not in ('kws', 'ssl'):
        raise ParameterError(f"direction 必须是 kws 或 ssl: {direction}")
    for e in entries:
        if not math.isfinite(float(e['score'])):
            raise ParameterError(f"分数必须有限: {e['score']}")
    sign = 1.0 if direction == 'kws' else -1.0
    # sorted 是稳定排序，等价于以提交顺序做最后一级比较
    return sorted(entries, key=lambda e: (sign * float(e['score']), float(e.get('time_delay_ms', 0.0))))


# =================== 学习率 ===================
def lr_at_step(lr0, lr_final, total_steps, j):
    """对数线性衰减：lr_j = lr0·exp(j/(S−1)·log(lr_final/lr0))"""
    if lr0 <= 0 or lr_final <= 0:
        raise ParameterError(f"学习率必须为正: lr0={lr0}, lr_final={lr_final}")
    if total_steps < 2:
        raise ParameterError(f"总步数至少为 2: {total_steps}")
    if not 0 <= j <= total_steps - 1:
        raise ParameterError(f"步数 j 超出 [0, {total_steps - 1}]: {j}")
    return lr0 * math.exp(j / (total_steps - 1) * math.log(lr_final / lr0))


def plateau_halving_lr(dev_losses, lr0=0.001):
    """
    SSL 基线调度：从 lr0 开始，开发集损失没有刷新最好值时学习率减半
    返回每个 epoch 之后使用的学习率
    """
    if lr0 <= 0:
        raise ParameterError(f"学习率必须为正: {lr0}")
    lr = float(lr0)
    best = math.inf
    schedule = []
    for loss in dev_losses:
        if loss < best:
            best = loss
        else:
            lr /= 2.0
        schedule.append(lr)
    return schedule


# =================== 报告 ===================
@dataclass
class ScoreReport:
    track: str
    overall: dict
    breakdown: List[dict] = field(default_factory=list)
    n_entries: int = 0
    time_delay_ms: float = 0.0
    system: Optional[str] = None

    @property
    def score(self):
        return self.overall['score']

    def to_dict(self):
        return _round(asdict(self))

    def to_json(self):
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.to_json() + '\n', encoding='utf-8')


def _round(obj):
    if isinstance(obj, float):
        return round(obj, REPORT_DECIMALS)
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def load_report(path):
    """读取评分报告 JSON，用于排名"""
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
        return ScoreReport(
            track=data['track'],
            overall=data['overall'],
            breakdown=data.get('breakdown', []),
            n_entries=data.get('n_entries', 0),
            time_delay_ms=float(data.get('time_delay_ms', 0.0)),
            system=data.get('system') or Path(path).stem,
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ParseError(f"无法读取评分报告: {e}", path=path) from e


def kws_breakdown(frame):
    """
    frame 列：room, scenario, truth, pred
    关键词场景报告 FRR，非关键词场景报告 FAR
    """
    rows = []
    for (room, scenario), g in frame.groupby(['room', 'scenario'], sort=True):
        keyword = bool(g['truth'].iloc[0])
        n = len(g)
        if keyword:
            n_err = int(((g['truth']) & (~g['pred'])).sum())
            rows.append({'room': room, 'scenario': scenario, 'n': n, 'metric': 'frr', 'value': n_err / n})
        else:
            n_err = int(((~g['truth']) & (g['pred'])).sum())
            rows.append({'room': room, 'scenario': scenario, 'n': n, 'metric': 'far', 'value': n_err / n})
    return rows


def ssl_breakdown(frame):
    """frame 列：room, scenario, error"""
    rows = []
    for (room, scenario), g in frame.groupby(['room', 'scenario'], sort=True):
        e = g['error'].to_numpy(dtype=np.float64)
        rows.append({
            'room': room,
            'scenario': scenario,
            'n': len(g),
            'acc10': float(np.mean(e <= 10.0)),
            'acc7_5': float(np.mean(e <= 7.5)),
            'acc5': float(np.mean(e <= 5.0)),
            'mae': float(np.mean(e)),
        })
    return rows


def score_kws(records, time_delay_ms=0.0, system=None):
    """records: [{room, scenario, truth: bool, pred: bool}]"""
    frame = pd.DataFrame.from_records(records, columns=['room', 'scenario', 'truth', 'pred'])
    frame['truth'] = frame['truth'].astype(bool)
    frame['pred'] = frame['pred'].astype(bool)
    result = kws_metrics(frame['truth'].tolist(), frame['pred'].tolist())
    return ScoreReport('kws', asdict(result), kws_breakdown(frame), len(frame), float(time_delay_ms), system)


def score_ssl(records, mae_baseline, time_delay_ms=0.0, system=None):
    """records: [{room, scenario, truth: int, pred: int}]"""
    frame = pd.DataFrame.from_records(records, columns=['room', 'scenario', 'truth', 'pred'])
    result = ssl_metrics(frame['truth'].tolist(), frame['pred'].tolist(), mae_baseline)
    frame['error'] = list(result.errors)
    overall = asdict(result)
    overall.pop('errors')
    overall['n'] = result.n
    return ScoreReport('ssl', overall, ssl_breakdown(frame), len(frame), float(time_delay_ms), system)
