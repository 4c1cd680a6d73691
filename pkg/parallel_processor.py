#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
并行处理模块
多进程逐条处理清单条目；无论完成顺序如何，结果都按 id 排序返回
"""

import logging
from multiprocessing import Pool, cpu_count

from errors import VoxLocusError

logger = logging.getLogger(__name__)


def _process_item(args):
    """
    处理单个条目的工作函数
    worker 必须是模块顶层函数，才能被子进程序列化
    """
    worker, item, config = args
    try:
        result = worker(item, config)
        result.setdefault('id', item['id'])
        result.setdefault('success', True)
        result.setdefault('error', None)
        return result
    except VoxLocusError as e:
        logger.warning("条目 %s 处理失败: %s", item['id'], e)
        return {'id': item['id'], 'success': False, 'error': e.to_dict()}
    except (OSError, ValueError, ArithmeticError) as e:
        error_msg = f"{type(e).__name__}: {str(e)}"
        logger.warning("条目 %s 处理失败: %s", item['id'], error_msg)
        return {'id': item['id'], 'success': False,
                'error': {'error': type(e).__name__, 'message': str(e), 'exit_code': 3}}


def _process_batch(batch_args):
    """处理一批条目，减少进程间往返"""
    worker, batch, config = batch_args
    return [_process_item((worker, item, config)) for item in batch]


def _make_batches(items, batch_size):
    return [items[i:i + batch_size] for i in range(0, len(items), batch_size)]


def resolve_workers(config, total):
    """0 表示自动选择（CPU 核心数 - 1），且不超过条目数和 8"""
    perf = config.get("performance_settings", {})
    num_workers = perf.get("num_workers", 0)
    if num_workers <= 0:
        num_workers = max(1, cpu_count() - 1)
    return min(num_workers, max(1, total), 8)


def process_entries(worker, items, config, on_result=None):
    """
    对 items（含 id 的字典）逐条调用 worker(item, config)
    on_result 在每条结果返回时被调用，用于更新进度条
    返回按 id 排序的结果列表
    """
    total = len(items)
    if total == 0:
        return []

    perf = config.get("performance_settings", {})
    use_parallel = perf.get("parallel_processing", True)
    num_workers = resolve_workers(config, total)

    if not use_parallel or num_workers == 1:
        return process_sequentially(worker, items, config, on_result)

    batch_size = max(1, perf.get("batch_size", 1))
    logger.debug("启用多进程并行处理，%d 个工作进程，批大小 %d", num_workers, batch_size)

    results = []
    batches = [(worker, batch, config) for batch in _make_batches(items, batch_size)]
    with Pool(processes=num_workers) as pool:
        for batch_results in pool.imap_unordered(_process_batch, batches):
            for result in batch_results:
                results.append(result)
                if on_result:
                    on_result(result)

    return sorted(results, key=lambda r: r['id'])


def process_sequentially(worker, items, config, on_result=None):
    """顺序处理（非并行方式）"""
    logger.debug("使用单进程顺序处理 %d 个条目", len(items))
    results = []
    for item in items:
        result = _process_item((worker, item, config))
        results.append(result)
        if on_result:
            on_result(result)
    return sorted(results, key=lambda r: r['id'])
