#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
VoxLocus - Alpha-mini 语音挑战赛工具包
主程序入口：场景仿真、前端处理、系统判决与评分
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

from config_manager import apply_overrides, conformance_issues, load_config, save_config, show_config, \
    validate_config
from errors import EXIT_DATA, EXIT_OK, ConfigError, ParseError, VoxLocusError
from parallel_processor import process_entries
from pipeline import features_entry, frontend_entry, kws_decide_entry, read_ground_truth, read_labels, \
    read_manifest, score_labels, simulate_entry, ssl_decide_entry, write_jsonl, write_labels
from scoring import load_report, rank_systems
from utils import check_dependencies, err_console, format_time, setup_logging

logger = logging.getLogger(__name__)

# 结果表格输出到 stdout，日志和进度条输出到 stderr
console = Console()

VERSION = "1.0.0"


# =================== 参数 ===================
def build_parser():
    parser = argparse.ArgumentParser(prog="voxlocus", description="Alpha-mini 语音挑战赛工具包（KWS / SSL）")
    parser.add_argument("--config", help="配置文件路径（默认 $VOXLOCUS_CONFIG_DIR/config.json 或脚本目录）")
    parser.add_argument("--debug", action="store_true", default=None, help="输出调试日志")
    parser.add_argument("--workers", type=int, help="工作进程数，1 为顺序处理，0 为自动")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="仿真六通道场景，写出 WAV、清单和真值")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="输出目录（默认 processing_options.output_folder）")
    p.add_argument("--track", choices=["kws", "ssl"])
    p.add_argument("--duration", type=float, dest="duration_s")

    p = sub.add_parser("frontend", help="AEC → SRP-PHAT → DSBF，写出波束输出和 DOA 标签")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-aec", action="store_false", dest="use_aec", default=None)
    p.add_argument("--filter-len", type=int)
    p.add_argument("--block-len", type=int)
    p.add_argument("--step-size", type=float)
    p.add_argument("--regularization", type=float)
    p.add_argument("--interp", type=int)
    p.add_argument("--no-posteriors", action="store_false", dest="write_posteriors", default=None)

    p = sub.add_parser("kws-decide", help="后验文件清单 → KWS 标签文件")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--w-smooth", type=int)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("ssl-decide", help="SSL/SNS 向量文件清单 → SSL 标签文件")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("features", help="写出 KWS 梅尔特征和 SSL 输入张量")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("score", help="按挑战赛规则评分")
    p.add_argument("--track", choices=["kws", "ssl"], required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--mae-baseline", type=float)
    p.add_argument("--time-delay-ms", type=float)
    p.add_argument("--system")
    p.add_argument("--out", help="评分报告 JSON；省略时打印到 stdout")

    p = sub.add_parser("rank", help="按排名规则对评分报告排序")
    p.add_argument("--track", choices=["kws", "ssl"], required=True)
    p.add_argument("reports", nargs="+")

    p = sub.add_parser("show-config", help="显示生效的配置")
    p.add_argument("--save", metavar="PATH", help="把生效的配置（含命令行覆盖）写到 PATH")
    return parser


def overrides_from_args(args):
    """命令行参数 → 点分配置键"""
    mapping = {
        "debug": "processing_options.debug_mode",
        "workers": "performance_settings.num_workers",
        "track": "scene_settings.track",
        "duration_s": "scene_settings.duration_s",
        "use_aec": "frontend_settings.use_aec",
        "filter_len": "frontend_settings.filter_len",
        "block_len": "frontend_settings.block_len",
        "step_size": "frontend_settings.step_size",
        "regularization": "frontend_settings.regularization",
        "interp": "frontend_settings.interp",
        "write_posteriors": "frontend_settings.write_posteriors",
        "w_smooth": "kws_settings.w_smooth",
        "threshold": "kws_settings.threshold",
        "mae_baseline": "scoring_settings.mae_baseline",
        "time_delay_ms": "scoring_settings.time_delay_ms",
    }
    # rank 的 --track 只是排序方向
    if args.command in ("score", "rank"):
        mapping.pop("track")
    return {key: getattr(args, name) for name, key in mapping.items() if hasattr(args, name)}


# =================== 批处理与展示 ===================
def run_batch(description, worker, items, config):
    """带进度条的批处理"""
    with Progress(
            SpinnerColumn(spinner_name="dots"),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(bar_width=40, complete_style="green", finished_style="green"),
            TextColumn("{task.completed}/{task.total}"),
            TimeElapsedColumn(),
            console=err_console,
            transient=True,
    ) as progress:
        task = progress.add_task(description, total=len(items))
        results = process_entries(worker, items, config, on_result=lambda _: progress.advance(task))
    return results


def display_processing_results(title, results, elapsed_time):
    """显示处理结果的统计信息"""
    total = len(results)
    failed = [r for r in results if not r['success']]
    processed = total - len(failed)
    success_rate = (processed / total * 100) if total > 0 else 100.0

    results_table = Table(box=box.SIMPLE_HEAD, border_style="green")
    results_table.add_column("项目", style="dim cyan", justify="right")
    results_table.add_column("数值", style="green bold")
    results_table.add_column("详情", style="dim")
    results_table.add_row("总条目数", f"{total}", "")
    results_table.add_row("成功处理", f"{processed}",
                          f"[{'green' if success_rate > 90 else 'yellow' if success_rate > 70 else 'red'}]{success_rate:.1f}%[/]")
    results_table.add_row("处理失败", f"{len(failed)}",
                          "[dim red]详见下方失败列表[/dim red]" if failed else "[green]无[/green]")
    results_table.add_row("总处理时间", format_time(elapsed_time), "")
    console.print(Panel(results_table, title=f"[bold green]{title}[/bold green]", border_style="green",
                        box=box.ROUNDED, width=80))

    if failed:
        failed_table = Table(box=box.SIMPLE, show_header=True, border_style="red")
        failed_table.add_column("№", style="dim", justify="right")
        failed_table.add_column("id", style="red")
        failed_table.add_column("原因", style="yellow dim")
        for i, r in enumerate(failed, 1):
            failed_table.add_row(f"{i}", r['id'], f"{r['error']['error']}: {r['error']['message']}")
        console.print(Panel(failed_table, title=f"[bold red]处理失败的条目 ({len(failed)})[/bold red]",
                            border_style="red", box=box.ROUNDED, width=100))


def write_summary(out_dir, command, results):
    """每次运行的摘要：成功数量与失败条目"""
    failed = [{'id': r['id'], 'error': r['error']} for r in results if not r['success']]
    summary = {
        'command': command,
        'total': len(results),
        'processed': len(results) - len(failed),
        'failed': failed,
    }
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / 'summary.json').write_text(
        json.dumps(summary, ensure_ascii=False, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return summary


def finish(title, command, results, out_dir, started):
    display_processing_results(title, results, time.time() - started)
    summary = write_summary(out_dir, command, results)
    return EXIT_DATA if summary['failed'] else EXIT_OK


def resolve_path(path, manifest_path):
    """相对路径先按当前目录解析，不存在时按清单所在目录解析"""
    p = Path(path)
    if p.is_absolute() or p.exists():
        return str(p)
    return str(Path(manifest_path).parent / p)


def display_report(report):
    table = Table(box=box.SIMPLE_HEAD, border_style="blue", title=f"{report.track.upper()} 评分")
    table.add_column("房间", style="bright_cyan")
    table.add_column("场景")
    table.add_column("样本数", justify="right")
    if report.track == 'kws':
        table.add_column("指标")
        table.add_column("数值", justify="right", style="yellow")
        for row in report.breakdown:
            table.add_row(row['room'], row['scenario'], str(row['n']), row['metric'].upper(), f"{row['value']:.4f}")
        overall = report.overall
        table.add_section()
        table.add_row("合计", "", str(overall['n_key'] + overall['n_nonkey']), "FRR / FAR",
                      f"{overall['frr']:.4f} / {overall['far']:.4f}")
    else:
        for col in ("ACC10", "ACC7.5", "ACC5", "MAE"):
            table.add_column(col, justify="right", style="yellow")
        for row in report.breakdown:
            table.add_row(row['room'], row['scenario'], str(row['n']),
                          f"{row['acc10']:.4f}", f"{row['acc7_5']:.4f}", f"{row['acc5']:.4f}", f"{row['mae']:.2f}")
        overall = report.overall
        table.add_section()
        table.add_row("合计", "", str(overall['n']), f"{overall['acc10']:.4f}", f"{overall['acc7_5']:.4f}",
                      f"{overall['acc5']:.4f}", f"{overall['mae']:.2f}")
    console.print(table)
    console.print(f"[bold green]Score = {report.score:.4f}[/bold green]")


# =================== 子命令 ===================
def cmd_simulate(args, config):
    out_dir = Path(args.out or config['processing_options']['output_folder'])
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.count < 0:
        raise ConfigError("--count 不能为负", ["count"])
    issues = conformance_issues(config)
    items = [{'id': f"{i:06d}", 'index': i, 'seed': args.seed, 'out_dir': str(out_dir)}
             for i in range(args.count)]

    started = time.time()
    results = run_batch("[cyan]仿真场景中...", simulate_entry, items, config)
    ok = [r for r in results if r['success']]
    write_jsonl(out_dir / 'manifest.jsonl', [{'id': r['id'], 'wav_path': r['wav_path']} for r in ok])
    truth = []
    for r in ok:
        record = r['truth']
        if issues:
            record['conformant'] = False
        truth.append(record)
    write_jsonl(out_dir / 'ground_truth.jsonl', truth)
    return finish("仿真结果摘要", "simulate", results, out_dir, started)


def cmd_frontend(args, config):
    out_dir = Path(args.out)
    entries = read_manifest(args.manifest, required=('id', 'wav_path'))
    items = [{'id': e['id'], 'wav_path': resolve_path(e['wav_path'], args.manifest), 'out_dir': str(out_dir)}
             for e in entries]

    started = time.time()
    results = run_batch("[cyan]前端处理中...", frontend_entry, items, config)
    ok = [r for r in results if r['success']]
    out_dir.mkdir(parents=True, exist_ok=True)
    write_labels(out_dir / 'frontend_labels.csv', {r['id']: r['doa'] for r in ok}, 'ssl')
    write_jsonl(out_dir / 'vectors.jsonl', [{'id': r['id'], 'vector_path': r['vector_path']} for r in ok])
    write_jsonl(out_dir / 'frontend.jsonl',
                [{k: r[k] for k in ('id', 'doa', 'beam_path', 'adapted', 'erle_db')} for r in ok])
    if config['frontend_settings']['write_posteriors']:
        write_jsonl(out_dir / 'posteriors.jsonl',
                    [{'id': r['id'], 'posterior_path': r['posterior_path']} for r in ok])
    return finish("前端处理结果摘要", "frontend", results, out_dir, started)


def _decide(args, config, worker, track, title):
    entries = read_manifest(args.manifest)
    items = []
    for e in entries:
        item = dict(e)
        for key in ('posterior_path', 'vector_path', 'path'):
            if key in item:
                item[key] = resolve_path(item[key], args.manifest)
        items.append(item)

    started = time.time()
    results = run_batch(f"[cyan]{title}中...", worker, items, config)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_labels(out_path, {r['id']: r['label'] for r in results if r['success']}, track)
    return finish(f"{title}结果摘要", track + "-decide", results, out_path.parent, started)


def cmd_kws_decide(args, config):
    return _decide(args, config, kws_decide_entry, 'kws', "KWS 判决")


def cmd_ssl_decide(args, config):
    return _decide(args, config, ssl_decide_entry, 'ssl', "SSL 判决")


def cmd_features(args, config):
    out_dir = Path(args.out)
    entries = read_manifest(args.manifest, required=('id', 'wav_path'))
    items = [{'id': e['id'], 'wav_path': resolve_path(e['wav_path'], args.manifest), 'out_dir': str(out_dir)}
             for e in entries]
    started = time.time()
    results = run_batch("[cyan]提取特征中...", features_entry, items, config)
    write_jsonl(out_dir / 'features.jsonl',
                [{k: v for k, v in r.items() if k not in ('success', 'error')} for r in results if r['success']])
    return finish("特征提取结果摘要", "features", results, out_dir, started)


def cmd_score(args, config):
    truth = read_ground_truth(args.truth)
    labels = read_labels(args.labels, args.track)
    report = score_labels(args.track, truth, labels, config, args.system)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report.save(args.out)
        display_report(report)
    else:
        print(report.to_json())
    return EXIT_OK


def cmd_rank(args, config):
    reports = [load_report(p) for p in args.reports]
    for r in reports:
        if r.track != args.track:
            raise ParseError(f"报告赛道 {r.track} 与 --track {args.track} 不符", path=r.system)
    entries = [{'system': r.system, 'score': r.score, 'time_delay_ms': r.time_delay_ms} for r in reports]
    ranked = rank_systems(entries, args.track)

    table = Table(box=box.SIMPLE_HEAD, border_style="gold1", title=f"{args.track.upper()} 排名")
    table.add_column("名次", justify="right", style="bold")
    table.add_column("系统", style="bright_cyan")
    table.add_column("分数", justify="right", style="yellow")
    table.add_column("时延 (ms)", justify="right")
    for i, e in enumerate(ranked, 1):
        table.add_row(str(i), str(e['system']), f"{e['score']:.4f}", f"{e['time_delay_ms']:g}")
    console.print(table)
    return EXIT_OK


def cmd_show_config(args, config):
    show_config(config, console)
    if args.save:
        if not save_config(config, args.save):
            raise ConfigError(f"无法保存配置到 {args.save}")
        console.print(f"[green]配置已保存到 {args.save}[/green]")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "frontend": cmd_frontend,
    "kws-decide": cmd_kws_decide,
    "ssl-decide": cmd_ssl_decide,
    "features": cmd_features,
    "score": cmd_score,
    "rank": cmd_rank,
    "show-config": cmd_show_config,
}


def main(argv=None):
    """主函数，返回退出码"""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(bool(args.debug))
    try:
        config = load_config(args.config)
        config = apply_overrides(config, overrides_from_args(args))
        validate_config(config)
        setup_logging(config['processing_options']['debug_mode'])
        if config['processing_options']['debug_mode']:
            check_dependencies()
        return COMMANDS[args.command](args, config)
    except VoxLocusError as e:
        logger.error("%s", e)
        print(json.dumps(e.to_dict(), ensure_ascii=False), file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        err_console.print("\n[yellow]程序被用户中断[/yellow]")
        sys.exit(130)
