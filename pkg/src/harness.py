"""
実験ハーネスモジュール
訓練系列の実行（HAM 更新あり・なし）、HAM の永続化、レポート出力、結果DB への保存を提供
"""
import io
import json
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional

import pandas as pd
from dotenv import load_dotenv

from grammar import load_grammar
from logger import SearchEventLogger, get_search_logger, setup_logger
from memory import HamConfig, HamState, full_update, ham_size, load_ham, save_ham
from problems import load_sequence
from results_store import ResultsStore
from scheme_machine import ExecBudget, ExecStatus, MachineLimits, SchemeMachine
from scheme_reader import ParseError, parse, write_value
from search import SearchConfig, SearchExhausted, SolutionRecord, levin_search

REPORT_COLUMNS = ['problemId', 'wallTime', 'trials', 'errors', 'cycles', 'maxCycles',
                  'p_i', 't_i', 'cjs', 'entropy', 'hamBytes']
INT_COLUMNS = ['trials', 'errors', 'cycles', 'maxCycles', 't_i', 'hamBytes']
FLOAT_COLUMNS = ['p_i', 'cjs', 'entropy']
_ATTRS = {
    'problemId': 'problem_id', 'wallTime': 'wall_time', 'trials': 'trials', 'errors': 'errors',
    'cycles': 'cycles', 'maxCycles': 'max_cycles', 'p_i': 'p_i', 't_i': 't_i', 'cjs': 'cjs',
    'entropy': 'entropy', 'hamBytes': 'ham_bytes',
}
ALL_ROW_ID = 'all'

EXIT_SOLVED = 0
EXIT_ERROR = 1
EXIT_EXHAUSTED = 2

DEFAULT_APP_CONFIG = {
    'search': {'initial_limit': 10 ** 6, 'quantum': 100, 'max_phases': 20, 'workers': 1},
    'memory': {},
    'interpreter': {},
}


@dataclass
class RunReportRow:
    """レポート 1 行（表の 1 問題分）"""
    problem_id: str
    wall_time: float
    trials: Optional[int] = None
    errors: Optional[int] = None
    cycles: Optional[int] = None
    max_cycles: Optional[int] = None
    p_i: Optional[float] = None
    t_i: Optional[int] = None
    cjs: Optional[float] = None
    entropy: Optional[float] = None
    ham_bytes: Optional[int] = None
    program_text: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        self.wall_time = round(float(self.wall_time), 2)

    @classmethod
    def from_record(cls, record: SolutionRecord, ham_bytes: int = None) -> 'RunReportRow':
        stats = record.stats
        return cls(record.problem_id, stats.wall_time, stats.trials, stats.scheme_errors,
                   stats.cycles_spent, stats.max_cycles, record.p, record.t, record.cjs,
                   record.entropy, ham_bytes, record.program_text)

    @classmethod
    def from_exhausted(cls, error: SearchExhausted) -> 'RunReportRow':
        stats = error.stats
        return cls(error.problem_id, stats.wall_time, stats.trials, stats.scheme_errors,
                   stats.cycles_spent, stats.max_cycles)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SequenceRun:
    """系列実行の結果"""
    rows: List[RunReportRow]
    records: List[SolutionRecord]
    exhausted_problem: Optional[str] = None
    ham: Optional[HamState] = None

    @property
    def solved(self) -> bool:
        return self.exhausted_problem is None


# ---------------------------------------------------------------------------
# 系列の実行
# ---------------------------------------------------------------------------

def run_sequence(seq_path: str, grammar_path: str, updates: bool = True, config: SearchConfig = None,
                 on_row: Callable[[RunReportRow], None] = None, ham_path: str = None,
                 ham_config: HamConfig = None, limits: MachineLimits = None,
                 event_logger: SearchEventLogger = None) -> SequenceRun:
    """
    訓練系列を順に解く

    Args:
        seq_path: 系列ファイル
        grammar_path: 初期文法ファイル
        updates: True なら解くたびに full_update を適用
        config: 探索設定
        on_row: 行ができるたびに呼ばれる関数
        ham_path: HAM 状態ファイル（存在すれば続きから再開）
        ham_config: HAM 更新設定
        limits: 評価器の上限
        event_logger: 探索ロガー

    Returns:
        SequenceRun（最後に all 行を含む）
    """
    config = config or SearchConfig()
    sequence = load_sequence(seq_path)
    scfg = load_grammar(grammar_path)
    event_logger = event_logger or get_search_logger()

    ham = None
    if updates:
        if ham_path and os.path.exists(ham_path):
            ham = load_ham(ham_path)
            event_logger.logger.info(f"HAM状態を読み込み: {ham_path} (解済み {len(ham.corpus)}問)")
        else:
            ham = HamState.from_grammar(scfg, ham_config)
    solved = set(ham.solved_ids()) if ham is not None else set()

    rows: List[RunReportRow] = []
    records: List[SolutionRecord] = []
    exhausted = None
    started = time.perf_counter()

    def emit(row: RunReportRow):
        rows.append(row)
        if on_row is not None:
            on_row(row)

    for problem in sequence:
        if problem.id in solved:
            continue
        grammar = ham.scfg if ham is not None else scfg
        try:
            record = levin_search(grammar, problem, config, limits, event_logger)
        except SearchExhausted as e:
            exhausted = problem.id
            emit(RunReportRow.from_exhausted(e))
            break
        records.append(record)
        ham_bytes = None
        if ham is not None:
            ham = full_update(ham, record)
            ham_bytes = save_ham(ham, ham_path) if ham_path else ham_size(ham)
            event_logger.log_update(problem.id, ham_bytes, True)
        emit(RunReportRow.from_record(record, ham_bytes))

    emit(RunReportRow(ALL_ROW_ID, time.perf_counter() - started))
    return SequenceRun(rows, records, exhausted, ham)


# ---------------------------------------------------------------------------
# レポート
# ---------------------------------------------------------------------------

def _columns(rows: List[RunReportRow]) -> List[str]:
    if any(r.ham_bytes is not None for r in rows):
        return list(REPORT_COLUMNS)
    return [c for c in REPORT_COLUMNS if c != 'hamBytes']


def _frame(rows: List[RunReportRow]) -> pd.DataFrame:
    columns = _columns(rows)
    df = pd.DataFrame([{c: getattr(r, _ATTRS[c]) for c in columns} for r in rows], columns=columns)
    for c in columns:
        if c in INT_COLUMNS:
            df[c] = df[c].astype('Int64')
        elif c in FLOAT_COLUMNS or c == 'wallTime':
            df[c] = df[c].astype('float64')
    return df


def _cell(column: str, value) -> str:
    if value is None or (not isinstance(value, str) and pd.isna(value)):
        return '-'
    if column == 'wallTime':
        return f"{value:.2f}"
    if column == 'p_i':
        return f"{value:.3g}"
    if column == 'cjs':
        return f"{value:.4g}"
    if column == 'entropy':
        return f"{value:.2f}"
    return str(value)


def emit_report(rows: List[RunReportRow], fmt: str = 'table') -> str:
    """
    レポートを表または CSV に整形

    Args:
        rows: レポート行
        fmt: 'table' または 'csv'

    Returns:
        整形済みテキスト
    """
    if fmt not in ('table', 'csv'):
        raise ValueError(f"unknown report format: {fmt}")
    columns = _columns(rows)
    if fmt == 'csv':
        df = _frame(rows)
        # wallTime は小数 2 桁で固定
        df['wallTime'] = df['wallTime'].map(lambda v: f"{v:.2f}")
        buffer = io.StringIO()
        df.to_csv(buffer, index=False, lineterminator='\n')
        return buffer.getvalue()
    if not rows:
        return '  '.join(columns) + '\n'
    table = pd.DataFrame([[_cell(c, getattr(r, _ATTRS[c])) for c in columns] for r in rows],
                         columns=columns)
    return table.to_string(index=False) + '\n'


def parse_report(text: str) -> List[RunReportRow]:
    """
    CSV レポートを行に戻す

    Args:
        text: emit_report(rows, 'csv') の出力

    Returns:
        RunReportRow のリスト
    """
    df = pd.read_csv(io.StringIO(text), float_precision='round_trip',
                     dtype={**{c: 'Int64' for c in INT_COLUMNS}, 'problemId': str})
    rows = []
    for record in df.to_dict('records'):
        values = {}
        for column, attr in _ATTRS.items():
            value = record.get(column)
            if value is None or pd.isna(value):
                values[attr] = None
            elif column in INT_COLUMNS:
                values[attr] = int(value)
            elif column == 'problemId':
                values[attr] = str(value)
            else:
                values[attr] = float(value)
        rows.append(RunReportRow(**values))
    return rows


# ---------------------------------------------------------------------------
# アプリケーション
# ---------------------------------------------------------------------------

def load_app_config(config_path: str = None) -> Dict[str, Any]:
    """
    設定ファイル（なければ既定値と環境変数）を読み込み

    Args:
        config_path: 設定ファイルパス

    Returns:
        search / memory / interpreter セクションを持つ辞書
    """
    config = json.loads(json.dumps(DEFAULT_APP_CONFIG))
    if config_path and os.path.exists(config_path):
        with open(config_path, 'r', encoding='utf-8') as f:
            loaded = json.load(f)
        for section in config:
            config[section].update(loaded.get(section, {}))
        return config

    load_dotenv()
    env_map = {
        'HAM_INITIAL_LIMIT': ('search', 'initial_limit', int),
        'HAM_QUANTUM': ('search', 'quantum', int),
        'HAM_MAX_PHASES': ('search', 'max_phases', int),
        'HAM_WORKERS': ('search', 'workers', int),
        'HAM_ALPHA': ('memory', 'alpha', float),
        'HAM_GAMMA': ('memory', 'gamma', float),
    }
    for name, (section, key, kind) in env_map.items():
        if os.getenv(name):
            config[section][key] = kind(os.getenv(name))
    return config


class HamApp:
    """訓練系列実行アプリケーション"""

    def __init__(self, config_path: str = "config/config.json"):
        """
        初期化

        Args:
            config_path: 設定ファイルパス
        """
        self.config_path = config_path
        self.config = load_app_config(config_path)
        self.logger = setup_logger('ham_app', config_path)
        self.event_logger = get_search_logger(config_path)
        self.results_store = ResultsStore(config_path)

        self.logger.info("HAM アプリケーション初期化完了")

    def initialize(self) -> bool:
        """
        結果データベースに接続（失敗しても実行は継続できる）

        Returns:
            接続成功可否
        """
        try:
            if not self.results_store.connect():
                self.logger.warning("結果データベース接続失敗（結果は保存されません）")
                return False
            self.results_store.create_tables()
            return True
        except Exception as e:
            self.logger.error(f"アプリケーション初期化エラー: {e}")
            return False

    def search_config(self, **overrides) -> SearchConfig:
        """設定ファイルの search セクションにコマンドライン指定を上書き"""
        values = dict(self.config['search'])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return SearchConfig(**values)

    def machine_limits(self) -> MachineLimits:
        return MachineLimits(**self.config['interpreter'])

    def run(self, seq_path: str, grammar_path: str, updates: bool = True, ham_path: str = None,
            report_format: str = 'table', out_path: str = None, **overrides) -> Dict[str, Any]:
        """
        訓練系列を実行してレポートを出力

        Args:
            seq_path: 系列ファイル
            grammar_path: 初期文法ファイル
            updates: HAM 更新の有無
            ham_path: HAM 状態ファイル
            report_format: 'table' または 'csv'
            out_path: レポート出力先（省略時は結果辞書の report のみ）
            overrides: SearchConfig の上書き値

        Returns:
            処理結果辞書
        """
        self.logger.info(f"系列実行開始: seq={seq_path} grammar={grammar_path} updates={updates}")
        log_id = None
        try:
            config = self.search_config(**overrides)
            log_id = self.results_store.start_run_log(
                os.path.splitext(os.path.basename(seq_path))[0], grammar_path, updates, config.workers)

            run = run_sequence(seq_path, grammar_path, updates, config,
                               on_row=lambda row: self.logger.info(f"問題完了: {row.problem_id}"),
                               ham_path=ham_path, ham_config=HamConfig(**self.config['memory']),
                               limits=self.machine_limits(), event_logger=self.event_logger)
            report = emit_report(run.rows, report_format)
            if out_path:
                directory = os.path.dirname(out_path)
                if directory:
                    os.makedirs(directory, exist_ok=True)
                with open(out_path, 'w', encoding='utf-8') as f:
                    f.write(report)

            if log_id:
                self.results_store.insert_report_rows(log_id, [r.to_dict() for r in run.rows])
                self.results_store.complete_run_log(log_id, len(run.records),
                                                    exhausted=not run.solved)

            if run.solved:
                message = f"系列実行完了（{len(run.records)}問）"
                self.logger.info(message)
            else:
                message = f"探索打ち切り: {run.exhausted_problem}"
                self.logger.warning(message)
            return {
                'success': run.solved,
                'message': message,
                'exit_code': EXIT_SOLVED if run.solved else EXIT_EXHAUSTED,
                'rows': run.rows,
                'report': report,
                'problems_solved': len(run.records),
            }
        except Exception as e:
            error_msg = f"系列実行エラー: {e}"
            self.logger.error(error_msg)
            if log_id:
                self.results_store.complete_run_log(log_id, error_message=error_msg)
            return {
                'success': False,
                'message': error_msg,
                'exit_code': EXIT_ERROR,
                'rows': [],
                'report': '',
                'problems_solved': 0,
            }

    def evaluate_file(self, path: str, max_cycles: int) -> Dict[str, Any]:
        """
        Scheme ファイルを予算内で評価

        Args:
            path: Scheme ソースファイル
            max_cycles: サイクル予算

        Returns:
            処理結果辞書
        """
        try:
            with open(path, 'r', encoding='utf-8') as f:
                ast = parse(f.read())
            limits = self.machine_limits()
            machine = SchemeMachine(limits.max_depth, limits.max_integer_bits, limits.max_collection_size)
            outcome = machine.evaluate(ast, ExecBudget(max_cycles))
            return {
                'success': outcome.status is ExecStatus.VALUE,
                'message': outcome.status.value,
                'value': write_value(outcome.value) if outcome.ok else None,
                'error': outcome.error,
                'cycles': outcome.cycles_used,
                'max_depth': outcome.max_depth,
            }
        except (OSError, ParseError, ValueError) as e:
            self.logger.error(f"評価エラー: {e}")
            return {'success': False, 'message': str(e), 'value': None, 'error': str(e),
                    'cycles': 0, 'max_depth': 0}

    def show_statistics(self) -> bool:
        """
        結果データベースの統計情報表示

        Returns:
            表示成功可否
        """
        try:
            if not self.results_store.connect():
                print("✗ 結果データベース接続失敗")
                return False
            stats = self.results_store.get_statistics()
            if not stats:
                print("✗ 統計情報取得失敗")
                return False
            print("\n=== 実行結果統計 ===")
            print(f"総実行回数: {stats['total_runs']}")
            print(f"最新実行: {stats['latest_run']}")
            for status, count in sorted(stats['runs_by_status'].items()):
                print(f"  {status:10}: {count}")
            print(f"問題行数: {stats['total_problem_rows']}（解けた行 {stats['solved_rows']}）")
            print(f"総試行数: {stats['total_trials']:,}")
            print(f"平均 H(s_i): {stats['avg_entropy']:.2f}")
            return True
        except Exception as e:
            self.logger.error(f"統計情報表示エラー: {e}")
            return False
