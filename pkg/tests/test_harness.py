"""
実験ハーネスのテスト
系列実行・レポート出力・アプリケーション設定を確認
"""
import json
import pytest
from unittest.mock import MagicMock
import sys
import os

# テスト用のパス設定
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'config'))

FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures')
ARITH = os.path.join(FIXTURES, 'arith.grammar')
DATA = os.path.join(os.path.dirname(__file__), '..', 'data')
SHIPPED_GRAMMAR = os.path.join(DATA, 'r5rs_subset.grammar')


def _quiet_logger():
    from logger import SearchEventLogger
    return SearchEventLogger(MagicMock())


def _sample_rows():
    from harness import RunReportRow
    return [
        RunReportRow('sqr', 1.234, 10, 2, 500, 1000, 0.005, 37, 7400.0, 7.64, 1200,
                     '(define (sqr var0) (* var0 var0))'),
        RunReportRow('all', 2.5),
    ]


def _write_app_config(tmp_path, **search):
    """結果DB とログを tmp_path に閉じた設定ファイル"""
    config = {
        'search': {'initial_limit': 1000, 'quantum': 100, 'max_phases': 4, 'workers': 1, **search},
        'memory': {},
        'interpreter': {},
        'results_db': {'type': 'sqlite', 'database': str(tmp_path / 'results' / 'ham.db')},
        'logging': {'level': 'INFO', 'file_path': None, 'console_output': False},
    }
    path = tmp_path / 'config.json'
    path.write_text(json.dumps(config), encoding='utf-8')
    return str(path)


class TestReport:
    """レポート出力のテスト"""

    def test_csv_round_trip(self):
        """CSV に出力して読み戻すと同じ行になることのテスト"""
        from harness import emit_report, parse_report

        rows = _sample_rows()
        text = emit_report(rows, 'csv')
        assert text.splitlines()[0] == 'problemId,wallTime,trials,errors,cycles,maxCycles,p_i,t_i,cjs,entropy,hamBytes'
        assert parse_report(text) == rows

    def test_wall_time_two_decimals(self):
        """wallTime が小数 2 桁で出力されることのテスト"""
        from harness import emit_report

        lines = emit_report(_sample_rows(), 'csv').splitlines()
        assert lines[1].split(',')[1] == '1.23'
        assert lines[2].split(',')[1] == '2.50'

    def test_ham_bytes_omitted_without_updates(self):
        """HAM を持たない実行では hamBytes 列を省くことのテスト"""
        from harness import RunReportRow, emit_report

        rows = [RunReportRow('sqr', 0.1, 3, 0, 10, 100, 0.5, 5, 10.0, 1.0), RunReportRow('all', 0.1)]
        header = emit_report(rows, 'csv').splitlines()[0]
        assert 'hamBytes' not in header
        assert header.endswith('entropy')

    def test_empty_rows(self):
        """行がない場合はヘッダーだけを出力することのテスト"""
        from harness import emit_report

        csv_text = emit_report([], 'csv')
        assert csv_text.strip() == 'problemId,wallTime,trials,errors,cycles,maxCycles,p_i,t_i,cjs,entropy'
        table = emit_report([], 'table')
        assert table == 'problemId  wallTime  trials  errors  cycles  maxCycles  p_i  t_i  cjs  entropy\n'

    def test_table_format(self):
        """表形式で空欄が - になることのテスト"""
        from harness import emit_report

        lines = emit_report(_sample_rows(), 'table').splitlines()
        assert len(lines) == 3
        assert lines[0].split() == ['problemId', 'wallTime', 'trials', 'errors', 'cycles', 'maxCycles',
                                    'p_i', 't_i', 'cjs', 'entropy', 'hamBytes']
        assert lines[1].split()[0] == 'sqr'
        assert lines[2].split() == ['all', '2.50'] + ['-'] * 9

    def test_unknown_format(self):
        """未知の出力形式の拒否テスト"""
        from harness import emit_report

        with pytest.raises(ValueError):
            emit_report(_sample_rows(), 'xml')

    def test_row_to_dict(self):
        """結果DB へ渡す辞書形式のテスト"""
        row = _sample_rows()[0]
        data = row.to_dict()
        assert data['problem_id'] == 'sqr'
        assert data['wall_time'] == 1.23
        assert data['program_text'] == '(define (sqr var0) (* var0 var0))'


class TestRunSequence:
    """系列実行のテスト"""

    def test_solves_identity(self):
        """逆関数系列を解き all 行が最後に付くことのテスト"""
        from harness import run_sequence, ALL_ROW_ID
        from search import SearchConfig

        run = run_sequence(os.path.join(FIXTURES, 'identity.seq'), ARITH, True,
                           SearchConfig(initial_limit=1000, quantum=100, max_phases=4),
                           event_logger=_quiet_logger())
        assert run.solved
        assert [r.problem_id for r in run.rows] == ['inv-identity', ALL_ROW_ID]
        row = run.rows[0]
        assert row.program_text == '(define (inv-identity var0) var0)'
        assert isinstance(row.ham_bytes, int) and row.ham_bytes > 0
        assert run.ham.solved_ids() == ['inv-identity']
        assert run.rows[1].trials is None

    def test_without_updates(self):
        """更新なしでは HAM を持たず hamBytes が空になることのテスト"""
        from harness import run_sequence, emit_report
        from search import SearchConfig

        run = run_sequence(os.path.join(FIXTURES, 'identity.seq'), ARITH, False,
                           SearchConfig(initial_limit=1000, quantum=100, max_phases=4),
                           event_logger=_quiet_logger())
        assert run.solved
        assert run.ham is None
        assert run.rows[0].ham_bytes is None
        assert 'hamBytes' not in emit_report(run.rows, 'csv').splitlines()[0]

    def test_on_row_callback(self):
        """行ができるたびに呼び出されることのテスト"""
        from harness import run_sequence
        from search import SearchConfig

        seen = []
        run_sequence(os.path.join(FIXTURES, 'identity.seq'), ARITH, True,
                     SearchConfig(initial_limit=1000, quantum=100, max_phases=4),
                     on_row=lambda row: seen.append(row.problem_id), event_logger=_quiet_logger())
        assert seen == ['inv-identity', 'all']

    def test_exhausted(self):
        """解けない問題で系列を打ち切ることのテスト"""
        from harness import run_sequence
        from search import SearchConfig

        run = run_sequence(os.path.join(FIXTURES, 'contradiction.seq'), ARITH, True,
                           SearchConfig(initial_limit=1000, quantum=100, max_phases=2),
                           event_logger=_quiet_logger())
        assert not run.solved
        assert run.exhausted_problem == 'impossible'
        assert [r.problem_id for r in run.rows] == ['impossible', 'all']
        assert run.rows[0].trials > 0
        assert run.rows[0].p_i is None
        assert run.records == []

    def test_resume_from_ham_file(self, tmp_path):
        """HAM 状態ファイルがあれば解済みの問題を飛ばすことのテスト"""
        from harness import run_sequence
        from search import SearchConfig

        ham_path = str(tmp_path / 'ham.txt')
        config = SearchConfig(initial_limit=1000, quantum=100, max_phases=4)
        first = run_sequence(os.path.join(FIXTURES, 'identity.seq'), ARITH, True, config,
                             ham_path=ham_path, event_logger=_quiet_logger())
        assert first.rows[0].ham_bytes == os.path.getsize(ham_path)
        second = run_sequence(os.path.join(FIXTURES, 'identity.seq'), ARITH, True, config,
                              ham_path=ham_path, event_logger=_quiet_logger())
        assert [r.problem_id for r in second.rows] == ['all']
        assert second.records == []

    def test_updates_transfer_to_pow4(self):
        """sqr の解を記憶すると pow4 の試行数が減り sqr を再利用することのテスト"""
        from harness import run_sequence
        from search import SearchConfig

        seq_path = os.path.join(FIXTURES, 'sqr_pow4.seq')
        config = SearchConfig(initial_limit=10_000, quantum=100, max_phases=8, workers=1)
        with_updates = run_sequence(seq_path, ARITH, True, config, event_logger=_quiet_logger())
        without_updates = run_sequence(seq_path, ARITH, False, config, event_logger=_quiet_logger())

        assert with_updates.solved
        pow4_on = with_updates.rows[1]
        pow4_off = without_updates.rows[1]
        assert pow4_on.problem_id == pow4_off.problem_id == 'pow4'
        # 定義ヘッダーと少なくとも 1 回の呼び出し
        assert pow4_on.program_text.count('(sqr ') >= 2
        assert pow4_on.trials < pow4_off.trials

    def test_seq0_identical_across_workers(self):
        """seq0 をワーカー数 1・2・4 で実行しても各行が一致することのテスト"""
        from harness import run_sequence
        from search import SearchConfig

        def summary(workers):
            config = SearchConfig(initial_limit=10_000, quantum=100, max_phases=6, workers=workers)
            run = run_sequence(os.path.join(DATA, 'seq0.seq'), SHIPPED_GRAMMAR, True, config,
                               event_logger=_quiet_logger())
            return [(r.problem_id, r.trials, r.errors, r.cycles, r.p_i, r.t_i, r.program_text)
                    for r in run.rows[:-1]]

        single = summary(1)
        assert single[0][0] == 'inv-identity'
        assert single[0][-1] == '(define (inv-identity var0) var0)'
        assert summary(2) == single
        assert summary(4) == single

    def test_ham_bytes_grow_over_three_problems(self):
        """3 問を更新ありで解くと hamBytes が減らず、直列化が可逆であることのテスト"""
        from harness import run_sequence
        from memory import serialize, deserialize, ham_size
        from search import SearchConfig

        run = run_sequence(os.path.join(FIXTURES, 'growth.seq'), ARITH, True,
                           SearchConfig(initial_limit=1000, quantum=100, max_phases=8),
                           event_logger=_quiet_logger())
        assert run.solved
        sizes = [r.ham_bytes for r in run.rows[:-1]]
        assert len(sizes) == 3
        assert all(a <= b for a, b in zip(sizes, sizes[1:]))
        assert sizes[-1] == ham_size(run.ham)
        restored = deserialize(serialize(run.ham))
        assert restored == run.ham
        assert serialize(restored) == serialize(run.ham)


class TestAppConfig:
    """アプリケーション設定のテスト"""

    def test_defaults_from_env(self, tmp_path, monkeypatch):
        """設定ファイルがない場合に環境変数を使うことのテスト"""
        from harness import load_app_config

        monkeypatch.setenv('HAM_WORKERS', '3')
        monkeypatch.setenv('HAM_ALPHA', '0.25')
        config = load_app_config(str(tmp_path / 'missing.json'))
        assert config['search']['workers'] == 3
        assert config['search']['quantum'] == 100
        assert config['memory']['alpha'] == 0.25

    def test_json_overrides_defaults(self, tmp_path):
        """設定ファイルの値が既定値を上書きすることのテスト"""
        from harness import load_app_config

        config = load_app_config(_write_app_config(tmp_path, workers=2))
        assert config['search']['initial_limit'] == 1000
        assert config['search']['workers'] == 2
        assert 'results_db' not in config

    def test_search_config_overrides(self, tmp_path):
        """コマンドライン指定が設定ファイルより優先されることのテスト"""
        from harness import HamApp

        app = HamApp(_write_app_config(tmp_path))
        config = app.search_config(workers=None, max_phases=7)
        assert config.max_phases == 7
        assert config.workers == 1
        assert config.initial_limit == 1000


class TestHamApp:
    """アプリケーションのテスト"""

    def test_run_and_statistics(self, tmp_path, capsys):
        """系列実行の結果が結果DB に保存されることのテスト"""
        from harness import HamApp, EXIT_SOLVED

        app = HamApp(_write_app_config(tmp_path))
        assert app.initialize()
        out_path = str(tmp_path / 'reports' / 'identity.csv')
        result = app.run(os.path.join(FIXTURES, 'identity.seq'), ARITH, report_format='csv', out_path=out_path)
        assert result['success']
        assert result['exit_code'] == EXIT_SOLVED
        assert result['problems_solved'] == 1
        with open(out_path, 'r', encoding='utf-8') as f:
            assert f.read() == result['report']

        stats = app.results_store.get_statistics()
        assert stats['total_runs'] == 1
        assert stats['runs_by_status'] == {'completed': 1}
        assert stats['total_problem_rows'] == 1
        assert stats['solved_rows'] == 1

        assert app.show_statistics()
        assert '総実行回数: 1' in capsys.readouterr().out

    def test_run_exhausted(self, tmp_path):
        """打ち切り時の終了コードテスト"""
        from harness import HamApp, EXIT_EXHAUSTED

        app = HamApp(_write_app_config(tmp_path))
        app.initialize()
        result = app.run(os.path.join(FIXTURES, 'contradiction.seq'), ARITH, max_phases=2)
        assert not result['success']
        assert result['exit_code'] == EXIT_EXHAUSTED
        assert app.results_store.get_statistics()['runs_by_status'] == {'exhausted': 1}

    def test_run_error(self, tmp_path):
        """存在しない系列ファイルでのエラー終了テスト"""
        from harness import HamApp, EXIT_ERROR

        app = HamApp(_write_app_config(tmp_path))
        app.initialize()
        result = app.run(str(tmp_path / 'missing.seq'), ARITH)
        assert result['exit_code'] == EXIT_ERROR
        assert result['rows'] == []
        assert app.results_store.get_statistics()['runs_by_status'] == {'failed': 1}

    def test_run_without_database(self, tmp_path):
        """結果DB に接続しなくても実行できることのテスト"""
        from harness import HamApp, EXIT_SOLVED

        app = HamApp(_write_app_config(tmp_path))
        result = app.run(os.path.join(FIXTURES, 'identity.seq'), ARITH, updates=False)
        assert result['exit_code'] == EXIT_SOLVED
        assert 'hamBytes' not in result['report']

    def test_evaluate_file(self, tmp_path):
        """Scheme ファイル評価のテスト"""
        from harness import HamApp

        source = tmp_path / 'pow4.scm'
        source.write_text('(define (pow4 x) (define (sqr x) (* x x)) (sqr (sqr x))) (pow4 2)', encoding='utf-8')
        app = HamApp(_write_app_config(tmp_path))
        result = app.evaluate_file(str(source), 10_000)
        assert result['success']
        assert result['value'] == '16'
        assert result['message'] == 'Value'
        assert result['cycles'] > 0

    def test_evaluate_time_limit(self, tmp_path):
        """予算切れの評価テスト"""
        from harness import HamApp

        source = tmp_path / 'loop.scm'
        source.write_text('(define (f x) (f x)) (f 1)', encoding='utf-8')
        result = HamApp(_write_app_config(tmp_path)).evaluate_file(str(source), 500)
        assert not result['success']
        assert result['message'] == 'TimeLimit'
        assert result['cycles'] == 500

    def test_evaluate_parse_error(self, tmp_path):
        """構文エラーのファイル評価テスト"""
        from harness import HamApp

        source = tmp_path / 'bad.scm'
        source.write_text('(+ 1', encoding='utf-8')
        result = HamApp(_write_app_config(tmp_path)).evaluate_file(str(source), 100)
        assert not result['success']
        assert result['value'] is None
