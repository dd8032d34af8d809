"""
結果データベース管理モジュール
系列実行ログとレポート行の保存・集計を提供
"""
import os
import enum
from datetime import datetime, timezone
from typing import Optional, Dict, Any, List
from sqlalchemy import Column, Integer, BigInteger, Boolean, Float, String, Text, DateTime, func

# 設定とログ
import sys
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'config'))
try:
    from database import DatabaseConfig, Base
except ImportError:
    # テスト実行時の代替パス
    sys.path.append(os.path.join(os.path.dirname(__file__), '..'))
    from config.database import DatabaseConfig, Base

from logger import setup_logger, DatabaseLogger

class RunStatus(enum.Enum):
    """実行ステータス"""
    RUNNING = "running"
    COMPLETED = "completed"
    EXHAUSTED = "exhausted"
    FAILED = "failed"

class RunLogORM(Base):
    """系列実行ログORMモデル"""
    __tablename__ = 'run_log'

    id = Column(BigInteger().with_variant(Integer, 'sqlite'), primary_key=True, autoincrement=True)
    sequence_id = Column(String(100), nullable=False, index=True)
    grammar_path = Column(Text)
    updates = Column(Boolean, nullable=False, default=True)
    workers = Column(Integer, default=1)
    run_start = Column(DateTime(timezone=True), nullable=False)
    run_end = Column(DateTime(timezone=True))
    problems_solved = Column(Integer, default=0)
    status = Column(String(20), default='running')
    error_message = Column(Text)

    def __repr__(self):
        return f"<RunLog(id={self.id}, sequence_id='{self.sequence_id}', status='{self.status}')>"

    def to_dict(self) -> Dict[str, Any]:
        """辞書形式に変換"""
        return {
            'id': self.id,
            'sequence_id': self.sequence_id,
            'grammar_path': self.grammar_path,
            'updates': self.updates,
            'workers': self.workers,
            'run_start': self.run_start,
            'run_end': self.run_end,
            'problems_solved': self.problems_solved,
            'status': self.status,
            'error_message': self.error_message
        }

class RunReportRowORM(Base):
    """レポート行ORMモデル"""
    __tablename__ = 'run_report_rows'

    id = Column(BigInteger().with_variant(Integer, 'sqlite'), primary_key=True, autoincrement=True)
    run_id = Column(BigInteger().with_variant(Integer, 'sqlite'), nullable=False, index=True)
    problem_id = Column(String(100), nullable=False, index=True)
    wall_time = Column(Float, nullable=False)
    trials = Column(BigInteger)
    errors = Column(BigInteger)
    cycles = Column(BigInteger)
    max_cycles = Column(BigInteger)
    p_i = Column(Float)
    t_i = Column(BigInteger)
    cjs = Column(Float)
    entropy = Column(Float)
    ham_bytes = Column(BigInteger)
    program_text = Column(Text)
    created_at = Column(DateTime(timezone=True), default=lambda: datetime.now(timezone.utc))

    def to_dict(self) -> Dict[str, Any]:
        """辞書形式に変換"""
        return {
            'id': self.id,
            'run_id': self.run_id,
            'problem_id': self.problem_id,
            'wall_time': self.wall_time,
            'trials': self.trials,
            'errors': self.errors,
            'cycles': self.cycles,
            'max_cycles': self.max_cycles,
            'p_i': self.p_i,
            't_i': self.t_i,
            'cjs': self.cjs,
            'entropy': self.entropy,
            'ham_bytes': self.ham_bytes,
            'program_text': self.program_text
        }

    def validate(self):
        """データ検証"""
        if not self.problem_id or self.problem_id.strip() == "":
            raise ValueError("problem_id is required")
        if self.wall_time is None or self.wall_time < 0:
            raise ValueError("wall_time must be nonnegative")

ROW_FIELDS = ('problem_id', 'wall_time', 'trials', 'errors', 'cycles', 'max_cycles',
              'p_i', 't_i', 'cjs', 'entropy', 'ham_bytes', 'program_text')

class ResultsStore:
    """結果データベース管理クラス"""

    def __init__(self, config_path: str = "config/config.json"):
        """
        初期化

        Args:
            config_path: 設定ファイルパス
        """
        self.config_path = config_path
        self.logger = setup_logger('results_store', config_path)
        self.db_logger = DatabaseLogger(self.logger)
        self.db_config = DatabaseConfig(config_path)
        self.is_connected = False

    def connect(self) -> bool:
        """
        データベースに接続（テーブルがなければ作成）

        Returns:
            接続成功可否
        """
        try:
            self.is_connected = self.db_config.test_connection()
            if self.is_connected:
                self.db_logger.log_connection("成功", success=True)
                self.logger.info("結果データベース接続成功")
                if not self.db_config.create_tables_if_not_exists():
                    self.logger.warning("テーブル確認・作成処理で警告が発生しました")
            else:
                self.db_logger.log_connection("失敗", success=False)
                self.logger.error("結果データベース接続失敗")
            return self.is_connected
        except Exception as e:
            self.logger.error(f"データベース接続エラー: {e}")
            self.is_connected = False
            return False

    def create_tables(self) -> bool:
        """
        テーブル作成

        Returns:
            作成成功可否
        """
        try:
            result = self.db_config.create_tables_if_not_exists()
            if result:
                self.logger.info("テーブル作成処理完了")
            else:
                self.logger.error("テーブル作成処理失敗")
            return result
        except Exception as e:
            self.logger.error(f"テーブル作成エラー: {e}")
            return False

    def start_run_log(self, sequence_id: str, grammar_path: str = None, updates: bool = True,
                      workers: int = 1) -> Optional[int]:
        """
        実行ログを開始

        Args:
            sequence_id: 系列 id
            grammar_path: 初期文法ファイル
            updates: HAM 更新の有無
            workers: ワーカー数

        Returns:
            ログID
        """
        if not self.is_connected:
            return None

        try:
            with self.db_config.get_session() as session:
                run_log = RunLogORM(
                    sequence_id=sequence_id,
                    grammar_path=grammar_path,
                    updates=updates,
                    workers=workers,
                    run_start=datetime.now(timezone.utc),
                    status=RunStatus.RUNNING.value
                )
                session.add(run_log)
                session.commit()
                self.db_logger.log_query("INSERT", "run_log", rows_affected=1)
                return run_log.id
        except Exception as e:
            self.logger.error(f"実行ログ開始エラー: {e}")
            return None

    def complete_run_log(self, log_id: int, problems_solved: int = 0, exhausted: bool = False,
                         error_message: str = None) -> bool:
        """
        実行ログを完了

        Args:
            log_id: ログID
            problems_solved: 解けた問題数
            exhausted: 探索打ち切りで終了したか
            error_message: エラーメッセージ

        Returns:
            完了成功可否
        """
        if not self.is_connected:
            return False

        try:
            with self.db_config.get_session() as session:
                run_log = session.query(RunLogORM).filter(RunLogORM.id == log_id).first()
                if not run_log:
                    return False

                run_log.run_end = datetime.now(timezone.utc)
                run_log.problems_solved = problems_solved
                if error_message:
                    run_log.status = RunStatus.FAILED.value
                elif exhausted:
                    run_log.status = RunStatus.EXHAUSTED.value
                else:
                    run_log.status = RunStatus.COMPLETED.value
                run_log.error_message = error_message

                session.commit()
                self.db_logger.log_query("UPDATE", "run_log", rows_affected=1)
                return True
        except Exception as e:
            self.logger.error(f"実行ログ完了エラー: {e}")
            return False

    def insert_report_rows(self, log_id: int, rows: List[Dict[str, Any]]) -> Dict[str, Any]:
        """
        レポート行を一括挿入

        Args:
            log_id: 実行ログID
            rows: ROW_FIELDS をキーに持つ辞書のリスト

        Returns:
            挿入結果辞書
        """
        if not self.is_connected:
            self.logger.error("データベース未接続")
            return {'success': False, 'inserted': 0, 'message': 'not connected'}

        try:
            with self.db_config.get_session() as session:
                for row in rows:
                    orm = RunReportRowORM(run_id=log_id, **{k: row.get(k) for k in ROW_FIELDS})
                    orm.validate()
                    session.add(orm)
                session.commit()
            self.db_logger.log_query("INSERT", "run_report_rows", rows_affected=len(rows))
            return {'success': True, 'inserted': len(rows), 'message': f"{len(rows)}行を保存"}
        except Exception as e:
            self.db_logger.log_transaction("コミット", success=False)
            self.logger.error(f"レポート行挿入エラー: {e}")
            return {'success': False, 'inserted': 0, 'message': str(e)}

    def get_run_rows(self, log_id: int) -> List[Dict[str, Any]]:
        """実行ログに属するレポート行"""
        if not self.is_connected:
            return []
        try:
            with self.db_config.get_session() as session:
                rows = session.query(RunReportRowORM).filter(
                    RunReportRowORM.run_id == log_id
                ).order_by(RunReportRowORM.id).all()
                return [r.to_dict() for r in rows]
        except Exception as e:
            self.logger.error(f"レポート行取得エラー: {e}")
            return []

    def get_statistics(self) -> Optional[Dict[str, Any]]:
        """
        結果統計情報を取得

        Returns:
            統計情報辞書
        """
        if not self.is_connected:
            self.logger.error("データベース未接続")
            return None

        try:
            with self.db_config.get_session() as session:
                runs = session.query(
                    func.count(RunLogORM.id).label('total_runs'),
                    func.max(RunLogORM.run_start).label('latest_run')
                ).one()
                rows = session.query(
                    func.count(RunReportRowORM.id).label('total_rows'),
                    func.count(RunReportRowORM.t_i).label('solved'),
                    func.sum(RunReportRowORM.trials).label('total_trials'),
                    func.avg(RunReportRowORM.entropy).label('avg_entropy')
                ).filter(RunReportRowORM.problem_id != 'all').one()
                by_status = dict(session.query(RunLogORM.status, func.count(RunLogORM.id))
                                 .group_by(RunLogORM.status).all())

                stats = {
                    'total_runs': runs.total_runs,
                    'latest_run': runs.latest_run,
                    'runs_by_status': by_status,
                    'total_problem_rows': rows.total_rows,
                    'solved_rows': rows.solved,
                    'total_trials': int(rows.total_trials or 0),
                    'avg_entropy': float(rows.avg_entropy) if rows.avg_entropy is not None else 0.0
                }
                self.db_logger.log_query("SELECT", "run_log, run_report_rows (statistics)")
                return stats
        except Exception as e:
            self.logger.error(f"統計情報取得エラー: {e}")
            return None
