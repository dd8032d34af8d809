"""
Levin 探索モジュール
確率上限付き深さ優先探索・フェーズ倍増・トップレベル文形式の静的分配・CJS 計算を提供
"""
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

from derivation import (
    SententialForm, Step, build_tree, expand_leftmost, sentence_text,
)
from grammar import (
    DomainError, Nonterminal, Scfg, VARIABLE_RE, is_terminal, parse_sentential_form,
    productions_for,
)
from logger import SearchEventLogger, get_search_logger
from problems import CheckStatus, ProblemSpec, check_solution
from scheme_machine import ExecBudget, MachineLimits, SchemeMachine
from scheme_reader import ParseError, parse, print_ast

# 浮動小数の丸めで境界上の候補を落とさないための許容幅（log2）
LOG_EPS = 1e-12
PARTITION_FACTOR = 8
PARTITION_GUARD = 100_000


class SearchError(Exception):
    """探索関連エラーの基底クラス"""


class SearchExhausted(SearchError):
    """最大フェーズ数に達しても解が見つからない"""

    def __init__(self, problem_id: str, stats: 'SearchStats'):
        super().__init__(f"no solution for {problem_id} within {stats.phases} phases")
        self.problem_id = problem_id
        self.stats = stats


@dataclass(frozen=True)
class SearchConfig:
    """探索設定"""
    initial_limit: int = 10 ** 6
    quantum: int = 100
    max_phases: int = 20
    workers: int = 1
    start_form: Optional[str] = None

    def __post_init__(self):
        if not self.quantum >= 1:
            raise DomainError("quantum must be at least 1")
        if not self.initial_limit >= self.quantum:
            raise DomainError("initial_limit must be at least quantum")
        if not self.max_phases >= 1:
            raise DomainError("max_phases must be positive")
        if not self.workers >= 1:
            raise DomainError("workers must be positive")

    def phase_limit(self, phase: int) -> int:
        """フェーズ k の総予算 T_k = 2^k * initial_limit"""
        return self.initial_limit * (2 ** phase)


@dataclass
class SearchStats:
    """探索統計（全フェーズ累計）"""
    trials: int = 0
    scheme_errors: int = 0
    cycles_spent: int = 0
    max_cycles: int = 0
    wall_time: float = 0.0
    phases: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SolutionRecord:
    """解かれた問題の記録（解コーパスの単位）"""
    problem_id: str
    name: str
    arity: int
    program_text: str
    steps: Tuple[Step, ...]
    start: Tuple[str, ...]
    p: float
    t: int
    stats: SearchStats
    log_prob: float

    @property
    def tree(self):
        """解の導出木（根は開始文形式）"""
        return build_tree(self.steps, self.start)

    @property
    def cjs(self) -> float:
        return cjs(self.p, self.t)

    @property
    def entropy(self) -> float:
        return entropy(self.p)


@dataclass
class DfsSummary:
    """深さ優先探索の集計"""
    visited: int = 0
    expanded: int = 0
    pruned: int = 0


# ---------------------------------------------------------------------------
# 数値
# ---------------------------------------------------------------------------

def probability_horizon(quantum: float, limit: float) -> float:
    """
    確率上限 p_h = t_q / t

    Args:
        quantum: 時間量子 t_q
        limit: フェーズ予算 t

    Returns:
        p_h
    """
    if not (quantum >= 1 and limit >= quantum):
        raise DomainError(f"probability horizon needs t >= t_q >= 1, got t_q={quantum} t={limit}")
    return quantum / limit


def cjs(p: float, t: float) -> float:
    """Conceptual Jump Size t/p"""
    if not (0 < p <= 1) or not t > 0:
        raise DomainError(f"cjs needs 0 < p <= 1 and t > 0, got p={p} t={t}")
    return t / p


def entropy(p: float) -> float:
    """暗黙のプログラム長 -log2 p"""
    if not 0 < p <= 1:
        raise DomainError(f"entropy needs 0 < p <= 1, got {p}")
    return -math.log2(p)


# ---------------------------------------------------------------------------
# 列挙
# ---------------------------------------------------------------------------

def _children(scfg: Scfg, form: SententialForm, limit: float = None) -> Tuple[List[SententialForm], int]:
    """確率の降順（同率は規則順）で子文形式を作成し、上限未満の枝の数も返す"""
    head = form.symbols[form.leftmost_nt]
    expansions = productions_for(scfg, head, form.ctx)
    order = sorted(range(len(expansions)), key=lambda j: (-expansions[j].probability, j))
    children = []
    pruned = 0
    for position, j in enumerate(order):
        expansion = expansions[j]
        if not expansion.probability > 0:
            continue
        if limit is not None and form.log_prob + math.log2(expansion.probability) < limit:
            pruned += sum(1 for k in order[position:] if expansions[k].probability > 0)
            break
        children.append(expand_leftmost(form, expansion))
    return children, pruned


def enumerate_dfs(scfg: Scfg, start: SententialForm, horizon: float,
                  visit: Callable[[SententialForm], None]) -> DfsSummary:
    """
    確率上限付き深さ優先探索で完全文を列挙

    Args:
        scfg: 文法
        start: 開始文形式
        horizon: 確率上限 (0, 1]
        visit: 完全文ごとに呼ばれる関数

    Returns:
        DfsSummary
    """
    if not 0 < horizon <= 1:
        raise DomainError(f"horizon must be in (0, 1], got {horizon}")
    limit = math.log2(horizon) - LOG_EPS
    summary = DfsSummary()
    if start.log_prob < limit:
        summary.pruned += 1
        return summary
    stack = [start]
    while stack:
        form = stack.pop()
        if form.is_complete:
            summary.visited += 1
            visit(form)
            continue
        summary.expanded += 1
        children, pruned = _children(scfg, form, limit)
        summary.pruned += pruned
        stack.extend(reversed(children))
    return summary


def expand_frontier(scfg: Scfg, start: SententialForm, target: int) -> List[SententialForm]:
    """
    最も確率の高い展開可能な文形式をその場で展開し続けたトップレベル文形式列

    並びは深さ優先の列挙順と一致する。

    Args:
        scfg: 文法
        start: 開始文形式
        target: 目標の文形式数

    Returns:
        文形式のリスト
    """
    frontier = [start]
    for _ in range(PARTITION_GUARD):
        if len(frontier) >= target:
            break
        best = None
        for i, form in enumerate(frontier):
            if not form.is_complete and (best is None or form.log_prob > frontier[best].log_prob):
                best = i
        if best is None:
            break
        children, _ = _children(scfg, frontier[best])
        frontier[best:best + 1] = children
    return frontier


def assign_greedy(probabilities: Sequence[float], n_workers: int) -> List[List[int]]:
    """確率の降順に最も負荷の小さいワーカーへ割り当て（同負荷は番号の小さい方）"""
    loads = [0.0] * n_workers
    assignment: List[List[int]] = [[] for _ in range(n_workers)]
    for i in sorted(range(len(probabilities)), key=lambda j: (-probabilities[j], j)):
        worker = min(range(n_workers), key=lambda w: (loads[w], w))
        assignment[worker].append(i)
        loads[worker] += probabilities[i]
    for indices in assignment:
        indices.sort()
    return assignment


def partition_toplevel(scfg: Scfg, start: SententialForm,
                       n_workers: int) -> List[Tuple[int, List[SententialForm]]]:
    """
    トップレベル文形式をワーカーに静的分配

    Args:
        scfg: 文法
        start: 開始文形式
        n_workers: ワーカー数

    Returns:
        (ワーカー番号, 文形式リスト) のリスト
    """
    if n_workers < 1:
        raise DomainError("n_workers must be positive")
    frontier = expand_frontier(scfg, start, PARTITION_FACTOR * n_workers)
    assignment = assign_greedy([f.probability for f in frontier], n_workers)
    return [(w, [frontier[i] for i in indices]) for w, indices in enumerate(assignment)]


def search_start_form(scfg: Scfg, problem: ProblemSpec, config: SearchConfig = None) -> SententialForm:
    """
    探索の開始文形式（設定・問題の指定、なければ定義の雛形）

    Args:
        scfg: 文法
        problem: 問題
        config: 探索設定

    Returns:
        生成文脈を初期化した SententialForm
    """
    text = (config.start_form if config is not None else None) or problem.start_form
    if text:
        symbols = parse_sentential_form(text)
    else:
        body = 'body' if scfg.has_nonterminal('body') else scfg.start
        params = tuple(f"var{i}" for i in range(problem.arity))
        symbols = ('(', 'define', '(', problem.call_name) + params + (')', Nonterminal(body), ')')
    bound = [s for s in symbols if is_terminal(s) and VARIABLE_RE.match(s)]
    return SententialForm.start(symbols, scfg.initial_context(bound))


# ---------------------------------------------------------------------------
# フェーズ実行
# ---------------------------------------------------------------------------

@dataclass
class WorkerReport:
    """1 フェーズ分のワーカー集計と最良の解"""
    worker: int
    trials: int = 0
    errors: int = 0
    cycles: int = 0
    best: Optional[Tuple[float, Tuple[int, int], SententialForm, int, str]] = None


@dataclass(frozen=True)
class _PhaseTask:
    worker: int
    scfg: Scfg
    forms: Tuple[Tuple[int, SententialForm], ...]
    horizon: float
    phase_limit: int
    quantum: int
    problem: ProblemSpec
    limits: MachineLimits = field(default_factory=MachineLimits)


def _run_phase_task(task: _PhaseTask, machine: SchemeMachine = None) -> WorkerReport:
    """ワーカー 1 つ分のフェーズ実行（プロセスプールからも呼ばれる）"""
    if machine is None:
        machine = SchemeMachine(task.limits.max_depth, task.limits.max_integer_bits,
                                task.limits.max_collection_size)
    report = WorkerReport(task.worker)

    for index, start in task.forms:
        local = 0

        def visit(sentence: SententialForm):
            nonlocal local
            order = (index, local)
            local += 1
            report.trials += 1
            text = sentence_text(sentence)
            try:
                program = parse(text)
            except ParseError:
                report.errors += 1
                return
            budget = max(task.quantum, math.floor(sentence.probability * task.phase_limit))
            result = check_solution(program, task.problem, ExecBudget(budget), machine)
            report.cycles += result.cycles
            if result.status is CheckStatus.ERROR:
                report.errors += 1
            elif result.passed:
                best = report.best
                if best is None or sentence.log_prob > best[0] or (
                        sentence.log_prob == best[0] and order < best[1]):
                    report.best = (sentence.log_prob, order, sentence, result.cycles, print_ast(program))

        enumerate_dfs(task.scfg, start, task.horizon, visit)
    return report


def levin_search(scfg: Scfg, problem: ProblemSpec, config: SearchConfig = None,
                 limits: MachineLimits = None, event_logger: SearchEventLogger = None) -> SolutionRecord:
    """
    文法誘導 Levin 探索

    各フェーズを全列挙し、通過した候補のうち確率最大（同率は列挙順が先）を解とする。

    Args:
        scfg: 文法
        problem: 問題
        config: 探索設定
        limits: 評価器の上限
        event_logger: 進捗ロガー

    Returns:
        SolutionRecord

    Raises:
        SearchExhausted: 最大フェーズ数に達した
    """
    config = config or SearchConfig()
    limits = limits or MachineLimits()
    event_logger = event_logger or get_search_logger()
    started = time.perf_counter()

    start = search_start_form(scfg, problem, config)
    frontier = expand_frontier(scfg, start, PARTITION_FACTOR * config.workers)
    assignment = assign_greedy([f.probability for f in frontier], config.workers)
    stats = SearchStats()

    executor = ProcessPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    machine = None if executor else SchemeMachine(limits.max_depth, limits.max_integer_bits,
                                                  limits.max_collection_size)
    try:
        for phase in range(config.max_phases):
            phase_limit = config.phase_limit(phase)
            horizon = probability_horizon(config.quantum, phase_limit)
            tasks = [_PhaseTask(w, scfg, tuple((i, frontier[i]) for i in indices), horizon,
                                phase_limit, config.quantum, problem, limits)
                     for w, indices in enumerate(assignment)]
            if executor is None:
                reports = [_run_phase_task(task, machine) for task in tasks]
            else:
                reports = list(executor.map(_run_phase_task, tasks))

            stats.phases = phase + 1
            stats.max_cycles = phase_limit
            winner = None
            for report in reports:
                stats.trials += report.trials
                stats.scheme_errors += report.errors
                stats.cycles_spent += report.cycles
                event_logger.log_phase(phase, report.worker, report.trials, report.errors, report.cycles)
                if report.best is not None and (
                        winner is None or report.best[0] > winner[0]
                        or (report.best[0] == winner[0] and report.best[1] < winner[1])):
                    winner = report.best

            if winner is not None:
                log_prob, _, sentence, t, program_text = winner
                stats.wall_time = time.perf_counter() - started
                record = SolutionRecord(
                    problem_id=problem.id, name=problem.call_name, arity=problem.arity,
                    program_text=program_text, steps=sentence.steps, start=start.symbols,
                    p=2.0 ** log_prob, t=t, stats=stats, log_prob=log_prob)
                event_logger.log_solution(problem.id, program_text, record.p, t)
                return record
    finally:
        if executor is not None:
            executor.shutdown()

    stats.wall_time = time.perf_counter() - started
    event_logger.log_exhausted(problem.id, stats.phases)
    raise SearchExhausted(problem.id, stats)
