"""
問題定義モジュール
逆関数・演算子帰納の問題、訓練系列ファイルの読み込み、解の検査を提供
"""
import enum
import math
import os
import re
from dataclasses import dataclass
from typing import Any, Iterable, List, Optional, Sequence, Tuple

from grammar import DomainError
from scheme_machine import ExecBudget, ExecStatus, SchemeMachine, default_machine
from scheme_reader import (
    NIL, Pair, ParseError, ProgramAst, QUOTE, intern, is_number, make_list,
    parse_datum, values_equal, write_value,
)

KINDS = ('inversion', 'operator-induction')
INVERSION_TARGETS = ('identity', 'reciprocal', 'sqrt')
DEFAULT_TOLERANCE = 1e-6

_NAME_RE = re.compile(r'^[a-z][a-z0-9\-_?!*]*$')


class ProblemError(Exception):
    """問題定義関連エラーの基底クラス"""


class SequenceParseError(ProblemError):
    """系列ファイルの書式エラー"""


class SequenceValidationError(ProblemError):
    """系列・問題定義の検証エラー"""


class CheckStatus(enum.Enum):
    """解検査の結果"""
    PASS = "Pass"
    FAIL = "Fail"
    ERROR = "Error"
    TIME_LIMIT = "TimeLimit"


@dataclass(frozen=True)
class CheckResult:
    """解検査の結果と消費サイクル数"""
    status: CheckStatus
    cycles: int
    failed_example: Optional[int] = None
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.status is CheckStatus.PASS

    @property
    def t_i(self) -> Optional[int]:
        return self.cycles if self.passed else None


@dataclass(frozen=True)
class ProblemSpec:
    """入出力例で与えられる問題"""
    id: str
    kind: str
    arity: int
    examples: Tuple[Tuple[tuple, Any], ...]
    tolerance: float = DEFAULT_TOLERANCE
    start_form: Optional[str] = None
    name: Optional[str] = None

    @property
    def call_name(self) -> str:
        """解を呼び出す手続き名"""
        return self.name or self.id

    def call_form(self, args: Sequence[Any]) -> Pair:
        """`(<name> '<arg1> ... '<argN>)` 形式の呼び出し式"""
        quoted = [make_list([QUOTE, a]) for a in args]
        return make_list([intern(self.call_name)] + quoted)

    def call_text(self, args: Sequence[Any]) -> str:
        return write_value(self.call_form(args))

    def validate(self) -> List[str]:
        problems = []
        if self.kind not in KINDS:
            problems.append(f"{self.id}: unknown kind {self.kind}")
        if not _NAME_RE.match(self.call_name):
            problems.append(f"{self.id}: call name {self.call_name!r} is not a lowercase Scheme identifier")
        if self.arity < 1:
            problems.append(f"{self.id}: arity must be positive")
        if not self.examples:
            problems.append(f"{self.id}: no examples")
        for i, (args, _) in enumerate(self.examples):
            if len(args) != self.arity:
                problems.append(f"{self.id}: example {i + 1} has {len(args)} arguments, expected {self.arity}")
        if not self.tolerance >= 0:
            problems.append(f"{self.id}: tolerance must be nonnegative")
        return problems


@dataclass(frozen=True)
class TrainingSequence:
    """順序付きの問題列"""
    id: str
    problems: Tuple[ProblemSpec, ...]

    def __iter__(self):
        return iter(self.problems)

    def __len__(self):
        return len(self.problems)

    def ids(self) -> List[str]:
        return [p.id for p in self.problems]


# ---------------------------------------------------------------------------
# 逆関数問題
# ---------------------------------------------------------------------------

def inversion_examples(target: str, points: Iterable[Any]) -> Tuple[Tuple[tuple, Any], ...]:
    """
    逆関数問題の入出力例 (f(x)) -> x を作成

    Args:
        target: identity / reciprocal / sqrt
        points: 逆像側の点 x

    Returns:
        入出力例のタプル
    """
    if target not in INVERSION_TARGETS:
        raise DomainError(f"unknown inversion target: {target}")
    examples = []
    for x in points:
        if not is_number(x):
            raise DomainError(f"inversion point must be a number: {x!r}")
        if target == 'identity':
            y = x
        elif target == 'reciprocal':
            if x == 0:
                raise DomainError("reciprocal is undefined at 0")
            y = 1 / x
        else:
            if x < 0:
                raise DomainError(f"sqrt is undefined at {x}")
            root = math.isqrt(x) if isinstance(x, int) else None
            y = root if root is not None and root * root == x else math.sqrt(x)
        examples.append(((y,), x))
    return tuple(examples)


# ---------------------------------------------------------------------------
# 解の検査
# ---------------------------------------------------------------------------

def values_match(actual, expected, tolerance: float = DEFAULT_TOLERANCE) -> bool:
    """
    出力値の比較（どちらかが不正確数なら相対誤差で比較）

    Args:
        actual: 評価結果
        expected: 期待値
        tolerance: 相対許容誤差

    Returns:
        一致すれば True
    """
    if is_number(actual) and is_number(expected):
        if isinstance(actual, float) or isinstance(expected, float):
            try:
                if actual == expected:
                    return True
                a, e = float(actual), float(expected)
            except OverflowError:
                return False
            if math.isnan(a) or math.isnan(e) or math.isinf(a) or math.isinf(e):
                return False
            return abs(a - e) <= tolerance * max(abs(a), abs(e))
        return actual == expected
    if isinstance(actual, bool) or isinstance(expected, bool):
        return actual is expected
    if isinstance(actual, Pair) and isinstance(expected, Pair):
        while isinstance(actual, Pair) and isinstance(expected, Pair):
            if not values_match(actual.car, expected.car, tolerance):
                return False
            actual, expected = actual.cdr, expected.cdr
        return values_match(actual, expected, tolerance)
    if isinstance(actual, list) and isinstance(expected, list):
        return len(actual) == len(expected) and all(
            values_match(a, e, tolerance) for a, e in zip(actual, expected))
    return values_equal(actual, expected)


def check_solution(program: ProgramAst, problem: ProblemSpec, budget: ExecBudget,
                   machine: SchemeMachine = None) -> CheckResult:
    """
    候補プログラムを全入出力例で検査（最初の不一致で打ち切り）

    Args:
        program: 定義部のプログラム
        problem: 問題
        budget: 入出力例 1 件あたりの予算
        machine: 評価器（省略時は既定）

    Returns:
        CheckResult（Pass のとき cycles が t_i）
    """
    machine = machine or default_machine()
    total = 0
    for index, (args, expected) in enumerate(problem.examples):
        ast = ProgramAst(tuple(program.forms) + (problem.call_form(args),))
        outcome = machine.evaluate(ast, budget)
        total += outcome.cycles_used
        if outcome.status is ExecStatus.TIME_LIMIT:
            return CheckResult(CheckStatus.TIME_LIMIT, total, index)
        if outcome.status is ExecStatus.SCHEME_ERROR:
            return CheckResult(CheckStatus.ERROR, total, index, outcome.error)
        if not values_match(outcome.value, expected, problem.tolerance):
            return CheckResult(CheckStatus.FAIL, total, index)
    return CheckResult(CheckStatus.PASS, total)


# ---------------------------------------------------------------------------
# 系列ファイル
# ---------------------------------------------------------------------------

def _split_example(text: str, where: str) -> Tuple[str, str]:
    """`(<args>) -> <value>` を引数部と値部に分割"""
    text = text.strip()
    if not text.startswith('('):
        raise SequenceParseError(f"{where}: example arguments must be parenthesized")
    depth = 0
    in_string = False
    for i, ch in enumerate(text):
        if in_string:
            if ch == '"' and text[i - 1] != '\\':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == '(':
            depth += 1
        elif ch == ')':
            depth -= 1
            if depth == 0:
                rest = text[i + 1:].strip()
                if not rest.startswith('->'):
                    raise SequenceParseError(f"{where}: expected '->' after arguments")
                return text[:i + 1], rest[2:].strip()
    raise SequenceParseError(f"{where}: unbalanced example arguments")


def _parse_options(tokens: List[str], where: str) -> dict:
    options = {}
    for token in tokens:
        key, sep, value = token.partition('=')
        if not sep:
            raise SequenceParseError(f"{where}: expected key=value, got {token}")
        options[key] = value
    return options


def _parse_number(token: str, where: str):
    try:
        value = parse_datum(token)
    except ParseError as e:
        raise SequenceParseError(f"{where}: {e}") from None
    if not is_number(value):
        raise SequenceParseError(f"{where}: expected a number, got {token}")
    return value


def parse_sequence(text: str, sequence_id: str = 'sequence') -> TrainingSequence:
    """
    系列テキストを TrainingSequence に変換

    Args:
        text: 系列ファイルの内容
        sequence_id: 既定の系列 id

    Returns:
        検証済みの TrainingSequence
    """
    problems: List[ProblemSpec] = []
    current: Optional[dict] = None

    def finish():
        if current is not None:
            problems.append(ProblemSpec(
                id=current['id'], kind=current['kind'], arity=current['arity'],
                examples=tuple(current['examples']), tolerance=current['tol'],
                start_form=current['start'], name=current['name']))

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        where = f"line {lineno}"
        keyword, _, rest = line.partition(' ')
        rest = rest.strip()
        if keyword == 'sequence':
            sequence_id = rest or sequence_id
        elif keyword == 'problem':
            finish()
            tokens = rest.split()
            if not tokens:
                raise SequenceParseError(f"{where}: problem needs an id")
            options = _parse_options(tokens[1:], where)
            unknown = set(options) - {'kind', 'arity', 'tol', 'name'}
            if unknown:
                raise SequenceParseError(f"{where}: unknown options {sorted(unknown)}")
            try:
                arity = int(options.get('arity', '1'))
                tol = float(options.get('tol', DEFAULT_TOLERANCE))
            except ValueError as e:
                raise SequenceParseError(f"{where}: {e}") from None
            current = {'id': tokens[0], 'kind': options.get('kind', 'operator-induction'),
                       'arity': arity, 'tol': tol, 'name': options.get('name'),
                       'examples': [], 'start': None}
        elif current is None:
            raise SequenceParseError(f"{where}: '{keyword}' outside of a problem stanza")
        elif keyword == 'ex':
            args_text, value_text = _split_example(rest, where)
            try:
                args = parse_datum(args_text)
                value = parse_datum(value_text)
            except ParseError as e:
                raise SequenceParseError(f"{where}: {e}") from None
            items = []
            while isinstance(args, Pair):
                items.append(args.car)
                args = args.cdr
            if args is not NIL:
                raise SequenceParseError(f"{where}: example arguments must be a proper list")
            current['examples'].append((tuple(items), value))
        elif keyword == 'invert':
            tokens = rest.split()
            if not tokens:
                raise SequenceParseError(f"{where}: invert needs a target")
            points = [_parse_number(t, where) for t in tokens[1:]]
            try:
                current['examples'].extend(inversion_examples(tokens[0], points))
            except DomainError as e:
                raise SequenceValidationError(f"{where}: {e}") from None
        elif keyword == 'start':
            current['start'] = rest
        else:
            raise SequenceParseError(f"{where}: unknown keyword {keyword}")
    finish()

    sequence = TrainingSequence(sequence_id, tuple(problems))
    violations = validate_sequence(sequence)
    if violations:
        raise SequenceValidationError('; '.join(violations))
    return sequence


def validate_sequence(sequence: TrainingSequence) -> List[str]:
    """系列の検証（空・id 重複・各問題の不備）"""
    violations = []
    if not sequence.problems:
        violations.append("training sequence is empty")
    seen = set()
    names = set()
    for problem in sequence.problems:
        if problem.id in seen:
            violations.append(f"duplicate problem id {problem.id}")
        if problem.call_name in names:
            violations.append(f"duplicate call name {problem.call_name}")
        seen.add(problem.id)
        names.add(problem.call_name)
        violations.extend(problem.validate())
    return violations


def load_sequence(path: str) -> TrainingSequence:
    """
    系列ファイルを読み込み

    Args:
        path: 系列ファイルパス

    Returns:
        TrainingSequence
    """
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    return parse_sequence(text, os.path.splitext(os.path.basename(path))[0])
