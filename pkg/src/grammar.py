"""
確率文脈自由文法モジュール
Scheme プログラムの SCFG（静的生成規則・生成手続き・検証・Zeta リテラル表）を提供
"""
import json
import math
import re
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from scheme_stdlib import Arity, default_manifest

SUM_TOLERANCE = 1e-9

HOOKS = ('previous-solution', 'solution-corpus', 'abstract-expression', 'frequent-expression')
STANDARD_PROCEDURE = 'standard-procedure'
ARGUMENT_NONTERMINAL = 'expression'

PROCEDURE_KINDS = ('integer-literal', 'variable-name', 'fresh-variable', 'solution-definition')
ORIGINS = ('initial', 'solution', 'idiom', 'mined')

VARIABLE_COUNT = 7
VARIABLE_RE = re.compile(r'^var\d+$')
ZETA_S = 2.0
ZETA_KMAX = 256

_NAME_RE = re.compile(r'^[A-Za-z][A-Za-z0-9_\-*+/<>=?!.]*$')
_TOKEN_RE = re.compile(r'"(?:[^"\\]|\\.)*"|\S+')


class GrammarError(Exception):
    """文法関連エラーの基底クラス"""


class GrammarParseError(GrammarError):
    """文法ファイルの書式エラー"""


class ValidationError(GrammarError):
    """文法の検証エラー"""

    def __init__(self, violations: List[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class UnknownNonTerminal(GrammarError, KeyError):
    """未定義の非終端記号"""


class DomainError(ValueError):
    """引数が定義域外"""


class Nonterminal(str):
    """非終端記号（同名の終端記号とは等しくない）"""
    __slots__ = ()

    def __eq__(self, other):
        return type(other) is Nonterminal and str.__eq__(self, other)

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return hash(('<nt>', str(self)))

    def __repr__(self):
        return f"<{str(self)}>"


class Marker(str):
    """スコープ操作マーカー（!push, !pop, !bind:<name>, !define:<id>）"""
    __slots__ = ()

    def __eq__(self, other):
        return type(other) is Marker and str.__eq__(self, other)

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return hash(('<marker>', str(self)))

    def __repr__(self):
        return str(self)


def is_nonterminal(symbol) -> bool:
    return type(symbol) is Nonterminal


def is_marker(symbol) -> bool:
    return type(symbol) is Marker


def is_terminal(symbol) -> bool:
    return type(symbol) is str


@dataclass(frozen=True)
class Production:
    """静的生成規則"""
    head: str
    body: Tuple[str, ...]
    probability: float
    origin: str = 'initial'

    @property
    def key(self) -> str:
        return production_key(self.head, self.body)


@dataclass(frozen=True)
class ProcedureSpec:
    """生成手続き（文脈に応じて本体を動的生成）"""
    head: str
    kind: str
    mass: float


@dataclass(frozen=True)
class SolutionEntry:
    """再利用可能な過去の解"""
    id: str
    name: str
    arity: int
    text: str


class Expansion(NamedTuple):
    """productions_for が返す展開候補"""
    head: str
    body: Tuple[str, ...]
    probability: float
    key: Optional[str]


@dataclass(frozen=True)
class GenerationContext:
    """
    導出経路ごとの生成文脈

    bound: スコープ内の変数名（順序付き）
    marks: !push 時点の bound の長さのスタック
    defined: 現在の部分プログラムで定義済みの解 id
    available: 利用可能な過去の解
    """
    bound: Tuple[str, ...] = ()
    marks: Tuple[int, ...] = ()
    defined: FrozenSet[str] = frozenset()
    available: Tuple[SolutionEntry, ...] = ()

    def apply_marker(self, marker: str) -> 'GenerationContext':
        marker = str(marker)
        if marker == '!push':
            return replace(self, marks=self.marks + (len(self.bound),))
        if marker == '!pop':
            if not self.marks:
                return self
            return replace(self, bound=self.bound[:self.marks[-1]], marks=self.marks[:-1])
        if marker.startswith('!bind:'):
            name = marker[len('!bind:'):]
            if name in self.bound:
                return self
            return replace(self, bound=self.bound + (name,))
        if marker.startswith('!define:'):
            return replace(self, defined=self.defined | {marker[len('!define:'):]})
        raise GrammarError(f"unknown marker: {marker}")

    def bind(self, names: Iterable[str]) -> 'GenerationContext':
        ctx = self
        for name in names:
            ctx = ctx.apply_marker(Marker('!bind:' + name))
        return ctx


@dataclass
class ZetaTable:
    """打ち切り正規化した Zeta 分布表"""
    s: float
    kmax: int
    probs: np.ndarray

    def prob(self, k: int) -> float:
        """k (1 始まり) の確率"""
        return float(self.probs[k - 1])


def production_key(head: str, body: Sequence[str]) -> str:
    return f"{head} -> {' '.join(format_symbol(s) for s in body)}".rstrip()


@lru_cache(maxsize=64)
def zeta_table(s: float = ZETA_S, kmax: int = ZETA_KMAX) -> ZetaTable:
    """
    Zeta 分布表を作成（1..kmax で再正規化）

    Args:
        s: 指数（s > 1）
        kmax: 最大整数

    Returns:
        ZetaTable
    """
    if not s > 1:
        raise DomainError(f"zeta exponent must be > 1, got {s}")
    if kmax < 1:
        raise DomainError(f"kmax must be >= 1, got {kmax}")
    weights = np.arange(1, kmax + 1, dtype=np.float64) ** (-float(s))
    probs = weights / weights.sum()
    probs.setflags(write=False)
    return ZetaTable(float(s), int(kmax), probs)


# ---------------------------------------------------------------------------
# 記号の書式
# ---------------------------------------------------------------------------

def format_symbol(symbol: str) -> str:
    """文法ファイル書式での記号表現"""
    if is_nonterminal(symbol) or is_marker(symbol):
        return str(symbol)
    return json.dumps(symbol, ensure_ascii=False)


def parse_symbol(token: str) -> str:
    if token.startswith('"'):
        try:
            return json.loads(token)
        except json.JSONDecodeError as e:
            raise GrammarParseError(f"bad terminal {token}: {e}") from None
    if token.startswith('!'):
        _check_marker(token)
        return Marker(token)
    if not _NAME_RE.match(token):
        raise GrammarParseError(f"bad nonterminal name: {token}")
    return Nonterminal(token)


def _check_marker(token: str) -> None:
    if token in ('!push', '!pop'):
        return
    for prefix in ('!bind:', '!define:'):
        if token.startswith(prefix) and len(token) > len(prefix):
            return
    raise GrammarParseError(f"unknown marker: {token}")


def format_sentential_form(symbols: Sequence[str]) -> str:
    """文形式を `<nt>` 記法のテキストに変換"""
    parts = []
    for s in symbols:
        if is_nonterminal(s):
            parts.append(f"<{s}>")
        elif is_marker(s):
            parts.append(str(s))
        elif not s or any(c.isspace() for c in s) or s[0] in '<!"':
            parts.append(json.dumps(s, ensure_ascii=False))
        else:
            parts.append(s)
    return ' '.join(parts)


def parse_sentential_form(text: str) -> Tuple[str, ...]:
    """`<nt>` 記法のテキストを記号列に変換"""
    symbols = []
    for token in _TOKEN_RE.findall(text):
        if token.startswith('<') and token.endswith('>') and len(token) > 2:
            symbols.append(Nonterminal(token[1:-1]))
        elif token.startswith('!'):
            _check_marker(token)
            symbols.append(Marker(token))
        elif token.startswith('"'):
            symbols.append(json.loads(token))
        else:
            symbols.append(token)
    return tuple(symbols)


# ---------------------------------------------------------------------------
# Scfg
# ---------------------------------------------------------------------------

class _HeadView(NamedTuple):
    statics: Tuple[Tuple[Expansion, Tuple[str, ...]], ...]
    procedures: Tuple[ProcedureSpec, ...]
    scale: float


class Scfg:
    """確率文脈自由文法（HAM の長期記憶表現）"""

    def __init__(self, start: str = 'program'):
        self.start = start
        self.hooks: List[str] = []
        self.declared: List[str] = []
        self.productions: Dict[str, List[Production]] = {}
        self.procedures: Dict[str, List[ProcedureSpec]] = {}
        self.solutions: Dict[str, SolutionEntry] = {}
        self._views: Optional[Dict[str, _HeadView]] = None

    # -- 構造 --------------------------------------------------------------

    def nonterminals(self) -> List[str]:
        """宣言順の非終端記号一覧"""
        seen = dict.fromkeys(self.declared)
        for name in self.productions:
            seen.setdefault(name)
        for name in self.procedures:
            seen.setdefault(name)
        return list(seen)

    def has_nonterminal(self, name: str) -> bool:
        name = str(name)
        return name in self.productions or name in self.procedures or name in self.declared

    def declare(self, name: str) -> None:
        name = str(name)
        if name not in self.declared:
            self.declared.append(name)
            self.invalidate()

    def add_hook(self, name: str) -> None:
        name = str(name)
        if name not in self.hooks:
            self.hooks.append(name)
        self.declare(name)

    def add_production(self, production: Production) -> None:
        self.declare(production.head)
        self.productions.setdefault(production.head, []).append(production)
        self.invalidate()

    def set_productions(self, head: str, productions: List[Production]) -> None:
        """見出し head の静的生成規則を置き換え"""
        head = str(head)
        self.declare(head)
        self.productions[head] = list(productions)
        self.invalidate()

    def productions_of(self, head: str) -> List[Production]:
        return self.productions.get(str(head), [])

    def add_procedure(self, spec: ProcedureSpec) -> None:
        if spec.kind not in PROCEDURE_KINDS:
            raise GrammarError(f"unknown production procedure kind: {spec.kind}")
        self.declare(spec.head)
        self.procedures.setdefault(spec.head, []).append(spec)
        self.invalidate()

    def add_solution(self, entry: SolutionEntry) -> None:
        self.solutions[entry.id] = entry
        self.invalidate()

    def static_mass(self, head: str) -> float:
        return math.fsum(p.probability for p in self.productions_of(head))

    def reserved_mass(self, head: str) -> float:
        return math.fsum(s.mass for s in self.procedures.get(str(head), []))

    def head_total(self, head: str) -> float:
        return self.static_mass(head) + self.reserved_mass(head)

    def invalidate(self) -> None:
        self._views = None

    def initial_context(self, bound: Iterable[str] = ()) -> GenerationContext:
        """探索開始時の生成文脈"""
        return GenerationContext(bound=tuple(dict.fromkeys(bound)),
                                 available=tuple(self.solutions.values()))

    # -- 比較・複製 ----------------------------------------------------------

    def __eq__(self, other):
        if not isinstance(other, Scfg):
            return NotImplemented
        return (self.start == other.start and self.hooks == other.hooks
                and self.nonterminals() == other.nonterminals()
                and {h: ps for h, ps in self.productions.items() if ps}
                == {h: ps for h, ps in other.productions.items() if ps}
                and {h: ss for h, ss in self.procedures.items() if ss}
                == {h: ss for h, ss in other.procedures.items() if ss}
                and list(self.solutions.values()) == list(other.solutions.values()))

    __hash__ = None

    def copy(self) -> 'Scfg':
        """構造の複製（Production 等は不変なので共有）"""
        other = Scfg(self.start)
        other.hooks = list(self.hooks)
        other.declared = list(self.declared)
        other.productions = {h: list(ps) for h, ps in self.productions.items()}
        other.procedures = {h: list(ss) for h, ss in self.procedures.items()}
        other.solutions = dict(self.solutions)
        return other

    def __getstate__(self):
        state = self.__dict__.copy()
        state['_views'] = None
        return state

    # -- 生存解析 ------------------------------------------------------------

    def _procedure_live(self, spec: ProcedureSpec) -> bool:
        if spec.mass <= 0:
            return False
        if spec.kind == 'solution-definition':
            return bool(self.solutions)
        return True

    def live_nonterminals(self, hooks_live: bool = False) -> FrozenSet[str]:
        """
        生産的な非終端記号の最小不動点

        Args:
            hooks_live: True ならフックを常に生産的とみなす（検証用）
        """
        live = set(self.hooks) if hooks_live else set()
        changed = True
        while changed:
            changed = False
            for head in self.nonterminals():
                if head in live:
                    continue
                if any(self._procedure_live(s) for s in self.procedures.get(head, [])) or any(
                        p.probability > 0 and all(str(x) in live for x in p.body if is_nonterminal(x))
                        for p in self.productions_of(head)):
                    live.add(head)
                    changed = True
        return frozenset(live)

    def _build_views(self) -> Dict[str, _HeadView]:
        live = self.live_nonterminals()
        solution_names = frozenset(e.name for e in self.solutions.values())
        views = {}
        for head in self.nonterminals():
            statics = []
            live_mass = 0.0
            for p in self.productions_of(head):
                if all(str(x) in live for x in p.body if is_nonterminal(x)):
                    statics.append((p, _free_names(p.body, solution_names)))
                    live_mass += p.probability
            procedures = tuple(s for s in self.procedures.get(head, []) if self._procedure_live(s))
            live_mass += sum(s.mass for s in procedures)
            total = self.head_total(head)
            scale = total / live_mass if live_mass > 0 else 0.0
            expansions = tuple((Expansion(head, p.body, p.probability * scale, p.key), needs)
                               for p, needs in statics)
            views[head] = _HeadView(expansions, procedures, scale)
        return views

    def view(self, head: str) -> _HeadView:
        if self._views is None:
            self._views = self._build_views()
        try:
            return self._views[str(head)]
        except KeyError:
            raise UnknownNonTerminal(str(head)) from None


def _free_names(body: Sequence[str], solution_names: FrozenSet[str]) -> Tuple[str, ...]:
    """本体が参照する（本体内で束縛されない）変数名・解の名前"""
    bound = set()
    needs = []
    for i, s in enumerate(body):
        if is_marker(s):
            if s.startswith('!bind:'):
                bound.add(s[len('!bind:'):])
            continue
        if not is_terminal(s) or s in bound:
            continue
        if VARIABLE_RE.match(s) or s in solution_names:
            nxt = body[i + 1] if i + 1 < len(body) else None
            if nxt is not None and is_marker(nxt) and nxt == Marker('!bind:' + s):
                continue
            needs.append(s)
    return tuple(dict.fromkeys(needs))


# ---------------------------------------------------------------------------
# 生成規則の列挙
# ---------------------------------------------------------------------------

def productions_for(scfg: Scfg, head: str, ctx: GenerationContext) -> List[Expansion]:
    """
    見出し head の展開候補（静的規則＋生成手続きの展開）

    死んだ規則を除いて再正規化し、文脈で参照できない名前を含む規則は除外する。

    Args:
        scfg: 文法
        head: 非終端記号
        ctx: 生成文脈

    Returns:
        Expansion のリスト（決定的な順序）
    """
    view = scfg.view(head)
    result = [e for e, needs in view.statics if all(n in ctx.bound for n in needs)]
    for spec in view.procedures:
        result.extend(expand_procedure(scfg, spec, ctx, spec.mass * view.scale))
    return result


def expand_procedure(scfg: Scfg, spec: ProcedureSpec, ctx: GenerationContext, mass: float) -> List[Expansion]:
    """生成手続きを文脈に応じて展開"""
    head = spec.head
    if spec.kind == 'integer-literal':
        return list(_integer_expansions(head, mass))
    if spec.kind == 'variable-name':
        return _variable_expansions(head, ctx, mass)
    if spec.kind == 'fresh-variable':
        n = sum(1 for name in ctx.bound if VARIABLE_RE.match(name))
        if n >= VARIABLE_COUNT:
            return []
        name = f"var{n}"
        return [Expansion(head, (name, Marker('!bind:' + name)), mass, None)]
    if spec.kind == 'solution-definition':
        return _definition_expansions(scfg, head, ctx, mass)
    raise GrammarError(f"unknown production procedure kind: {spec.kind}")


@lru_cache(maxsize=32)
def _integer_expansions(head: str, mass: float) -> Tuple[Expansion, ...]:
    table = zeta_table(ZETA_S, ZETA_KMAX)
    return tuple(Expansion(head, (str(k),), mass * table.prob(k), None) for k in range(1, table.kmax + 1))


def _variable_expansions(head: str, ctx: GenerationContext, mass: float) -> List[Expansion]:
    candidates = [f"var{i}" for i in range(VARIABLE_COUNT)]
    candidates += [name for name in ctx.bound if not VARIABLE_RE.match(name)]
    weights = [(name, (k + 1) ** -ZETA_S) for k, name in enumerate(candidates) if name in ctx.bound]
    total = math.fsum(w for _, w in weights)
    if total == 0:
        return []
    return [Expansion(head, (name,), mass * w / total, None) for name, w in weights]


def _definition_expansions(scfg: Scfg, head: str, ctx: GenerationContext, mass: float) -> List[Expansion]:
    entries = ctx.available or tuple(scfg.solutions.values())
    if not entries:
        return []
    call_weight = {}
    for p in scfg.productions_of('previous-solution'):
        for entry in entries:
            if len(p.body) > 1 and p.body[1] == entry.name:
                call_weight[entry.id] = call_weight.get(entry.id, 0.0) + p.probability
    total = math.fsum(call_weight.get(e.id, 0.0) for e in entries)
    result = []
    for entry in entries:
        share = call_weight.get(entry.id, 0.0) / total if total > 0 else 1.0 / len(entries)
        probability = 0.0 if entry.id in ctx.defined else mass * share
        body = (entry.text, Marker('!bind:' + entry.name), Marker('!define:' + entry.id))
        result.append(Expansion(head, body, probability, None))
    return result


# ---------------------------------------------------------------------------
# 読み込み・書き出し
# ---------------------------------------------------------------------------

def standard_procedure_body(name: str, arity: Arity) -> Tuple[str, ...]:
    """標準手続き呼び出しの本体（正しい引数個数）"""
    args = (Nonterminal(ARGUMENT_NONTERMINAL),) * arity.generation_count()
    return ('(', name) + args + (')',)


def solution_call_body(entry: SolutionEntry) -> Tuple[str, ...]:
    """過去の解の呼び出し本体"""
    return ('(', entry.name) + (Nonterminal(ARGUMENT_NONTERMINAL),) * entry.arity + (')',)


def _parse_probability(token: str, where: str) -> float:
    if not token.startswith('@'):
        raise GrammarParseError(f"{where}: expected @probability, got {token}")
    try:
        return float(token[1:])
    except ValueError:
        raise GrammarParseError(f"{where}: bad probability {token}") from None


def parse_grammar(text: str, manifest: Dict[str, Arity] = None) -> Scfg:
    """
    文法テキストを Scfg に変換（検証はしない）

    Args:
        text: 文法ファイルの内容
        manifest: 標準ライブラリマニフェスト

    Returns:
        Scfg
    """
    scfg = Scfg()
    start = None
    stdlib_names: List[str] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        where = f"line {lineno}"
        tokens = _TOKEN_RE.findall(line)
        directive = tokens[0]
        if directive == '%start':
            if len(tokens) != 2:
                raise GrammarParseError(f"{where}: %start takes one nonterminal")
            start = tokens[1]
        elif directive == '%hook':
            for name in tokens[1:]:
                scfg.add_hook(name)
        elif directive == '%declare':
            for name in tokens[1:]:
                scfg.declare(name)
        elif directive == '%stdlib':
            stdlib_names.extend(tokens[1:])
        elif directive == '%proc':
            if len(tokens) != 4:
                raise GrammarParseError(f"{where}: expected %proc head kind @mass")
            if tokens[2] not in PROCEDURE_KINDS:
                raise GrammarParseError(f"{where}: unknown production procedure kind {tokens[2]}")
            scfg.add_procedure(ProcedureSpec(tokens[1], tokens[2], _parse_probability(tokens[3], where)))
        elif directive == '%solution':
            if len(tokens) != 5:
                raise GrammarParseError(f"{where}: expected %solution id name arity \"text\"")
            try:
                entry = SolutionEntry(tokens[1], tokens[2], int(tokens[3]), json.loads(tokens[4]))
            except (ValueError, json.JSONDecodeError) as e:
                raise GrammarParseError(f"{where}: {e}") from None
            scfg.add_solution(entry)
        elif directive.startswith('%'):
            raise GrammarParseError(f"{where}: unknown directive {directive}")
        else:
            scfg.add_production(_parse_production(tokens, where))
    if stdlib_names:
        _add_standard_procedures(scfg, stdlib_names, manifest)
    nts = scfg.nonterminals()
    if not nts:
        raise GrammarParseError("grammar has no productions")
    scfg.start = start or nts[0]
    scfg.declare(scfg.start)
    return scfg


def _parse_production(tokens: List[str], where: str) -> Production:
    if len(tokens) < 3 or tokens[1] != '->':
        raise GrammarParseError(f"{where}: expected 'head -> body @probability'")
    head = tokens[0]
    if not _NAME_RE.match(head):
        raise GrammarParseError(f"{where}: bad nonterminal name {head}")
    origin = 'initial'
    rest = tokens[2:]
    if rest and rest[-1].startswith('[origin=') and rest[-1].endswith(']'):
        origin = rest[-1][len('[origin='):-1]
        rest = rest[:-1]
        if origin not in ORIGINS:
            raise GrammarParseError(f"{where}: unknown origin {origin}")
    if not rest:
        raise GrammarParseError(f"{where}: missing @probability")
    probability = _parse_probability(rest[-1], where)
    body = tuple(parse_symbol(t) for t in rest[:-1])
    return Production(head, body, probability, origin)


def _add_standard_procedures(scfg: Scfg, names: List[str], manifest: Dict[str, Arity] = None) -> None:
    manifest = manifest if manifest is not None else default_manifest()
    if names == ['*']:
        names = list(manifest)
    unknown = [n for n in names if n not in manifest]
    if unknown:
        raise GrammarParseError(f"%stdlib names not in manifest: {', '.join(unknown)}")
    names = list(dict.fromkeys(names))
    share = max(0.0, 1.0 - scfg.static_mass(STANDARD_PROCEDURE)) / len(names)
    for name in names:
        scfg.add_production(Production(STANDARD_PROCEDURE, standard_procedure_body(name, manifest[name]), share))


def load_grammar(path: str, manifest: Dict[str, Arity] = None) -> Scfg:
    """
    文法ファイルを読み込み検証

    Args:
        path: 文法ファイルパス
        manifest: 標準ライブラリマニフェスト

    Returns:
        検証済み Scfg
    """
    with open(path, 'r', encoding='utf-8') as f:
        return load_grammar_text(f.read(), manifest)


def load_grammar_text(text: str, manifest: Dict[str, Arity] = None) -> Scfg:
    scfg = parse_grammar(text, manifest)
    violations = validate(scfg)
    if violations:
        raise ValidationError(violations)
    return scfg


def dump_grammar(scfg: Scfg) -> str:
    """Scfg を決定的な文法テキストに変換（標準手続きは展開済みの規則として出力）"""
    lines = [f"%start {scfg.start}", "%declare " + ' '.join(scfg.nonterminals())]
    for hook in scfg.hooks:
        lines.append(f"%hook {hook}")
    for head in scfg.nonterminals():
        for spec in scfg.procedures.get(head, []):
            lines.append(f"%proc {spec.head} {spec.kind} @{spec.mass!r}")
    for entry in scfg.solutions.values():
        lines.append(f"%solution {entry.id} {entry.name} {entry.arity} {json.dumps(entry.text, ensure_ascii=False)}")
    for head in scfg.nonterminals():
        for p in scfg.productions_of(head):
            body = ' '.join(format_symbol(s) for s in p.body)
            origin = '' if p.origin == 'initial' else f" [origin={p.origin}]"
            lines.append(f"{p.head} -> {body + ' ' if body else ''}@{p.probability!r}{origin}")
    return '\n'.join(lines) + '\n'


# ---------------------------------------------------------------------------
# 検証
# ---------------------------------------------------------------------------

def validate(scfg: Scfg) -> List[str]:
    """
    文法の検証

    Args:
        scfg: 文法

    Returns:
        違反のリスト（空なら妥当）
    """
    violations = []
    nts = scfg.nonterminals()
    known = set(nts)
    if scfg.start not in known:
        violations.append(f"start symbol {scfg.start} is not declared")
    for head in nts:
        for p in scfg.productions_of(head):
            if not 0.0 <= p.probability <= 1.0 or math.isnan(p.probability):
                violations.append(f"probability out of range: {p.key} @{p.probability}")
            for s in p.body:
                if is_nonterminal(s) and str(s) not in known:
                    violations.append(f"dangling nonterminal {s} in {p.key}")
        keys = [p.key for p in scfg.productions_of(head)]
        if len(keys) != len(set(keys)):
            violations.append(f"duplicate production under {head}")
        for spec in scfg.procedures.get(head, []):
            if not 0.0 <= spec.mass <= 1.0:
                violations.append(f"procedure mass out of range: {head} {spec.kind} @{spec.mass}")
        total = scfg.head_total(head)
        if head in scfg.hooks and total == 0:
            continue
        if abs(total - 1.0) > SUM_TOLERANCE:
            violations.append(f"probabilities of {head} sum to {total!r}, not 1")
    reachable = _reachable(scfg, known)
    for head in nts:
        if head not in reachable and head not in scfg.hooks:
            violations.append(f"unreachable nonterminal {head}")
    productive = scfg.live_nonterminals(hooks_live=True)
    for head in nts:
        if head not in productive and not (head in scfg.hooks and scfg.head_total(head) == 0):
            violations.append(f"unproductive nonterminal {head}")
    return violations


def _reachable(scfg: Scfg, known) -> set:
    seen = {scfg.start} if scfg.start in known else set()
    seen.update(h for h in scfg.hooks if h in known)
    stack = list(seen)
    while stack:
        head = stack.pop()
        for p in scfg.productions_of(head):
            for s in p.body:
                name = str(s)
                if is_nonterminal(s) and name in known and name not in seen:
                    seen.add(name)
                    stack.append(name)
    return seen
