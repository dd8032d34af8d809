"""
発見的アルゴリズム記憶（HAM）モジュール
解コーパスと 4 つの更新アルゴリズム（確率平滑化・過去解の再利用・イディオム学習・頻出部分木採掘）、
HAM 状態の直列化を提供
"""
import json
import math
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields, replace
from typing import Dict, FrozenSet, Iterable, List, Sequence, Tuple

from derivation import (
    DerivationError, DerivationTree, Step, frontier, prune_one_level, tree_to_text,
)
from grammar import (
    ARGUMENT_NONTERMINAL, GrammarError, HOOKS, Nonterminal, ProcedureSpec, Production, Scfg, SolutionEntry,
    dump_grammar, format_symbol, is_marker, is_terminal, parse_grammar, parse_symbol,
    solution_call_body, validate,
)
from search import SearchStats, SolutionRecord

PREVIOUS_SOLUTION = 'previous-solution'
SOLUTION_CORPUS = 'solution-corpus'
ABSTRACT_EXPRESSION = 'abstract-expression'
FREQUENT_EXPRESSION = 'frequent-expression'
IDIOM_PREFIX = 'idiom-'
FORMAT_HEADER = '%ham-state 1'
SECTIONS = ('[config]', '[grammar]', '[smoothing]', '[corpus]')


class HamStateError(Exception):
    """HAM 状態関連エラーの基底クラス"""


class DuplicateSolutionId(HamStateError):
    """同じ問題 id の解が既に記憶されている"""


class MissingDerivation(HamStateError):
    """導出列のない解コーパス"""


class CorruptEncoding(HamStateError):
    """HAM 状態ファイルの書式エラー"""


@dataclass(frozen=True)
class HamConfig:
    """HAM 更新設定"""
    alpha: float = 0.125
    gamma: float = 0.5
    idiom_mass: float = 0.5
    support_threshold: int = 2
    prune_cutoff: int = 3
    max_idiom_forms: int = 16
    max_mined: int = 64


@dataclass
class HamState:
    """HAM 状態（文法・解コーパス・平滑化値）"""
    scfg: Scfg
    corpus: List[SolutionRecord] = field(default_factory=list)
    smoothing: Dict[str, float] = field(default_factory=dict)
    config: HamConfig = field(default_factory=HamConfig)

    @classmethod
    def from_grammar(cls, scfg: Scfg, config: HamConfig = None) -> 'HamState':
        """
        初期文法から HAM 状態を作成（不足しているフックは空で宣言）

        Args:
            scfg: 初期文法
            config: 更新設定

        Returns:
            HamState
        """
        scfg = scfg.copy()
        for hook in HOOKS:
            scfg.add_hook(hook)
        return cls(scfg, [], {}, config or HamConfig())

    def copy(self) -> 'HamState':
        return HamState(self.scfg.copy(), list(self.corpus), dict(self.smoothing), self.config)

    def solved_ids(self) -> List[str]:
        return [r.problem_id for r in self.corpus]


@dataclass(frozen=True)
class FrequentSubtree:
    """頻出部分木（閉じたノードは非終端記号の葉）"""
    tree: DerivationTree
    support: int
    key: str


# ---------------------------------------------------------------------------
# 共通
# ---------------------------------------------------------------------------

def _rescale_with_new(existing: List[Production], new: Production, share: float,
                      target: float) -> List[Production]:
    """既存規則を (1 - share) に縮小し、新規則に share を与える（合計 target）"""
    old_total = math.fsum(p.probability for p in existing)
    if not existing or old_total <= 0:
        return [replace(new, probability=target)]
    scale = (1.0 - share) * target / old_total
    return [replace(p, probability=p.probability * scale) for p in existing] + [
        replace(new, probability=share * target)]


def _reset_smoothing(ham: HamState, head: str) -> None:
    prefix = f"{head} -> "
    for key in [k for k in ham.smoothing if k.startswith(prefix) or k == head + ' ->']:
        del ham.smoothing[key]


def _content_size(symbols: Sequence[str]) -> int:
    return sum(1 for s in symbols if not is_marker(s))


# ---------------------------------------------------------------------------
# 過去解の再利用
# ---------------------------------------------------------------------------

def _add_previous_solution(ham: HamState, record: SolutionRecord) -> None:
    scfg = ham.scfg
    if record.problem_id in scfg.solutions:
        raise DuplicateSolutionId(f"solution {record.problem_id} is already stored")
    if any(e.name == record.name for e in scfg.solutions.values()):
        raise DuplicateSolutionId(f"a stored solution is already named {record.name}")
    entry = SolutionEntry(record.problem_id, record.name, record.arity, record.program_text)
    scfg.add_solution(entry)
    if not scfg.procedures.get(SOLUTION_CORPUS):
        scfg.add_hook(SOLUTION_CORPUS)
        scfg.add_procedure(ProcedureSpec(SOLUTION_CORPUS, 'solution-definition', 1.0))
    scfg.add_hook(PREVIOUS_SOLUTION)
    call = Production(PREVIOUS_SOLUTION, solution_call_body(entry), 0.0, 'solution')
    target = 1.0 - scfg.reserved_mass(PREVIOUS_SOLUTION)
    scfg.set_productions(PREVIOUS_SOLUTION, _rescale_with_new(
        scfg.productions_of(PREVIOUS_SOLUTION), call, ham.config.gamma, target))
    _reset_smoothing(ham, PREVIOUS_SOLUTION)


def add_previous_solution(ham: HamState, record: SolutionRecord) -> HamState:
    """
    解の呼び出し規則を previous-solution に確率 γ で追加

    Args:
        ham: HAM 状態
        record: 解の記録

    Returns:
        更新後の HamState（元の状態は変更しない）
    """
    ham = ham.copy()
    _add_previous_solution(ham, record)
    return ham


# ---------------------------------------------------------------------------
# イディオム学習
# ---------------------------------------------------------------------------

def abstract_forms(tree: DerivationTree, cutoff: int) -> List[Tuple[str, ...]]:
    """
    最深の内部ノードを 1 段ずつ刈り込み、刈り込むごとの葉列を集める

    記号数が cutoff 以下になった段の葉列まで集めて終了する。根だけの葉になった形は含めない。

    Args:
        tree: 部分導出木
        cutoff: 終了する記号数

    Returns:
        抽象文形式の記号列のリスト
    """
    forms = []
    current = tree
    while current.children is not None:
        current = prune_one_level(current)
        if current.children is None:
            break
        symbols = frontier(current).symbols
        forms.append(symbols)
        if _content_size(symbols) <= cutoff:
            break
    return forms


def _expression_subtrees(tree: DerivationTree, label: str = ARGUMENT_NONTERMINAL) -> List[DerivationTree]:
    return [n for n in tree.nodes() if n.children is not None and str(n.label) == label
            and not is_terminal(n.label)]


def _learn_idioms(ham: HamState, record: SolutionRecord) -> None:
    scfg = ham.scfg
    existing = {p.body for head in scfg.nonterminals() if head.startswith(IDIOM_PREFIX)
                for p in scfg.productions_of(head)}
    forms: List[Tuple[str, ...]] = []
    for subtree in _expression_subtrees(record.tree):
        for symbols in abstract_forms(subtree, ham.config.prune_cutoff):
            if symbols not in existing and symbols not in forms:
                forms.append(symbols)
    forms = forms[:ham.config.max_idiom_forms]
    if not forms:
        return
    n = 1
    while scfg.has_nonterminal(f"{IDIOM_PREFIX}{n}"):
        n += 1
    head = f"{IDIOM_PREFIX}{n}"
    share = 1.0 / len(forms)
    scfg.set_productions(head, [Production(head, symbols, share, 'idiom') for symbols in forms])
    scfg.add_hook(ABSTRACT_EXPRESSION)
    alternative = Production(ABSTRACT_EXPRESSION, (Nonterminal(head),), 0.0, 'idiom')
    target = 1.0 - scfg.reserved_mass(ABSTRACT_EXPRESSION)
    scfg.set_productions(ABSTRACT_EXPRESSION, _rescale_with_new(
        scfg.productions_of(ABSTRACT_EXPRESSION), alternative, ham.config.idiom_mass, target))
    _reset_smoothing(ham, ABSTRACT_EXPRESSION)


def learn_idioms(ham: HamState, record: SolutionRecord) -> HamState:
    """
    解の expression 部分木を刈り込んだ抽象形を新しいイディオム非終端記号として追加

    Args:
        ham: HAM 状態
        record: 解の記録

    Returns:
        更新後の HamState
    """
    ham = ham.copy()
    _learn_idioms(ham, record)
    return ham


# ---------------------------------------------------------------------------
# 頻出部分木採掘
# ---------------------------------------------------------------------------

def _node_at(root: DerivationTree, path: Tuple[int, ...]) -> DerivationTree:
    n = root
    for i in path:
        n = n.children[i]
    return n


def _pattern(root: DerivationTree, expanded: FrozenSet[Tuple[int, ...]],
             path: Tuple[int, ...] = ()) -> DerivationTree:
    if path in expanded:
        return DerivationTree(root.label, tuple(
            _pattern(c, expanded, path + (i,)) for i, c in enumerate(root.children)))
    return DerivationTree(root.label)


def _closable(expanded: FrozenSet[Tuple[int, ...]]) -> List[Tuple[int, ...]]:
    """子がすべて閉じている展開済みノード（根以外）"""
    return [p for p in expanded if p and not any(q[:-1] == p for q in expanded if q)]


def mine_frequent_trees(trees: Iterable[DerivationTree], root_label: str = ARGUMENT_NONTERMINAL,
                        threshold: int = 2) -> List[FrequentSubtree]:
    """
    根付きラベル付き部分木のうち出現数が threshold 以上のものを段階的に成長させて列挙

    パターンの各内部ノードは子を全部含むか全く含まないかのどちらかで、
    含まないノードは非終端記号の葉になる。

    Args:
        trees: 導出木
        root_label: パターンの根のラベル
        threshold: 最小出現数

    Returns:
        FrequentSubtree のリスト（出現数の降順）
    """
    roots = []
    for tree in trees:
        roots.extend(_expression_subtrees(tree, root_label))

    base = frozenset({()})
    level: Dict[str, Tuple[FrozenSet, List[DerivationTree]]] = {}
    groups: Dict[str, List[DerivationTree]] = defaultdict(list)
    for r in roots:
        groups[tree_to_text(_pattern(r, base))].append(r)
    for key, occurrences in groups.items():
        if len(occurrences) >= threshold:
            level[key] = (base, occurrences)

    found: Dict[str, FrequentSubtree] = {}
    while level:
        for key, (expanded, occurrences) in level.items():
            found[key] = FrequentSubtree(_pattern(occurrences[0], expanded), len(occurrences), key)
        candidates: Dict[str, Tuple[FrozenSet, List[DerivationTree]]] = {}
        seen = set()
        for expanded, occurrences in level.values():
            closed = sorted({p + (i,) for p in expanded
                             for i in range(len(_node_at(occurrences[0], p).children))} - expanded)
            for path in closed:
                grown = expanded | {path}
                groups = defaultdict(list)
                for r in occurrences:
                    if _node_at(r, path).children is not None:
                        groups[tree_to_text(_pattern(r, grown))].append(r)
                for key, matched in groups.items():
                    if key in seen:
                        continue
                    seen.add(key)
                    if len(matched) < threshold:
                        continue
                    if all(tree_to_text(_pattern(matched[0], grown - {q})) in level
                           for q in _closable(grown)):
                        candidates[key] = (grown, matched)
        level = candidates

    return sorted(found.values(), key=lambda f: (-f.support, -f.tree.size(), f.key))


def _mine_frequent_subprograms(ham: HamState) -> None:
    scfg = ham.scfg
    patterns = mine_frequent_trees([r.tree for r in ham.corpus], ARGUMENT_NONTERMINAL,
                                   ham.config.support_threshold)
    support: Dict[Tuple[str, ...], int] = {}
    for pattern in patterns:
        symbols = frontier(pattern.tree).symbols
        if not any(is_terminal(s) for s in symbols):
            continue
        support[symbols] = support.get(symbols, 0) + pattern.support
    ranked = sorted(support.items(), key=lambda item: -item[1])[:ham.config.max_mined]
    scfg.add_hook(FREQUENT_EXPRESSION)
    total = sum(count for _, count in ranked)
    target = 1.0 - scfg.reserved_mass(FREQUENT_EXPRESSION)
    scfg.set_productions(FREQUENT_EXPRESSION, [
        Production(FREQUENT_EXPRESSION, symbols, target * count / total, 'mined')
        for symbols, count in ranked])
    _reset_smoothing(ham, FREQUENT_EXPRESSION)


def mine_frequent_subprograms(ham: HamState) -> HamState:
    """
    解コーパスの頻出部分木で frequent-expression を書き換え（確率は出現数に比例）

    Args:
        ham: HAM 状態

    Returns:
        更新後の HamState
    """
    ham = ham.copy()
    _mine_frequent_subprograms(ham)
    return ham


# ---------------------------------------------------------------------------
# 確率平滑化
# ---------------------------------------------------------------------------

def _update_probabilities(ham: HamState) -> None:
    if not ham.corpus:
        raise MissingDerivation("solution corpus is empty")
    counts: Dict[str, Counter] = defaultdict(Counter)
    for record in ham.corpus:
        if not record.steps:
            raise MissingDerivation(f"solution {record.problem_id} has no derivation")
        for step in record.steps:
            if step.key is not None:
                counts[step.head][step.key] += 1

    scfg = ham.scfg
    alpha = ham.config.alpha
    for head, counter in counts.items():
        productions = scfg.productions_of(head)
        if not productions:
            continue
        total = sum(counter.values())
        smoothed = {}
        for p in productions:
            ratio = counter.get(p.key, 0) / total
            previous = ham.smoothing.get(p.key, p.probability)
            smoothed[p.key] = alpha * ratio + (1.0 - alpha) * previous
        ham.smoothing.update(smoothed)
        mass = math.fsum(smoothed.values())
        if mass <= 0:
            continue
        target = 1.0 - scfg.reserved_mass(head)
        scfg.set_productions(head, [replace(p, probability=smoothed[p.key] * target / mass)
                                    for p in productions])


def update_probabilities(ham: HamState) -> HamState:
    """
    解コーパス中の規則頻度で静的規則の確率を指数平滑化

    Args:
        ham: HAM 状態

    Returns:
        更新後の HamState
    """
    ham = ham.copy()
    _update_probabilities(ham)
    return ham


def full_update(ham: HamState, record: SolutionRecord) -> HamState:
    """
    4 つの更新を順に適用（過去解 → イディオム → 採掘 → 平滑化）

    Args:
        ham: HAM 状態
        record: 新しく解いた問題の記録

    Returns:
        更新後の HamState
    """
    if record.problem_id in ham.solved_ids() or record.problem_id in ham.scfg.solutions:
        raise DuplicateSolutionId(f"solution {record.problem_id} is already stored")
    if not record.steps:
        raise MissingDerivation(f"solution {record.problem_id} has no derivation")
    ham = ham.copy()
    ham.corpus.append(record)
    _add_previous_solution(ham, record)
    _learn_idioms(ham, record)
    _mine_frequent_subprograms(ham)
    _update_probabilities(ham)
    violations = validate(ham.scfg)
    if violations:
        raise HamStateError("; ".join(violations))
    return ham


# ---------------------------------------------------------------------------
# 直列化
# ---------------------------------------------------------------------------

def _encode_symbols(symbols: Sequence[str]) -> List[str]:
    return [format_symbol(s) for s in symbols]


def _decode_symbols(items: Sequence[str]) -> Tuple[str, ...]:
    return tuple(parse_symbol(s) for s in items)


def _record_lines(record: SolutionRecord) -> List[str]:
    header = {
        'id': record.problem_id, 'name': record.name, 'arity': record.arity,
        'program': record.program_text, 'p': record.p, 't': record.t,
        'log_prob': record.log_prob, 'stats': record.stats.to_dict(),
        'start': _encode_symbols(record.start),
    }
    steps = [[s.head, _encode_symbols(s.body), s.probability, s.key] for s in record.steps]
    return [
        'record ' + json.dumps(header, sort_keys=True, ensure_ascii=False),
        'steps ' + json.dumps(steps, ensure_ascii=False),
        'tree ' + tree_to_text(record.tree),
    ]


def serialize(ham: HamState) -> bytes:
    """
    HAM 状態の正準テキスト表現（UTF-8）

    Args:
        ham: HAM 状態

    Returns:
        バイト列（長さが |HAM|）
    """
    lines = [FORMAT_HEADER, '[config]']
    for f in fields(HamConfig):
        lines.append(f"{f.name} {getattr(ham.config, f.name)!r}")
    lines.append('[grammar]')
    lines.extend(dump_grammar(ham.scfg).splitlines())
    lines.append('[smoothing]')
    for key in sorted(ham.smoothing):
        lines.append(f"{ham.smoothing[key]!r} {key}")
    lines.append('[corpus]')
    for record in ham.corpus:
        lines.extend(_record_lines(record))
    return ('\n'.join(lines) + '\n').encode('utf-8')


def _parse_record(header_line: str, steps_line: str, tree_line: str) -> SolutionRecord:
    if not (header_line.startswith('record ') and steps_line.startswith('steps ')
            and tree_line.startswith('tree ')):
        raise CorruptEncoding("corpus record must be record/steps/tree lines")
    header = json.loads(header_line[len('record '):])
    steps = tuple(Step(head, _decode_symbols(body), float(prob), key)
                  for head, body, prob, key in json.loads(steps_line[len('steps '):]))
    record = SolutionRecord(
        problem_id=header['id'], name=header['name'], arity=int(header['arity']),
        program_text=header['program'], steps=steps, start=_decode_symbols(header['start']),
        p=float(header['p']), t=int(header['t']), stats=SearchStats(**header['stats']),
        log_prob=float(header['log_prob']))
    if tree_to_text(record.tree) != tree_line[len('tree '):]:
        raise CorruptEncoding(f"tree of {record.problem_id} does not match its derivation")
    return record


def deserialize(data: bytes) -> HamState:
    """
    正準テキスト表現から HAM 状態を復元

    Args:
        data: serialize の出力

    Returns:
        HamState
    """
    try:
        lines = data.decode('utf-8').splitlines()
        if not lines or lines[0] != FORMAT_HEADER:
            raise CorruptEncoding("missing HAM state header")
        sections: Dict[str, List[str]] = {}
        current = None
        for line in lines[1:]:
            if line in SECTIONS:
                current = line
                sections[current] = []
            elif current is None:
                raise CorruptEncoding("content before the first section")
            else:
                sections[current].append(line)
        if tuple(sections) != SECTIONS:
            raise CorruptEncoding(f"expected sections {' '.join(SECTIONS)}")

        defaults = HamConfig()
        values = {}
        for line in sections['[config]']:
            name, _, value = line.partition(' ')
            kind = type(getattr(defaults, name))
            values[name] = kind(float(value)) if kind is int else kind(value)
        config = HamConfig(**values)

        scfg = parse_grammar('\n'.join(sections['[grammar]']))
        smoothing = {}
        for line in sections['[smoothing]']:
            value, _, key = line.partition(' ')
            smoothing[key] = float(value)

        body = sections['[corpus]']
        if len(body) % 3:
            raise CorruptEncoding("truncated corpus record")
        corpus = [_parse_record(*body[i:i + 3]) for i in range(0, len(body), 3)]
    except CorruptEncoding:
        raise
    except (ValueError, KeyError, TypeError, AttributeError, GrammarError, DerivationError) as e:
        raise CorruptEncoding(f"bad HAM state: {e}") from None
    return HamState(scfg, corpus, smoothing, config)


def ham_size(ham: HamState) -> int:
    """|HAM|（直列化したバイト数）"""
    return len(serialize(ham))


def save_ham(ham: HamState, path: str) -> int:
    """
    HAM 状態をファイルに保存

    Args:
        ham: HAM 状態
        path: 保存先

    Returns:
        書き込んだバイト数
    """
    data = serialize(ham)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp = path + '.tmp'
    with open(tmp, 'wb') as f:
        f.write(data)
    os.replace(tmp, path)
    return len(data)


def load_ham(path: str) -> HamState:
    """HAM 状態ファイルを読み込み"""
    with open(path, 'rb') as f:
        return deserialize(f.read())
