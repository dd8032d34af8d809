"""
導出モジュール
最左導出の文形式・導出木の構築・ボトムアップ枝刈り・木のテキスト表現を提供
"""
import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

from grammar import (
    Expansion, GenerationContext, Marker, Nonterminal, format_sentential_form,
    is_marker, is_nonterminal,
)

START_FORM = Nonterminal('start-form')


class DerivationError(Exception):
    """導出関連エラーの基底クラス"""


class HeadMismatch(DerivationError):
    """生成規則の見出しが最左非終端記号と一致しない"""


class ZeroProbability(DerivationError):
    """確率 0 の生成規則は適用できない"""


class IncompleteDerivation(DerivationError):
    """導出列が木を完成させない"""


class AlreadyLeaf(DerivationError):
    """葉だけの木はこれ以上枝刈りできない"""


class TreeParseError(DerivationError):
    """木のテキスト表現の書式エラー"""


@dataclass(frozen=True)
class Step:
    """適用した生成規則（key は静的規則の識別子、生成手続きなら None）"""
    head: str
    body: Tuple[str, ...]
    probability: float
    key: Optional[str] = None

    @classmethod
    def from_expansion(cls, expansion: Expansion) -> 'Step':
        return cls(str(expansion.head), tuple(expansion.body), expansion.probability, expansion.key)


def _leftmost(symbols: Sequence[str], start: int = 0) -> Optional[int]:
    for i in range(start, len(symbols)):
        if is_nonterminal(symbols[i]):
            return i
    return None


def _apply_markers(ctx: GenerationContext, symbols: Sequence[str], start: int, stop: Optional[int]):
    for s in symbols[start:len(symbols) if stop is None else stop]:
        if is_marker(s):
            ctx = ctx.apply_marker(s)
    return ctx


@dataclass(frozen=True)
class SententialForm:
    """最左導出の途中形（累積 log2 確率と適用規則列を保持）"""
    symbols: Tuple[str, ...]
    log_prob: float = 0.0
    steps: Tuple[Step, ...] = ()
    ctx: GenerationContext = field(default_factory=GenerationContext)
    leftmost_nt: Optional[int] = None

    @classmethod
    def start(cls, symbols: Sequence[str], ctx: GenerationContext = None) -> 'SententialForm':
        """
        導出開始形を作成（最初の非終端記号より左のマーカーは適用済みにする）

        Args:
            symbols: 記号列
            ctx: 初期生成文脈
        """
        symbols = tuple(symbols)
        leftmost = _leftmost(symbols)
        ctx = _apply_markers(ctx or GenerationContext(), symbols, 0, leftmost)
        return cls(symbols, 0.0, (), ctx, leftmost)

    @property
    def probability(self) -> float:
        return 2.0 ** self.log_prob

    @property
    def is_complete(self) -> bool:
        return self.leftmost_nt is None

    def text(self) -> str:
        return format_sentential_form(self.symbols)


def expand_leftmost(form: SententialForm, production: Expansion) -> SententialForm:
    """
    最左非終端記号を生成規則で置き換え

    Args:
        form: 文形式
        production: 展開候補（見出し・本体・確率・キー）

    Returns:
        新しい文形式
    """
    i = form.leftmost_nt
    if i is None:
        raise HeadMismatch("form has no nonterminal to expand")
    if str(form.symbols[i]) != str(production.head):
        raise HeadMismatch(f"leftmost nonterminal is {form.symbols[i]}, production head is {production.head}")
    if not production.probability > 0:
        raise ZeroProbability(f"production for {production.head} has probability {production.probability}")
    body = tuple(production.body)
    symbols = form.symbols[:i] + body + form.symbols[i + 1:]
    leftmost = _leftmost(symbols, i)
    ctx = _apply_markers(form.ctx, symbols, i, leftmost)
    return SententialForm(symbols, form.log_prob + math.log2(production.probability),
                          form.steps + (Step.from_expansion(production),), ctx, leftmost)


def sentence_text(form) -> str:
    """終端記号を空白区切りで連結（マーカーは除く）"""
    symbols = form.symbols if isinstance(form, SententialForm) else form
    parts = []
    for s in symbols:
        if is_marker(s):
            continue
        parts.append(f"<{s}>" if is_nonterminal(s) else s)
    return ' '.join(parts)


# ---------------------------------------------------------------------------
# 導出木
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DerivationTree:
    """
    導出木のノード

    children が None なら葉（終端記号・マーカー・枝刈りされた非終端記号）、
    タプルなら内部ノード（空タプルは空規則）。
    """
    label: str
    children: Optional[Tuple['DerivationTree', ...]] = None
    probability: Optional[float] = None
    key: Optional[str] = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    def height(self) -> int:
        """内部ノードの最大深さ + 1（葉だけなら 0）"""
        if self.children is None:
            return 0
        return 1 + max((c.height() for c in self.children), default=0)

    def nodes(self) -> Iterator['DerivationTree']:
        """前順でノードを列挙"""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if node.children:
                stack.extend(reversed(node.children))

    def size(self) -> int:
        return sum(1 for _ in self.nodes())

    def __str__(self):
        return tree_to_text(self)


def leaf(label: str) -> DerivationTree:
    return DerivationTree(label)


def node(label: str, *children: DerivationTree) -> DerivationTree:
    return DerivationTree(Nonterminal(label) if not is_nonterminal(label) else label, tuple(children))


def build_tree(steps: Sequence[Step], start: Sequence[str] = None) -> DerivationTree:
    """
    最左導出の規則列から導出木を構築

    Args:
        steps: 適用規則列
        start: 開始文形式（省略時は最初の規則の見出しを根とする）

    Returns:
        導出木
    """
    steps = list(steps)
    position = 0

    def expand(label) -> DerivationTree:
        nonlocal position
        if position >= len(steps):
            raise IncompleteDerivation(f"no production applied to {label}")
        step = steps[position]
        if str(step.head) != str(label):
            raise IncompleteDerivation(f"expected expansion of {label}, found {step.head}")
        position += 1
        children = tuple(expand(s) if is_nonterminal(s) else DerivationTree(s) for s in step.body)
        return DerivationTree(Nonterminal(str(label)), children, step.probability, step.key)

    if start is None:
        if not steps:
            raise IncompleteDerivation("empty derivation")
        tree = expand(steps[0].head)
    else:
        children = tuple(expand(s) if is_nonterminal(s) else DerivationTree(s) for s in start)
        tree = DerivationTree(START_FORM, children)
    if position != len(steps):
        raise IncompleteDerivation(f"{len(steps) - position} unused steps after the tree was complete")
    return tree


def tree_steps(tree: DerivationTree) -> List[Step]:
    """導出木から最左導出の規則列を復元（build_tree の逆）"""
    steps = []
    for n in tree.nodes():
        if n.children is None or n.label == START_FORM:
            continue
        steps.append(Step(str(n.label), tuple(c.label for c in n.children),
                          n.probability if n.probability is not None else 1.0, n.key))
    return steps


def prune_one_level(tree: DerivationTree) -> DerivationTree:
    """
    最深の内部ノードを非終端記号の葉に置き換える

    Args:
        tree: 導出木

    Returns:
        高さが 1 減った木
    """
    if tree.children is None:
        raise AlreadyLeaf(f"tree {tree_to_text(tree)} is a single leaf")
    target = tree.height() - 1

    def prune(n: DerivationTree, depth: int) -> DerivationTree:
        if n.children is None:
            return n
        if depth == target:
            return DerivationTree(n.label)
        return DerivationTree(n.label, tuple(prune(c, depth + 1) for c in n.children), n.probability, n.key)

    return prune(tree, 0)


def frontier(tree: DerivationTree) -> SententialForm:
    """葉のラベルを左から並べた文形式"""
    return SententialForm.start(tuple(n.label for n in tree.nodes() if n.children is None))


# ---------------------------------------------------------------------------
# テキスト表現 [Node <:S:> [Leaf a]]
# ---------------------------------------------------------------------------

_NEEDS_QUOTE = re.compile(r'[\s\[\]"]|^<:|^!|^$')
_TREE_TOKEN_RE = re.compile(r'\s*(\[Node|\[Leaf|\]|<:[^\s\[\]]*?:>|"(?:[^"\\]|\\.)*"|[^\s\[\]]+)')


def _leaf_token(label: str) -> str:
    if is_nonterminal(label):
        return f"<:{label}:>"
    if is_marker(label):
        return str(label)
    if _NEEDS_QUOTE.search(label):
        return json.dumps(label, ensure_ascii=False)
    return label


def tree_to_text(tree: DerivationTree) -> str:
    """正準テキスト表現"""
    if tree.children is None:
        return f"[Leaf {_leaf_token(tree.label)}]"
    parts = [f"[Node <:{tree.label}:>"]
    parts.extend(tree_to_text(c) for c in tree.children)
    return ' '.join(parts) + ']'


def tree_from_text(text: str) -> DerivationTree:
    """正準テキスト表現から木を復元（確率とキーは持たない）"""
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TREE_TOKEN_RE.match(text, pos)
        if m is None:
            raise TreeParseError(f"bad tree text at offset {pos}")
        tokens.append(m.group(1))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1

    def parse(i: int) -> Tuple[DerivationTree, int]:
        if i >= len(tokens):
            raise TreeParseError("unexpected end of tree text")
        kind = tokens[i]
        if kind == '[Leaf':
            if i + 2 >= len(tokens) or tokens[i + 2] != ']':
                raise TreeParseError("leaf must hold exactly one label")
            return DerivationTree(_parse_label(tokens[i + 1])), i + 3
        if kind == '[Node':
            if i + 1 >= len(tokens) or not tokens[i + 1].startswith('<:'):
                raise TreeParseError("node label must be a nonterminal")
            label = Nonterminal(tokens[i + 1][2:-2])
            children = []
            i += 2
            while i < len(tokens) and tokens[i] != ']':
                child, i = parse(i)
                children.append(child)
            if i >= len(tokens):
                raise TreeParseError("unterminated node")
            return DerivationTree(label, tuple(children)), i + 1
        raise TreeParseError(f"unexpected token {kind}")

    try:
        tree, end = parse(0)
    except IndexError:
        raise TreeParseError("truncated tree text") from None
    if end != len(tokens):
        raise TreeParseError("trailing tokens after tree")
    return tree


def _parse_label(token: str) -> str:
    if token.startswith('<:') and token.endswith(':>'):
        return Nonterminal(token[2:-2])
    if token.startswith('!'):
        return Marker(token)
    if token.startswith('"'):
        return json.loads(token)
    return token


def strip_probabilities(tree: DerivationTree) -> DerivationTree:
    """確率とキーを落とした木（構造比較用）"""
    if tree.children is None:
        return DerivationTree(tree.label)
    return DerivationTree(tree.label, tuple(strip_probabilities(c) for c in tree.children))
