"""
Scheme リーダーモジュール
R5RS サブセットの S 式データ型・構文解析・外部表現出力を提供
"""
import re
from dataclasses import dataclass
from typing import Any, List, Optional, Tuple


class ParseError(ValueError):
    """構文解析エラーの基底クラス"""


class SchemeSyntaxError(ParseError):
    """括弧の不一致・不正なトークン"""


class UnsupportedForm(ParseError):
    """対象外の構文（準クォート・マクロ定義・入出力手続き）"""


class Symbol(str):
    """Scheme シンボル（intern 済み文字列）"""
    __slots__ = ()
    _table: dict = {}

    def __new__(cls, name: str):
        sym = cls._table.get(name)
        if sym is None:
            sym = str.__new__(cls, name)
            cls._table[name] = sym
        return sym

    def __repr__(self):
        return self


def intern(name: str) -> Symbol:
    return Symbol(name)


class EmptyList:
    """空リスト"""
    __slots__ = ()

    def __iter__(self):
        return iter(())

    def __repr__(self):
        return '()'

    def __reduce__(self):
        return 'NIL'


NIL = EmptyList()


class Unspecified:
    """未規定値"""
    __slots__ = ()

    def __repr__(self):
        return '#<unspecified>'

    def __reduce__(self):
        return 'UNSPECIFIED'


UNSPECIFIED = Unspecified()


class Pair:
    """コンスセル"""
    __slots__ = ('car', 'cdr')

    def __init__(self, car, cdr):
        self.car, self.cdr = car, cdr

    def __iter__(self):
        """car, cadr, caddr... を順に返す（不正リストは ImproperList）"""
        j = self
        while isinstance(j, Pair):
            yield j.car
            j = j.cdr
        if j is not NIL:
            raise ImproperList(j)

    # 構造的等価（equal? と同じ）。eq?/eqv? は同一性で比較する
    def __eq__(self, other):
        return isinstance(other, Pair) and values_equal(self, other)

    __hash__ = None

    def __repr__(self):
        return write_value(self)


class ImproperList(Exception):
    pass


class SchemeString:
    """可変文字列"""
    __slots__ = ('chars',)

    def __init__(self, chars: str):
        self.chars = chars

    def __eq__(self, other):
        return isinstance(other, SchemeString) and self.chars == other.chars

    __hash__ = None

    def __repr__(self):
        return write_value(self)


@dataclass(frozen=True)
class Char:
    """文字"""
    ch: str

    def __repr__(self):
        return write_value(self)


# 準クォート・マクロ・入出力関連の名前（構文解析時に拒否）
UNSUPPORTED_KEYWORDS = frozenset([
    'quasiquote', 'unquote', 'unquote-splicing',
    'define-syntax', 'let-syntax', 'letrec-syntax', 'syntax-rules',
])
EXCLUDED_PROCEDURES = frozenset([
    'read', 'read-char', 'peek-char', 'char-ready?', 'write', 'display',
    'newline', 'write-char', 'open-input-file', 'open-output-file',
    'close-input-port', 'close-output-port', 'call-with-input-file',
    'call-with-output-file', 'with-input-from-file', 'with-output-to-file',
    'current-input-port', 'current-output-port', 'input-port?', 'output-port?',
    'eof-object?', 'load', 'transcript-on', 'transcript-off', 'eval',
    'scheme-report-environment', 'null-environment', 'interaction-environment',
])

QUOTE = intern('quote')

_TOKEN_RE = re.compile(r'''
    \s+ | ;[^\n]* |
    (?P<tok>
        \#\( | [()'`] | ,@ | , |
        "(?:[^"\\]|\\.)*" |
        \#\\(?:[A-Za-z]+|.) |
        [^\s()'`",;]+
    )
''', re.VERBOSE | re.DOTALL)

_INT_RE = re.compile(r'^[+-]?\d+$')
_REAL_RE = re.compile(r'^[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?$')

_CHAR_NAMES = {'space': ' ', 'newline': '\n', 'tab': '\t'}


@dataclass
class ProgramAst:
    """構文解析済みプログラム（トップレベル S 式の並び）"""
    forms: Tuple[Any, ...]

    def __eq__(self, other):
        if not isinstance(other, ProgramAst) or len(self.forms) != len(other.forms):
            return False
        return all(values_equal(a, b) for a, b in zip(self.forms, other.forms))

    __hash__ = None


def tokenize(source: str) -> List[str]:
    """ソース文字列をトークン列に分割"""
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            raise SchemeSyntaxError(f"bad token at offset {pos}: {source[pos:pos + 10]!r}")
        tok = m.group('tok')
        if tok is not None:
            tokens.append(tok)
        pos = m.end()
    return tokens


def _parse_atom(token: str):
    if token == '#t' or token == '#true':
        return True
    if token == '#f' or token == '#false':
        return False
    if token.startswith('"'):
        body = token[1:-1]
        return SchemeString(re.sub(r'\\(.)', lambda m: {'n': '\n', 't': '\t'}.get(m.group(1), m.group(1)), body))
    if token.startswith('#\\'):
        name = token[2:]
        if len(name) == 1:
            return Char(name)
        if name.lower() in _CHAR_NAMES:
            return Char(_CHAR_NAMES[name.lower()])
        raise SchemeSyntaxError(f"unknown character name: {token}")
    if _INT_RE.match(token):
        return int(token)
    if _REAL_RE.match(token):
        return float(token)
    if token in ('+inf.0', '-inf.0', '+nan.0'):
        return float(token[:-2])
    if token.startswith('#'):
        raise SchemeSyntaxError(f"bad token: {token}")
    return intern(token.lower() if token.isascii() else token)


def _read(tokens: List[str], pos: int) -> Tuple[Any, int]:
    if pos >= len(tokens):
        raise SchemeSyntaxError("unexpected end of input")
    token = tokens[pos]
    if token == '(' or token == '#(':
        items = []
        tail = NIL
        pos += 1
        while True:
            if pos >= len(tokens):
                raise SchemeSyntaxError("unbalanced parentheses: missing )")
            if tokens[pos] == ')':
                pos += 1
                break
            if tokens[pos] == '.' and token == '(':
                if not items:
                    raise SchemeSyntaxError("bad dotted list")
                tail, pos = _read(tokens, pos + 1)
                if pos >= len(tokens) or tokens[pos] != ')':
                    raise SchemeSyntaxError("bad dotted list")
                pos += 1
                break
            item, pos = _read(tokens, pos)
            items.append(item)
        if token == '#(':
            return list(items), pos
        return make_list(items, tail), pos
    if token == ')':
        raise SchemeSyntaxError("unbalanced parentheses: unexpected )")
    if token == "'":
        datum, pos = _read(tokens, pos + 1)
        return Pair(QUOTE, Pair(datum, NIL)), pos
    if token in ('`', ',', ',@'):
        raise UnsupportedForm("quasi-quotation is not supported")
    return _parse_atom(token), pos + 1


def _check_supported(datum, quoted: bool = False) -> None:
    """準クォート・マクロ定義・入出力手続き呼び出しを拒否"""
    stack = [(datum, quoted)]
    while stack:
        x, q = stack.pop()
        if not isinstance(x, Pair):
            continue
        head = x.car
        if not q and isinstance(head, Symbol):
            if head in UNSUPPORTED_KEYWORDS:
                raise UnsupportedForm(f"unsupported form: {head}")
            if head in EXCLUDED_PROCEDURES:
                raise UnsupportedForm(f"input/output procedure is not supported: {head}")
            if head is QUOTE:
                continue
        j = x
        while isinstance(j, Pair):
            stack.append((j.car, q))
            j = j.cdr


def parse(source: str) -> ProgramAst:
    """
    ソース文字列を ProgramAst に変換

    Args:
        source: S 式の並び

    Returns:
        構文解析済みプログラム
    """
    tokens = tokenize(source)
    forms = []
    pos = 0
    while pos < len(tokens):
        datum, pos = _read(tokens, pos)
        _check_supported(datum)
        forms.append(datum)
    return ProgramAst(tuple(forms))


def parse_datum(source: str):
    """単一の S 式データを読み込む（例の入出力値用）"""
    ast = parse(source)
    if len(ast.forms) != 1:
        raise SchemeSyntaxError(f"expected exactly one datum: {source!r}")
    return ast.forms[0]


def make_list(items, tail=NIL):
    result = tail
    for item in reversed(items):
        result = Pair(item, result)
    return result


def list_to_python(x) -> Optional[list]:
    """真リストを Python リストへ（不正リストは None）"""
    items = []
    while isinstance(x, Pair):
        items.append(x.car)
        x = x.cdr
    return items if x is NIL else None


def copy_datum(x):
    """可変なデータ（ペア・ベクタ・文字列）を複製（記号・数・文字は共有）"""
    if isinstance(x, Pair):
        items = []
        while isinstance(x, Pair):
            items.append(copy_datum(x.car))
            x = x.cdr
        return make_list(items, copy_datum(x))
    if isinstance(x, list):
        return [copy_datum(item) for item in x]
    if isinstance(x, SchemeString):
        return SchemeString(x.chars)
    return x


def is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def values_equal(a, b) -> bool:
    """equal? 相当の構造的等価判定（反復実装）"""
    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        if x is y:
            continue
        if isinstance(x, Pair):
            if not isinstance(y, Pair):
                return False
            stack.append((x.cdr, y.cdr))
            stack.append((x.car, y.car))
        elif isinstance(x, list):
            if not isinstance(y, list) or len(x) != len(y):
                return False
            stack.extend(zip(x, y))
        elif is_number(x):
            if not is_number(y) or isinstance(x, float) != isinstance(y, float) or x != y:
                return False
        elif isinstance(x, bool) or isinstance(y, bool):
            return False
        elif isinstance(x, (SchemeString, Char)):
            if x != y:
                return False
        else:
            return False
    return True


def _format_number(x) -> str:
    if isinstance(x, float):
        if x != x:
            return '+nan.0'
        if x in (float('inf'), float('-inf')):
            return '+inf.0' if x > 0 else '-inf.0'
        return repr(x)
    return str(x)


def write_value(x) -> str:
    """値の外部表現（write 形式）"""
    if x is True:
        return '#t'
    if x is False:
        return '#f'
    if is_number(x):
        return _format_number(x)
    if isinstance(x, Symbol):
        return str(x)
    if x is NIL:
        return '()'
    if isinstance(x, SchemeString):
        return '"' + x.chars.replace('\\', '\\\\').replace('"', '\\"') + '"'
    if isinstance(x, Char):
        for name, ch in _CHAR_NAMES.items():
            if ch == x.ch:
                return '#\\' + name
        return '#\\' + x.ch
    if isinstance(x, list):
        return '#(' + ' '.join(write_value(e) for e in x) + ')'
    if isinstance(x, Pair):
        if x.car is QUOTE and isinstance(x.cdr, Pair) and x.cdr.cdr is NIL:
            return "'" + write_value(x.cdr.car)
        parts = []
        j = x
        while isinstance(j, Pair):
            parts.append(write_value(j.car))
            j = j.cdr
        if j is not NIL:
            parts.append('.')
            parts.append(write_value(j))
        return '(' + ' '.join(parts) + ')'
    return repr(x)


def print_ast(ast: ProgramAst) -> str:
    """ProgramAst をソース文字列に戻す"""
    return ' '.join(write_value(form) for form in ast.forms)
