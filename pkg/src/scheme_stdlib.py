"""
Scheme 標準ライブラリモジュール
マニフェストに列挙した R5RS 手続きの実装とアリティ情報を提供
"""
import math
import os
from dataclasses import dataclass
from functools import reduce
from typing import Callable, Dict, Optional

from scheme_reader import (
    NIL, UNSPECIFIED, Char, Pair, SchemeString, Symbol, intern, is_number,
    list_to_python, make_list, values_equal, write_value, parse_datum, ParseError,
)

DEFAULT_MANIFEST_PATH = os.path.join(os.path.dirname(__file__), '..', 'data', 'stdlib_manifest.txt')

# 機械側で継続を扱う制御手続き
CONTROL_PROCEDURES = frozenset(['apply', 'map', 'for-each', 'force', 'call-with-current-continuation'])


class SchemeError(Exception):
    """評価中の Scheme エラー（ホストには致命的でない）"""


class UnknownProcedure(KeyError):
    """マニフェストにない手続き"""


@dataclass(frozen=True)
class Arity:
    """アリティ記述子（max_args=None は可変長）"""
    min_args: int
    max_args: Optional[int]

    @property
    def variadic(self) -> bool:
        return self.max_args is None

    def accepts(self, n: int) -> bool:
        return n >= self.min_args and (self.max_args is None or n <= self.max_args)

    def generation_count(self) -> int:
        """文法が生成する呼び出しの引数個数"""
        if self.max_args is None:
            return max(self.min_args, 2)
        return self.min_args

    def __str__(self):
        if self.max_args is None:
            return f"at-least {self.min_args}"
        if self.max_args == self.min_args:
            return f"fixed {self.min_args}"
        return f"{self.min_args}..{self.max_args}"


def load_manifest(path: str = None) -> Dict[str, Arity]:
    """
    標準ライブラリマニフェストを読み込み

    Args:
        path: マニフェストファイルパス（省略時は同梱ファイル）

    Returns:
        手続き名 → アリティ（ファイル順）
    """
    path = path or DEFAULT_MANIFEST_PATH
    manifest: Dict[str, Arity] = {}
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'name min max|*'")
            name, lo, hi = parts
            manifest[name] = Arity(int(lo), None if hi == '*' else int(hi))
    return manifest


# --- 型チェック補助 ---

def _num(x, who):
    if not is_number(x):
        raise SchemeError(f"{who}: not a number: {write_value(x)}")
    return x


def _int(x, who):
    if isinstance(x, float) and x.is_integer():
        return x
    if not isinstance(x, int) or isinstance(x, bool):
        raise SchemeError(f"{who}: not an integer: {write_value(x)}")
    return x


def _exact_int(x, who):
    if not isinstance(x, int) or isinstance(x, bool):
        raise SchemeError(f"{who}: not an exact integer: {write_value(x)}")
    return x


def _pair(x, who):
    if not isinstance(x, Pair):
        raise SchemeError(f"{who}: not a pair: {write_value(x)}")
    return x


def _list(x, who):
    items = list_to_python(x)
    if items is None:
        raise SchemeError(f"{who}: not a proper list: {write_value(x)}")
    return items


def _str(x, who):
    if not isinstance(x, SchemeString):
        raise SchemeError(f"{who}: not a string: {write_value(x)}")
    return x


def _char(x, who):
    if not isinstance(x, Char):
        raise SchemeError(f"{who}: not a character: {write_value(x)}")
    return x


def _index(k, size, who):
    k = _exact_int(k, who)
    if not 0 <= k < size:
        raise SchemeError(f"{who}: index out of range: {k}")
    return k


def _contagion(result, args):
    """不正確数が混ざれば結果も不正確数"""
    if any(isinstance(a, float) for a in args):
        return float(result)
    return result


def eqv(a, b) -> bool:
    if is_number(a) and is_number(b):
        return isinstance(a, float) == isinstance(b, float) and a == b
    if isinstance(a, Char) and isinstance(b, Char):
        return a.ch == b.ch
    if isinstance(a, SchemeString) and isinstance(b, SchemeString):
        return a is b
    return a is b


# --- 数値 ---

def _compare(op, who):
    def fn(*args):
        for a in args:
            _num(a, who)
        return all(op(args[i], args[i + 1]) for i in range(len(args) - 1))
    return fn


def _add(*args):
    return sum((_num(a, '+') for a in args), 0)


def _mul(*args):
    return reduce(lambda x, y: x * y, (_num(a, '*') for a in args), 1)


def _sub(first, *rest):
    _num(first, '-')
    if not rest:
        return -first
    return reduce(lambda x, y: x - _num(y, '-'), rest, first)


def _div(first, *rest):
    _num(first, '/')
    if not rest:
        rest, first = (first,), 1
    result = first
    for d in rest:
        _num(d, '/')
        if d == 0:
            raise SchemeError("/: division by zero")
        if isinstance(result, int) and isinstance(d, int) and result % d == 0:
            result = result // d
        else:
            # 有理数は持たないので割り切れない場合は不正確数
            result = result / d
    return result


def _int_div(kind):
    who = kind

    def fn(a, b):
        _int(a, who)
        _int(b, who)
        if b == 0:
            raise SchemeError(f"{who}: division by zero")
        if kind == 'quotient':
            q = abs(a) // abs(b)
            r = q if (a >= 0) == (b >= 0) else -q
        elif kind == 'remainder':
            r = math.fmod(a, b) if isinstance(a, float) or isinstance(b, float) else abs(a) % abs(b) * (1 if a >= 0 else -1)
        else:
            r = a % b
        return _contagion(r, (a, b))
    return fn


def _gcd(*args):
    return reduce(math.gcd, (_exact_int(a, 'gcd') for a in args), 0)


def _lcm(*args):
    def lcm2(a, b):
        return abs(a * b) // math.gcd(a, b) if a and b else 0
    return reduce(lcm2, (_exact_int(a, 'lcm') for a in args), 1)


def _rounding(fn, who):
    def wrapped(x):
        _num(x, who)
        if isinstance(x, int):
            return x
        return float(fn(x))
    return wrapped


def _round_even(x):
    return round(x)


def _real_fn(fn, who):
    def wrapped(*args):
        for a in args:
            _num(a, who)
        return fn(*[float(a) for a in args])
    return wrapped


def _log(x):
    _num(x, 'log')
    if x <= 0:
        raise SchemeError("log: non-positive argument")
    return math.log(x)


def _sqrt(x):
    _num(x, 'sqrt')
    if x < 0:
        raise SchemeError("sqrt: negative argument")
    if isinstance(x, int):
        r = math.isqrt(x)
        if r * r == x:
            return r
    return math.sqrt(x)


def _expt(limits):
    def fn(base, power):
        _num(base, 'expt')
        _num(power, 'expt')
        if isinstance(base, int) and isinstance(power, int):
            if power < 0:
                if base == 0:
                    raise SchemeError("expt: division by zero")
                return 1.0 / float(base) ** -power if abs(base) != 1 else base ** power
            if abs(base) > 1 and (abs(base).bit_length() - 1) * power > limits.max_integer_bits:
                raise SchemeError("expt: integer overflow")
            return base ** power
        if base < 0 and not float(power).is_integer():
            raise SchemeError("expt: complex result")
        return float(base) ** float(power)
    return fn


def _exact(x):
    _num(x, 'inexact->exact')
    if isinstance(x, float):
        if not x.is_integer():
            raise SchemeError("inexact->exact: no exact representation")
        return int(x)
    return x


def _number_to_string(x, radix=10):
    _num(x, 'number->string')
    if radix != 10:
        _exact_int(x, 'number->string')
        digits = '0123456789abcdefghijklmnopqrstuvwxyz'
        n, out = abs(x), ''
        while True:
            n, d = divmod(n, radix)
            out = digits[d] + out
            if n == 0:
                break
        return SchemeString(('-' if x < 0 else '') + out)
    return SchemeString(write_value(x))


def _string_to_number(s, radix=10):
    _str(s, 'string->number')
    try:
        if radix != 10:
            return int(s.chars, radix)
        value = parse_datum(s.chars)
    except (ValueError, ParseError):
        return False
    return value if is_number(value) else False


# --- リスト ---

def _cxr(path, who):
    def fn(x):
        for step in reversed(path):
            x = _pair(x, who)
            x = x.car if step == 'a' else x.cdr
        return x
    return fn


def _set_car(p, v):
    _pair(p, 'set-car!').car = v
    return UNSPECIFIED


def _set_cdr(p, v):
    _pair(p, 'set-cdr!').cdr = v
    return UNSPECIFIED


def _length(x):
    return len(_list(x, 'length'))


def _append(*args):
    if not args:
        return NIL
    result = args[-1]
    for lst in reversed(args[:-1]):
        result = make_list(_list(lst, 'append'), result)
    return result


def _list_tail(x, k):
    _exact_int(k, 'list-tail')
    for _ in range(k):
        x = _pair(x, 'list-tail').cdr
    return x


def _list_ref(x, k):
    return _pair(_list_tail(x, k), 'list-ref').car


def _mem(test, who):
    def fn(obj, lst):
        while isinstance(lst, Pair):
            if test(obj, lst.car):
                return lst
            lst = lst.cdr
        return False
    return fn


def _ass(test, who):
    def fn(obj, alist):
        while isinstance(alist, Pair):
            entry = _pair(alist.car, who)
            if test(obj, entry.car):
                return entry
            alist = alist.cdr
        return False
    return fn


# --- 文字・文字列 ---

def _char_compare(op, who):
    def fn(a, b):
        return op(_char(a, who).ch, _char(b, who).ch)
    return fn


def _symbol_to_string(x):
    if not isinstance(x, Symbol):
        raise SchemeError(f"symbol->string: not a symbol: {write_value(x)}")
    return SchemeString(str(x))


def _integer_to_char(n):
    _exact_int(n, 'integer->char')
    if not 0 <= n <= 0x10FFFF:
        raise SchemeError("integer->char: out of range")
    return Char(chr(n))


def _make_string(limits):
    def fn(k, fill=Char(' ')):
        _exact_int(k, 'make-string')
        if not 0 <= k <= limits.max_collection_size:
            raise SchemeError("make-string: size out of range")
        return SchemeString(_char(fill, 'make-string').ch * k)
    return fn


def _string_ref(s, k):
    _str(s, 'string-ref')
    return Char(s.chars[_index(k, len(s.chars), 'string-ref')])


def _string_set(s, k, c):
    _str(s, 'string-set!')
    k = _index(k, len(s.chars), 'string-set!')
    s.chars = s.chars[:k] + _char(c, 'string-set!').ch + s.chars[k + 1:]
    return UNSPECIFIED


def _substring(s, start, end):
    _str(s, 'substring')
    _exact_int(start, 'substring')
    _exact_int(end, 'substring')
    if not 0 <= start <= end <= len(s.chars):
        raise SchemeError("substring: index out of range")
    return SchemeString(s.chars[start:end])


def _string_append(limits):
    def fn(*args):
        text = ''.join(_str(a, 'string-append').chars for a in args)
        if len(text) > limits.max_collection_size:
            raise SchemeError("string-append: result too large")
        return SchemeString(text)
    return fn


def _list_to_string(x):
    return SchemeString(''.join(_char(c, 'list->string').ch for c in _list(x, 'list->string')))


# --- ベクタ ---

def _make_vector(limits):
    def fn(k, fill=UNSPECIFIED):
        _exact_int(k, 'make-vector')
        if not 0 <= k <= limits.max_collection_size:
            raise SchemeError("make-vector: size out of range")
        return [fill] * k
    return fn


def _vec(x, who):
    if not isinstance(x, list):
        raise SchemeError(f"{who}: not a vector: {write_value(x)}")
    return x


def _vector_set(v, k, obj):
    _vec(v, 'vector-set!')
    v[_index(k, len(v), 'vector-set!')] = obj
    return UNSPECIFIED


def build_builtin_table(limits) -> Dict[str, Callable]:
    """
    手続き名 → Python 実装の対応表を構築

    Args:
        limits: max_integer_bits / max_collection_size を持つ設定

    Returns:
        実装表（制御手続きは含まない）
    """
    table = {
        'eqv?': eqv,
        'eq?': eqv,
        'equal?': values_equal,
        'number?': is_number,
        'integer?': lambda x: isinstance(x, int) and not isinstance(x, bool) or isinstance(x, float) and x.is_integer(),
        'real?': is_number,
        'exact?': lambda x: isinstance(_num(x, 'exact?'), int),
        'inexact?': lambda x: isinstance(_num(x, 'inexact?'), float),
        'zero?': lambda x: _num(x, 'zero?') == 0,
        'positive?': lambda x: _num(x, 'positive?') > 0,
        'negative?': lambda x: _num(x, 'negative?') < 0,
        'odd?': lambda x: _int(x, 'odd?') % 2 == 1,
        'even?': lambda x: _int(x, 'even?') % 2 == 0,
        '=': _compare(lambda a, b: a == b, '='),
        '<': _compare(lambda a, b: a < b, '<'),
        '>': _compare(lambda a, b: a > b, '>'),
        '<=': _compare(lambda a, b: a <= b, '<='),
        '>=': _compare(lambda a, b: a >= b, '>='),
        'max': lambda *a: _contagion(max(_num(x, 'max') for x in a), a),
        'min': lambda *a: _contagion(min(_num(x, 'min') for x in a), a),
        '+': _add,
        '*': _mul,
        '-': _sub,
        '/': _div,
        'abs': lambda x: abs(_num(x, 'abs')),
        'quotient': _int_div('quotient'),
        'remainder': _int_div('remainder'),
        'modulo': _int_div('modulo'),
        'gcd': _gcd,
        'lcm': _lcm,
        'floor': _rounding(math.floor, 'floor'),
        'ceiling': _rounding(math.ceil, 'ceiling'),
        'round': _rounding(_round_even, 'round'),
        'truncate': _rounding(math.trunc, 'truncate'),
        'exp': _real_fn(math.exp, 'exp'),
        'log': _log,
        'sin': _real_fn(math.sin, 'sin'),
        'cos': _real_fn(math.cos, 'cos'),
        'tan': _real_fn(math.tan, 'tan'),
        'atan': _real_fn(lambda y, x=None: math.atan(y) if x is None else math.atan2(y, x), 'atan'),
        'sqrt': _sqrt,
        'expt': _expt(limits),
        'exact->inexact': lambda x: float(_num(x, 'exact->inexact')),
        'inexact->exact': _exact,
        'number->string': _number_to_string,
        'string->number': _string_to_number,
        'not': lambda x: x is False,
        'boolean?': lambda x: isinstance(x, bool),
        'pair?': lambda x: isinstance(x, Pair),
        'cons': Pair,
        'car': lambda x: _pair(x, 'car').car,
        'cdr': lambda x: _pair(x, 'cdr').cdr,
        'set-car!': _set_car,
        'set-cdr!': _set_cdr,
        'caar': _cxr('aa', 'caar'),
        'cadr': _cxr('ad', 'cadr'),
        'cdar': _cxr('da', 'cdar'),
        'cddr': _cxr('dd', 'cddr'),
        'caddr': _cxr('add', 'caddr'),
        'null?': lambda x: x is NIL,
        'list?': lambda x: list_to_python(x) is not None,
        'list': lambda *a: make_list(a),
        'length': _length,
        'append': _append,
        'reverse': lambda x: make_list(list(reversed(_list(x, 'reverse')))),
        'list-tail': _list_tail,
        'list-ref': _list_ref,
        'memq': _mem(eqv, 'memq'),
        'memv': _mem(eqv, 'memv'),
        'member': _mem(values_equal, 'member'),
        'assq': _ass(eqv, 'assq'),
        'assv': _ass(eqv, 'assv'),
        'assoc': _ass(values_equal, 'assoc'),
        'symbol?': lambda x: isinstance(x, Symbol),
        'symbol->string': _symbol_to_string,
        'string->symbol': lambda s: intern(_str(s, 'string->symbol').chars),
        'char?': lambda x: isinstance(x, Char),
        'char=?': _char_compare(lambda a, b: a == b, 'char=?'),
        'char<?': _char_compare(lambda a, b: a < b, 'char<?'),
        'char>?': _char_compare(lambda a, b: a > b, 'char>?'),
        'char<=?': _char_compare(lambda a, b: a <= b, 'char<=?'),
        'char>=?': _char_compare(lambda a, b: a >= b, 'char>=?'),
        'char-alphabetic?': lambda c: _char(c, 'char-alphabetic?').ch.isalpha(),
        'char-numeric?': lambda c: _char(c, 'char-numeric?').ch.isdigit(),
        'char-whitespace?': lambda c: _char(c, 'char-whitespace?').ch.isspace(),
        'char-upcase': lambda c: Char(_char(c, 'char-upcase').ch.upper()),
        'char-downcase': lambda c: Char(_char(c, 'char-downcase').ch.lower()),
        'char->integer': lambda c: ord(_char(c, 'char->integer').ch),
        'integer->char': _integer_to_char,
        'string?': lambda x: isinstance(x, SchemeString),
        'make-string': _make_string(limits),
        'string': lambda *cs: SchemeString(''.join(_char(c, 'string').ch for c in cs)),
        'string-length': lambda s: len(_str(s, 'string-length').chars),
        'string-ref': _string_ref,
        'string-set!': _string_set,
        'string=?': lambda a, b: _str(a, 'string=?').chars == _str(b, 'string=?').chars,
        'string<?': lambda a, b: _str(a, 'string<?').chars < _str(b, 'string<?').chars,
        'substring': _substring,
        'string-append': _string_append(limits),
        'string->list': lambda s: make_list([Char(c) for c in _str(s, 'string->list').chars]),
        'list->string': _list_to_string,
        'string-copy': lambda s: SchemeString(_str(s, 'string-copy').chars),
        'vector?': lambda x: isinstance(x, list),
        'make-vector': _make_vector(limits),
        'vector': lambda *a: list(a),
        'vector-length': lambda v: len(_vec(v, 'vector-length')),
        'vector-ref': lambda v, k: _vec(v, 'vector-ref')[_index(k, len(v), 'vector-ref')],
        'vector-set!': _vector_set,
        'vector->list': lambda v: make_list(_vec(v, 'vector->list')),
        'list->vector': lambda x: _list(x, 'list->vector'),
        # procedure? は機械側で登録する
    }
    return table


_DEFAULT_MANIFEST: Optional[Dict[str, Arity]] = None


def default_manifest() -> Dict[str, Arity]:
    global _DEFAULT_MANIFEST
    if _DEFAULT_MANIFEST is None:
        _DEFAULT_MANIFEST = load_manifest()
    return _DEFAULT_MANIFEST


def stdlib_arity(name: str, manifest: Dict[str, Arity] = None) -> Arity:
    """
    標準手続きのアリティを返す

    Args:
        name: 手続き名
        manifest: マニフェスト（省略時は同梱ファイル）

    Returns:
        アリティ記述子
    """
    manifest = manifest if manifest is not None else default_manifest()
    try:
        return manifest[str(name)]
    except KeyError:
        raise UnknownProcedure(str(name)) from None
