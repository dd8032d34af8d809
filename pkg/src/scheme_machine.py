"""
Scheme 参照機械モジュール
サイクル計数付きの決定的評価器（明示的継続による CEK 方式、真の末尾呼び出し）

コストモデル: 式ノードの訪問 1 回につき 1 サイクル、手続き適用 1 回につき 1 サイクル
"""
import enum
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

from scheme_reader import (
    NIL, UNSPECIFIED, Pair, ProgramAst, Symbol, copy_datum, intern, list_to_python,
    make_list, write_value,
)
from scheme_stdlib import (
    CONTROL_PROCEDURES, Arity, SchemeError, build_builtin_table, default_manifest, eqv,
)

DEFAULT_MAX_DEPTH = 10_000
DEFAULT_MAX_INTEGER_BITS = 4096
DEFAULT_MAX_COLLECTION_SIZE = 100_000

QUOTE = intern('quote')
IF = intern('if')
DEFINE = intern('define')
SET = intern('set!')
LAMBDA = intern('lambda')
BEGIN = intern('begin')
LET = intern('let')
LET_STAR = intern('let*')
LETREC = intern('letrec')
LETREC_STAR = intern('letrec*')
COND = intern('cond')
CASE = intern('case')
AND = intern('and')
OR = intern('or')
DO = intern('do')
DELAY = intern('delay')
ELSE = intern('else')
ARROW = intern('=>')
# 読み込めない名前（空白を含む）なので利用者のシンボルと衝突しない
DO_LOOP = intern(' do-loop')

SPECIAL_FORMS = frozenset([QUOTE, IF, DEFINE, SET, LAMBDA, BEGIN, LET, LET_STAR, LETREC,
                           LETREC_STAR, COND, CASE, AND, OR, DO, DELAY])


class ExecStatus(enum.Enum):
    """評価結果ステータス"""
    VALUE = "Value"
    SCHEME_ERROR = "SchemeError"
    TIME_LIMIT = "TimeLimit"


@dataclass(frozen=True)
class ExecBudget:
    """評価予算（インタプリタサイクル数）"""
    max_cycles: int

    def __post_init__(self):
        if not isinstance(self.max_cycles, int) or self.max_cycles < 0:
            raise ValueError("max_cycles must be a nonnegative integer")


@dataclass
class ExecOutcome:
    """評価結果"""
    status: ExecStatus
    value: Any = None
    cycles_used: int = 0
    max_depth: int = 0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status is ExecStatus.VALUE


@dataclass(frozen=True)
class MachineLimits:
    max_depth: int = DEFAULT_MAX_DEPTH
    max_integer_bits: int = DEFAULT_MAX_INTEGER_BITS
    max_collection_size: int = DEFAULT_MAX_COLLECTION_SIZE


class Environment:
    """変数束縛のフレーム連鎖"""
    __slots__ = ('vars', 'outer', 'frozen')

    def __init__(self, variables: Dict[Symbol, Any], outer: 'Environment' = None, frozen: bool = False):
        self.vars, self.outer, self.frozen = variables, outer, frozen

    def lookup(self, name: Symbol):
        env = self
        while env is not None:
            value = env.vars.get(name, _MISSING)
            if value is not _MISSING:
                return value
            env = env.outer
        raise SchemeError(f"unbound variable: {name}")

    def define(self, name: Symbol, value) -> None:
        if self.frozen:
            raise SchemeError(f"cannot redefine builtin environment: {name}")
        self.vars[name] = value

    def assign(self, name: Symbol, value) -> None:
        env = self
        while env is not None:
            if name in env.vars:
                if env.frozen:
                    raise SchemeError(f"cannot assign builtin: {name}")
                env.vars[name] = value
                return
            env = env.outer
        raise SchemeError(f"set!: unbound variable: {name}")


_MISSING = object()


class Closure:
    """ラムダ式とその環境"""
    __slots__ = ('params', 'rest', 'body', 'env', 'name')

    def __init__(self, params: Tuple[Symbol, ...], rest: Optional[Symbol], body: Pair, env: Environment, name=None):
        self.params, self.rest, self.body, self.env, self.name = params, rest, body, env, name

    def bind(self, args: tuple) -> Environment:
        n = len(self.params)
        if len(args) < n or (self.rest is None and len(args) != n):
            raise SchemeError(f"wrong number of arguments to {self.name or 'lambda'}: "
                              f"expected {n}{'+' if self.rest else ''}, got {len(args)}")
        frame = dict(zip(self.params, args))
        if self.rest is not None:
            frame[self.rest] = make_list(args[n:])
        return Environment(frame, self.env)

    def __repr__(self):
        return f"#<procedure {self.name or 'lambda'}>"


class Builtin:
    """組み込み手続き"""
    __slots__ = ('name', 'arity', 'fn', 'control')

    def __init__(self, name: str, arity: Arity, fn, control: bool = False):
        self.name, self.arity, self.fn, self.control = name, arity, fn, control

    def __repr__(self):
        return f"#<builtin {self.name}>"


class Continuation:
    """第一級継続"""
    __slots__ = ('k',)

    def __init__(self, k):
        self.k = k

    def __repr__(self):
        return "#<continuation>"


class Promise:
    """delay による約束"""
    __slots__ = ('expr', 'env', 'done', 'value')

    def __init__(self, expr, env):
        self.expr, self.env, self.done, self.value = expr, env, False, None

    def __repr__(self):
        return "#<promise>"


class _OutOfCycles(Exception):
    pass


def _args(exp: Pair, who: str, lo: int, hi: Optional[int] = None) -> list:
    items = list_to_python(exp.cdr)
    if items is None or len(items) < lo or (hi is not None and len(items) > hi):
        raise SchemeError(f"bad syntax: {who}")
    return items


def _parse_formals(formals) -> Tuple[Tuple[Symbol, ...], Optional[Symbol]]:
    params = []
    while isinstance(formals, Pair):
        if not isinstance(formals.car, Symbol):
            raise SchemeError(f"bad formal parameter: {write_value(formals.car)}")
        params.append(formals.car)
        formals = formals.cdr
    if formals is NIL:
        return tuple(params), None
    if isinstance(formals, Symbol):
        return tuple(params), formals
    raise SchemeError("bad formal parameter list")


def _make_closure(formals, body, env, name=None) -> Closure:
    if not isinstance(body, Pair):
        raise SchemeError("lambda: empty body")
    params, rest = _parse_formals(formals)
    return Closure(params, rest, body, env, name)


def _bindings(spec, who):
    names, inits = [], []
    for binding in list_to_python(spec) or ([] if spec is NIL else _bad(who)):
        parts = list_to_python(binding)
        if not parts or not isinstance(parts[0], Symbol) or len(parts) > 2:
            _bad(who)
        names.append(parts[0])
        inits.append(parts[1] if len(parts) == 2 else make_list([QUOTE, UNSPECIFIED]))
    return names, inits


def _bad(who):
    raise SchemeError(f"bad syntax: {who}")


def _expand_let(exp: Pair):
    """let / 名前付き let を lambda 適用に展開"""
    items = _args(exp, 'let', 2)
    if isinstance(items[0], Symbol):
        if len(items) < 3:
            _bad('let')
        name, spec, body = items[0], items[1], items[2:]
        names, inits = _bindings(spec, 'let')
        proc = make_list([LAMBDA, make_list(names)] + body)
        loop = make_list([LETREC, make_list([make_list([name, proc])]), name])
        return make_list([loop] + inits)
    names, inits = _bindings(items[0], 'let')
    return make_list([make_list([LAMBDA, make_list(names)] + items[1:])] + inits)


def _expand_let_star(exp: Pair):
    items = _args(exp, 'let*', 2)
    spec = list_to_python(items[0])
    if spec is None:
        _bad('let*')
    if len(spec) <= 1:
        return make_list([LET, items[0]] + items[1:])
    inner = make_list([LET_STAR, make_list(spec[1:])] + items[1:])
    return make_list([LET, make_list([spec[0]]), inner])


def _expand_letrec(exp: Pair):
    items = _args(exp, 'letrec', 2)
    names, inits = _bindings(items[0], 'letrec')
    defines = [make_list([DEFINE, n, i]) for n, i in zip(names, inits)]
    body = make_list([LET, NIL] + items[1:])
    return make_list([make_list([LAMBDA, NIL] + defines + [body])])


def _expand_do(exp: Pair):
    items = _args(exp, 'do', 2)
    specs = list_to_python(items[0])
    test_clause = list_to_python(items[1])
    if specs is None or not test_clause:
        _bad('do')
    names, inits, steps = [], [], []
    for spec in specs:
        parts = list_to_python(spec)
        if not parts or not isinstance(parts[0], Symbol) or len(parts) > 3:
            _bad('do')
        names.append(parts[0])
        inits.append(parts[1] if len(parts) > 1 else make_list([QUOTE, UNSPECIFIED]))
        steps.append(parts[2] if len(parts) > 2 else parts[0])
    result = test_clause[1:] or [make_list([QUOTE, UNSPECIFIED])]
    loop_call = make_list([DO_LOOP] + steps)
    body = make_list([IF, test_clause[0], make_list([BEGIN] + result),
                      make_list([BEGIN] + items[2:] + [loop_call])])
    bindings = make_list([make_list([n, i]) for n, i in zip(names, inits)])
    return make_list([LET, DO_LOOP, bindings, body])


_EXPANDERS = {
    LET: _expand_let,
    LET_STAR: _expand_let_star,
    LETREC: _expand_letrec,
    LETREC_STAR: _expand_letrec,
    DO: _expand_do,
}


class SchemeMachine:
    """
    サイクル計数付き Scheme 評価器

    インスタンス間で可変状態を共有しないため、ワーカーごとに 1 つ持てばよい。
    """

    def __init__(self, max_depth: int = DEFAULT_MAX_DEPTH,
                 max_integer_bits: int = DEFAULT_MAX_INTEGER_BITS,
                 max_collection_size: int = DEFAULT_MAX_COLLECTION_SIZE,
                 manifest: Dict[str, Arity] = None):
        """
        初期化

        Args:
            max_depth: 最大評価深さ（継続フレーム数）
            max_integer_bits: 整数のビット長上限
            max_collection_size: 文字列・ベクタの長さ上限
            manifest: 標準ライブラリマニフェスト
        """
        self.limits = MachineLimits(max_depth, max_integer_bits, max_collection_size)
        self.manifest = manifest if manifest is not None else default_manifest()
        self.builtins = self._build_builtins()

    def _build_builtins(self) -> Environment:
        table = build_builtin_table(self.limits)
        table['procedure?'] = lambda x: isinstance(x, (Closure, Builtin, Continuation))
        frame = {}
        for name, arity in self.manifest.items():
            if name in CONTROL_PROCEDURES:
                frame[intern(name)] = Builtin(name, arity, None, control=True)
            elif name in table:
                frame[intern(name)] = Builtin(name, arity, table[name])
            else:
                raise ValueError(f"stdlib manifest lists an unimplemented procedure: {name}")
        callcc = frame.get(intern('call-with-current-continuation'))
        if callcc is not None:
            frame[intern('call/cc')] = callcc
        return Environment(frame, None, frozen=True)

    def evaluate(self, ast: ProgramAst, budget: ExecBudget, bindings: Dict[str, Any] = None) -> ExecOutcome:
        """
        プログラムを予算内で評価

        Args:
            ast: 構文解析済みプログラム
            budget: サイクル予算
            bindings: 初期環境に追加する束縛

        Returns:
            評価結果（エラー・時間切れもデータとして返す）
        """
        env = Environment({}, self.builtins)
        for name, value in (bindings or {}).items():
            env.define(intern(name), value)
        state = _RunState()
        try:
            # 評価は AST を変更しない（引用データは呼び出しごとに複製）
            forms = tuple(copy_datum(form) for form in ast.forms)
            value = self._run(forms, env, budget.max_cycles, state)
            return ExecOutcome(ExecStatus.VALUE, value, state.cycles, state.max_depth)
        except _OutOfCycles:
            return ExecOutcome(ExecStatus.TIME_LIMIT, None, budget.max_cycles, state.max_depth, "time limit")
        except SchemeError as e:
            return ExecOutcome(ExecStatus.SCHEME_ERROR, None, state.cycles, state.max_depth, str(e))
        except (TypeError, ValueError, ZeroDivisionError, OverflowError, IndexError,
                RecursionError, MemoryError) as e:
            return ExecOutcome(ExecStatus.SCHEME_ERROR, None, state.cycles, state.max_depth,
                               f"{type(e).__name__}: {e}")

    def _run(self, forms, env: Environment, max_cycles: int, state: '_RunState'):
        if not forms:
            return UNSPECIFIED
        max_depth = self.limits.max_depth
        max_bits = self.limits.max_integer_bits
        k = None
        val = UNSPECIFIED

        def push(tag, k, a=None, b=None, c=None):
            depth = (k[2] + 1) if k is not None else 1
            if depth > max_depth:
                raise SchemeError("maximum evaluation depth exceeded")
            if depth > state.max_depth:
                state.max_depth = depth
            return (tag, k, depth, a, b, c)

        def sequence(body, env, k):
            """本体列の評価開始（最後の式は末尾位置）"""
            if not isinstance(body, Pair):
                raise SchemeError("bad body")
            if body.cdr is not NIL:
                k = push('seq', k, body.cdr, env)
            return body.car, k

        def apply(f, args, k):
            """手続き適用。(eval_mode, exp, env, val, k) を返す"""
            while True:
                if state.cycles >= max_cycles:
                    raise _OutOfCycles()
                state.cycles += 1
                if isinstance(f, Closure):
                    new_env = f.bind(args)
                    exp, k = sequence(f.body, new_env, k)
                    return True, exp, new_env, None, k
                if isinstance(f, Builtin):
                    if not f.arity.accepts(len(args)):
                        raise SchemeError(f"wrong number of arguments to {f.name}: got {len(args)}")
                    if not f.control:
                        result = f.fn(*args)
                        if type(result) is int and result.bit_length() > max_bits:
                            raise SchemeError(f"{f.name}: integer overflow")
                        return False, None, None, result, k
                    name = f.name
                    if name == 'apply':
                        tail = list_to_python(args[-1])
                        if tail is None:
                            raise SchemeError("apply: last argument must be a list")
                        f, args = args[0], tuple(args[1:-1]) + tuple(tail)
                        continue
                    if name == 'map' or name == 'for-each':
                        lists = []
                        for lst in args[1:]:
                            items = list_to_python(lst)
                            if items is None:
                                raise SchemeError(f"{name}: not a proper list")
                            lists.append(items)
                        n = min(len(items) for items in lists)
                        if n == 0:
                            return False, None, None, (NIL if name == 'map' else UNSPECIFIED), k
                        k = push('map', k, args[0], (tuple(lists), 0, (), n), name == 'for-each')
                        f, args = args[0], tuple(items[0] for items in lists)
                        continue
                    if name == 'force':
                        p = args[0]
                        if not isinstance(p, Promise):
                            return False, None, None, p, k
                        if p.done:
                            return False, None, None, p.value, k
                        k = push('force', k, p)
                        return True, p.expr, p.env, None, k
                    # call-with-current-continuation
                    f, args = args[0], (Continuation(k),)
                    continue
                if isinstance(f, Continuation):
                    return False, None, None, (args[0] if args else UNSPECIFIED), f.k
                raise SchemeError(f"not a procedure: {write_value(f)}")

        # トップレベルは本体列として評価
        exp, k = sequence(make_list(list(forms)), env, k)
        eval_mode = True
        while True:
            if eval_mode:
                if state.cycles >= max_cycles:
                    raise _OutOfCycles()
                state.cycles += 1
                if isinstance(exp, Symbol):
                    val = env.lookup(exp)
                    eval_mode = False
                    continue
                if not isinstance(exp, Pair):
                    if exp is NIL:
                        raise SchemeError("empty combination")
                    val = exp
                    eval_mode = False
                    continue
                head = exp.car
                if not isinstance(head, Symbol) or head not in SPECIAL_FORMS:
                    k = push('arg', k, exp.cdr, (), env)
                    exp = head
                    continue
                if head is QUOTE:
                    val = _args(exp, 'quote', 1, 1)[0]
                    eval_mode = False
                elif head is IF:
                    items = _args(exp, 'if', 2, 3)
                    k = push('if', k, exp.cdr.cdr, env)
                    exp = items[0]
                elif head is DEFINE:
                    items = _args(exp, 'define', 1)
                    target = items[0]
                    if isinstance(target, Pair):
                        if not isinstance(target.car, Symbol):
                            _bad('define')
                        env.define(target.car, _make_closure(target.cdr, exp.cdr.cdr, env, target.car))
                        val = UNSPECIFIED
                        eval_mode = False
                    elif isinstance(target, Symbol) and len(items) <= 2:
                        if len(items) == 1:
                            env.define(target, UNSPECIFIED)
                            val = UNSPECIFIED
                            eval_mode = False
                        else:
                            k = push('define', k, target, env)
                            exp = items[1]
                    else:
                        _bad('define')
                elif head is SET:
                    items = _args(exp, 'set!', 2, 2)
                    if not isinstance(items[0], Symbol):
                        _bad('set!')
                    k = push('set', k, items[0], env)
                    exp = items[1]
                elif head is LAMBDA:
                    items = _args(exp, 'lambda', 2)
                    val = _make_closure(items[0], exp.cdr.cdr, env)
                    eval_mode = False
                elif head is BEGIN:
                    if exp.cdr is NIL:
                        val = UNSPECIFIED
                        eval_mode = False
                    else:
                        exp, k = sequence(exp.cdr, env, k)
                elif head is AND or head is OR:
                    rest = exp.cdr
                    if rest is NIL:
                        val = head is AND
                        eval_mode = False
                    elif not isinstance(rest, Pair):
                        _bad(head)
                    else:
                        if rest.cdr is not NIL:
                            k = push('and' if head is AND else 'or', k, rest.cdr, env)
                        exp = rest.car
                elif head is COND:
                    clauses = exp.cdr
                    eval_mode, exp, val, k = self._cond_next(clauses, env, k, push, sequence)
                elif head is CASE:
                    items = _args(exp, 'case', 1)
                    k = push('case', k, exp.cdr.cdr, env)
                    exp = items[0]
                elif head is DELAY:
                    val = Promise(_args(exp, 'delay', 1, 1)[0], env)
                    eval_mode = False
                else:
                    exp = _EXPANDERS[head](exp)
                continue

            # 継続への値の返却
            if k is None:
                return val
            tag = k[0]
            if tag == 'arg':
                rest, acc, env = k[3], k[4] + (val,), k[5]
                k = k[1]
                if rest is NIL:
                    eval_mode, exp, new_env, val, k = apply(acc[0], acc[1:], k)
                    if eval_mode:
                        env = new_env
                elif isinstance(rest, Pair):
                    k = push('arg', k, rest.cdr, acc, env)
                    exp = rest.car
                    eval_mode = True
                else:
                    raise SchemeError("improper argument list")
            elif tag == 'seq':
                env = k[4]
                exp, k = sequence(k[3], env, k[1])
                eval_mode = True
            elif tag == 'if':
                branches, env = k[3], k[4]
                k = k[1]
                if val is not False:
                    exp = branches.car
                    eval_mode = True
                elif branches.cdr is NIL:
                    val = UNSPECIFIED
                else:
                    exp = branches.cdr.car
                    eval_mode = True
            elif tag == 'define':
                name, target_env = k[3], k[4]
                k = k[1]
                if isinstance(val, Closure) and val.name is None:
                    val.name = name
                target_env.define(name, val)
                val = UNSPECIFIED
            elif tag == 'set':
                k[4].assign(k[3], val)
                k = k[1]
                val = UNSPECIFIED
            elif tag == 'and' or tag == 'or':
                rest, env = k[3], k[4]
                k = k[1]
                if (val is False) == (tag == 'and'):
                    continue
                if not isinstance(rest, Pair):
                    _bad(tag)
                if rest.cdr is not NIL:
                    k = push(tag, k, rest.cdr, env)
                exp = rest.car
                eval_mode = True
            elif tag == 'cond':
                clause, rest, env = k[3], k[4], k[5]
                k = k[1]
                if val is False:
                    eval_mode, exp, val, k = self._cond_next(rest, env, k, push, sequence)
                    continue
                body = clause.cdr
                if body is NIL:
                    continue
                if isinstance(body, Pair) and body.car is ARROW:
                    if not isinstance(body.cdr, Pair):
                        _bad('cond')
                    k = push('cond-apply', k, val)
                    exp = body.cdr.car
                else:
                    exp, k = sequence(body, env, k)
                eval_mode = True
            elif tag == 'cond-apply':
                saved = k[3]
                eval_mode, exp, new_env, val, k = apply(val, (saved,), k[1])
                if eval_mode:
                    env = new_env
            elif tag == 'case':
                clauses, env = k[3], k[4]
                k = k[1]
                chosen = None
                for clause in list_to_python(clauses) or _bad('case'):
                    if not isinstance(clause, Pair):
                        _bad('case')
                    data = clause.car
                    if data is ELSE or any(eqv(val, d) for d in (list_to_python(data) or [])):
                        chosen = clause.cdr
                        break
                if chosen is None or chosen is NIL:
                    val = UNSPECIFIED
                else:
                    exp, k = sequence(chosen, env, k)
                    eval_mode = True
            elif tag == 'map':
                f, (lists, index, acc, n), for_each = k[3], k[4], k[5]
                k = k[1]
                acc = acc + (val,)
                index += 1
                if index == n:
                    val = UNSPECIFIED if for_each else make_list(acc)
                    continue
                k = push('map', k, f, (lists, index, () if for_each else acc, n), for_each)
                eval_mode, exp, new_env, val, k = apply(f, tuple(items[index] for items in lists), k)
                if eval_mode:
                    env = new_env
            elif tag == 'force':
                promise = k[3]
                k = k[1]
                if not promise.done:
                    promise.done, promise.value = True, val
                val = promise.value
            else:
                raise SchemeError(f"internal: unknown frame {tag}")

    @staticmethod
    def _cond_next(clauses, env, k, push, sequence):
        """cond の次の節を評価開始。(eval_mode, exp, val, k) を返す"""
        if clauses is NIL:
            return False, None, UNSPECIFIED, k
        if not isinstance(clauses, Pair) or not isinstance(clauses.car, Pair):
            _bad('cond')
        clause = clauses.car
        if clause.car is ELSE:
            if clause.cdr is NIL:
                return False, None, UNSPECIFIED, k
            exp, k = sequence(clause.cdr, env, k)
            return True, exp, None, k
        k = push('cond', k, clause, clauses.cdr, env)
        return True, clause.car, None, k


@dataclass
class _RunState:
    cycles: int = 0
    max_depth: int = 0


_DEFAULT_MACHINE: Optional[SchemeMachine] = None


def default_machine() -> SchemeMachine:
    global _DEFAULT_MACHINE
    if _DEFAULT_MACHINE is None:
        _DEFAULT_MACHINE = SchemeMachine()
    return _DEFAULT_MACHINE


def evaluate(ast: ProgramAst, budget: ExecBudget, bindings: Dict[str, Any] = None) -> ExecOutcome:
    """既定設定の評価器で評価"""
    return default_machine().evaluate(ast, budget, bindings)
