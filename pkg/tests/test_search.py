"""
Levin 探索のテスト
確率上限付き列挙・静的分配・フェーズ探索・CJS を確認
"""
import math
import pytest
from unittest.mock import MagicMock
import sys
import os

# テスト用のパス設定
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'config'))

FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures')
DATA = os.path.join(os.path.dirname(__file__), '..', 'data')

SQR_EXAMPLES = (((2,), 4), ((3,), 9), ((5,), 25))


def _grammar(name):
    from grammar import load_grammar
    return load_grammar(os.path.join(FIXTURES, name))


def _quiet_logger():
    from logger import SearchEventLogger
    return SearchEventLogger(MagicMock())


def _enumerate(scfg, horizon):
    from grammar import Nonterminal
    from derivation import SententialForm, sentence_text
    from search import enumerate_dfs

    found = []
    summary = enumerate_dfs(scfg, SententialForm.start((Nonterminal('s'),)), horizon,
                            lambda form: found.append((sentence_text(form), form.probability)))
    return found, summary


# 見出し -> [(本体, 確率)]。本体の記号のうち見出しにあるものが非終端記号
ORACLE_GRAMMARS = {
    'left-recursive': ('s', {
        's': [(('a',), 0.6), (('s', 'a'), 0.4)],
    }),
    'two-level': ('s', {
        's': [(('x', 'y'), 1.0)],
        'x': [(('a',), 0.7), (('b',), 0.3)],
        'y': [(('c',), 0.5), (('d',), 0.25), (('x', 'y'), 0.25)],
    }),
    'prefix-expression': ('e', {
        'e': [(('n',), 0.5), (('(', 'e', '+', 'e', ')'), 0.3), (('-', 'e'), 0.2)],
    }),
}


def _oracle_scfg(start, rules):
    from grammar import parse_grammar

    lines = [f"%start {start}"]
    for head, alternatives in rules.items():
        for body, probability in alternatives:
            symbols = ' '.join(s if s in rules else f'"{s}"' for s in body)
            lines.append(f"{head} -> {symbols} @{probability}")
    return parse_grammar('\n'.join(lines) + '\n')


def _brute_force(start, rules, horizon):
    """全導出を幅優先で展開し、確率が horizon 以上の文を集める"""
    floor = horizon * (1 - 1e-9)
    found = []
    pending = [((start,), 1.0)]
    while pending:
        symbols, p = pending.pop(0)
        index = next((i for i, s in enumerate(symbols) if s in rules), None)
        if index is None:
            found.append((' '.join(symbols), p))
            continue
        for body, q in rules[symbols[index]]:
            if p * q >= floor:
                pending.append((symbols[:index] + body + symbols[index + 1:], p * q))
    return found


class TestEnumeration:
    """確率上限付き深さ優先探索のテスト"""

    def test_horizon_oracle(self):
        """上限 0.1 で "a" と "a a" だけが列挙されることのテスト"""
        found, summary = _enumerate(_grammar('tiny.grammar'), 0.1)
        assert [text for text, _ in found] == ['a', 'a a']
        assert math.isclose(found[0][1], 0.6)
        assert math.isclose(found[1][1], 0.24)
        assert summary.visited == 2

    def test_boundary_is_inclusive(self):
        """確率が上限ちょうどの文も列挙されることのテスト"""
        found, _ = _enumerate(_grammar('tiny.grammar'), 0.24)
        assert [text for text, _ in found] == ['a', 'a a']

    def test_nothing_above_horizon(self):
        """最も確率の高い文より高い上限では何も列挙しないことのテスト"""
        found, summary = _enumerate(_grammar('tiny.grammar'), 0.7)
        assert found == []
        assert summary.visited == 0

    def test_full_horizon(self):
        """上限 1 は確率 1 の文だけを許すことのテスト"""
        from grammar import parse_grammar
        found, _ = _enumerate(parse_grammar('s -> "a" @1.0\n'), 1.0)
        assert [text for text, _ in found] == ['a']

    def test_invalid_horizon(self):
        """上限の定義域テスト"""
        from grammar import DomainError

        with pytest.raises(DomainError):
            _enumerate(_grammar('tiny.grammar'), 0.0)
        with pytest.raises(DomainError):
            _enumerate(_grammar('tiny.grammar'), 1.5)

    def test_descending_probability_order(self):
        """兄弟は確率の降順で訪問されることのテスト"""
        from grammar import parse_grammar

        scfg = parse_grammar('s -> "x" @0.2\ns -> "y" @0.5\ns -> "z" @0.3\n')
        found, _ = _enumerate(scfg, 0.01)
        assert [text for text, _ in found] == ['y', 'z', 'x']

    @pytest.mark.parametrize("name", sorted(ORACLE_GRAMMARS))
    @pytest.mark.parametrize("horizon", [0.2, 0.05, 0.01])
    def test_matches_exhaustive_expansion(self, name, horizon):
        """全導出の展開で求めた文集合と一致し重複がないことのテスト"""
        from grammar import Nonterminal
        from derivation import SententialForm, sentence_text
        from search import enumerate_dfs

        start, rules = ORACLE_GRAMMARS[name]
        found = []
        enumerate_dfs(_oracle_scfg(start, rules), SententialForm.start((Nonterminal(start),)), horizon,
                      lambda form: found.append((sentence_text(form), form.probability)))
        expected = dict(_brute_force(start, rules, horizon))

        texts = [text for text, _ in found]
        assert len(texts) == len(set(texts))
        assert set(texts) == set(expected)
        for text, probability in found:
            assert probability == pytest.approx(expected[text], rel=1e-12)
            assert probability >= horizon * (1 - 1e-9)


class TestPartition:
    """トップレベル文形式の静的分配のテスト"""

    def test_greedy_assignment(self):
        """{0.5, 0.3, 0.2} を 2 ワーカーに分ける例のテスト"""
        from search import assign_greedy

        assert assign_greedy([0.5, 0.3, 0.2], 2) == [[0], [1, 2]]

    def test_single_worker(self):
        """1 ワーカーなら全部を受け持つことのテスト"""
        from search import assign_greedy

        assert assign_greedy([0.1, 0.7, 0.2], 1) == [[0, 1, 2]]

    def test_expand_frontier_order(self):
        """展開後のトップレベル列が列挙順と一致することのテスト"""
        from grammar import Nonterminal
        from derivation import SententialForm, sentence_text
        from search import expand_frontier

        frontier = expand_frontier(_grammar('tiny.grammar'), SententialForm.start((Nonterminal('s'),)), 3)
        assert [sentence_text(f) for f in frontier] == ['a', 'a a', '<s> a a']

    def test_partition_covers_same_sentences(self):
        """分配しても列挙される文の集合が変わらないことのテスト"""
        from grammar import Nonterminal
        from derivation import SententialForm, sentence_text
        from search import partition_toplevel, enumerate_dfs

        scfg = _grammar('tiny.grammar')
        start = SententialForm.start((Nonterminal('s'),))
        expected, _ = _enumerate(scfg, 0.01)
        found = []
        for _, forms in partition_toplevel(scfg, start, 3):
            for form in forms:
                enumerate_dfs(scfg, form, 0.01, lambda f: found.append(sentence_text(f)))
        assert sorted(found) == sorted(text for text, _ in expected)

    def test_invalid_worker_count(self):
        """ワーカー数の定義域テスト"""
        from grammar import Nonterminal, DomainError
        from derivation import SententialForm
        from search import partition_toplevel

        with pytest.raises(DomainError):
            partition_toplevel(_grammar('tiny.grammar'), SententialForm.start((Nonterminal('s'),)), 0)


class TestMeasures:
    """数値関数のテスト"""

    @pytest.mark.parametrize("p,t,expected", [
        (0.5, 100, 200.0),
        (1.0, 7, 7.0),
        (0.001, 50, 50000.0),
    ])
    def test_cjs(self, p, t, expected):
        """CJS = t / p のテスト"""
        from search import cjs

        assert math.isclose(cjs(p, t), expected)

    @pytest.mark.parametrize("p,expected", [
        (1.0, 0.0),
        (0.5, 1.0),
        (0.25, 2.0),
        (2 ** -10, 10.0),
    ])
    def test_entropy(self, p, expected):
        """エントロピー = -log2 p のテスト"""
        from search import entropy

        assert math.isclose(entropy(p), expected, abs_tol=1e-12)

    @pytest.mark.parametrize("p,t,reference_cjs,reference_entropy", [
        (0.0277, 15, 540, 5.16),
        (7.91e-6, 20, 2.52e6, 16.94),
        (2.01e-10, 56, 2.78e11, 32.21),
        (2.01e-10, 52, 2.58e11, 32.21),
    ])
    def test_reference_rows(self, p, t, reference_cjs, reference_entropy):
        """基準の (p_i, t_i) から再計算した CJS と H が基準値と 1.5% 以内で一致することのテスト"""
        from search import cjs, entropy

        assert cjs(p, t) == pytest.approx(reference_cjs, rel=0.015)
        assert entropy(p) == pytest.approx(reference_entropy, rel=0.015)

    def test_reference_row_rounding(self):
        """15 / 0.0277 = 541.5、-log2 0.0277 = 5.17 のテスト"""
        from search import cjs, entropy

        assert round(cjs(0.0277, 15), 1) == 541.5
        assert round(entropy(0.0277), 2) == 5.17
        assert round(entropy(2.01e-10), 2) == 32.21

    def test_domain_errors(self):
        """定義域外の入力テスト"""
        from grammar import DomainError
        from search import cjs, entropy, probability_horizon

        with pytest.raises(DomainError):
            cjs(0.0, 10)
        with pytest.raises(DomainError):
            cjs(0.5, 0)
        with pytest.raises(DomainError):
            entropy(1.5)
        with pytest.raises(DomainError):
            probability_horizon(100, 50)

    def test_probability_horizon(self):
        """p_h = t_q / t のテスト"""
        from search import probability_horizon

        assert math.isclose(probability_horizon(100, 10 ** 6), 1e-4)

    def test_config(self):
        """探索設定のフェーズ予算と検証テスト"""
        from grammar import DomainError
        from search import SearchConfig

        config = SearchConfig(initial_limit=1000, quantum=100)
        assert config.phase_limit(0) == 1000
        assert config.phase_limit(3) == 8000
        with pytest.raises(DomainError):
            SearchConfig(initial_limit=10, quantum=100)
        with pytest.raises(DomainError):
            SearchConfig(workers=0)


class TestLevinSearch:
    """フェーズ探索のテスト"""

    def test_start_form(self):
        """既定の開始文形式テスト"""
        from grammar import Nonterminal
        from problems import ProblemSpec
        from search import search_start_form

        problem = ProblemSpec('add', 'operator-induction', 2, (((1, 2), 3),))
        start = search_start_form(_grammar('arith.grammar'), problem)
        assert start.symbols == ('(', 'define', '(', 'add', 'var0', 'var1', ')', Nonterminal('body'), ')')
        assert start.ctx.bound == ('var0', 'var1')

    def test_solves_sqr(self):
        """sqr を最も確率の高い解で解くことのテスト"""
        from problems import ProblemSpec
        from search import levin_search, SearchConfig

        problem = ProblemSpec('sqr', 'operator-induction', 1, SQR_EXAMPLES)
        config = SearchConfig(initial_limit=10_000, quantum=100, max_phases=10)
        event_logger = _quiet_logger()
        record = levin_search(_grammar('arith.grammar'), problem, config, event_logger=event_logger)
        assert record.program_text == '(define (sqr var0) (* var0 var0))'
        assert record.name == 'sqr'
        assert 0 < record.p < 0.01
        assert record.t > 0
        assert math.isclose(record.cjs, record.t / record.p)
        assert record.stats.trials > 0
        assert record.stats.max_cycles == config.phase_limit(record.stats.phases - 1)
        assert event_logger.solved_count == 1

    def test_solution_tree_matches_steps(self):
        """解の導出木が開始文形式を根に持つことのテスト"""
        from derivation import START_FORM, tree_steps
        from problems import ProblemSpec
        from search import levin_search, SearchConfig

        problem = ProblemSpec('sqr', 'operator-induction', 1, SQR_EXAMPLES)
        config = SearchConfig(initial_limit=10_000, quantum=100, max_phases=10)
        record = levin_search(_grammar('arith.grammar'), problem, config, event_logger=_quiet_logger())
        tree = record.tree
        assert tree.label == START_FORM
        assert tree_steps(tree) == list(record.steps)

    def test_parse_errors_count_as_trials(self):
        """構文エラーの候補も試行とエラーに数えることのテスト"""
        from grammar import load_grammar_text
        from problems import ProblemSpec
        from search import levin_search, SearchConfig

        scfg = load_grammar_text('s -> ")" @0.5\ns -> "1" @0.5\n')
        problem = ProblemSpec('f', 'operator-induction', 1, (((1,), 1),))
        config = SearchConfig(initial_limit=1000, quantum=100, max_phases=1)
        record = levin_search(scfg, problem, config, event_logger=_quiet_logger())
        assert record.program_text == '(define (f var0) 1)'
        assert record.stats.trials == 2
        assert record.stats.scheme_errors == 1
        assert math.isclose(record.entropy, 1.0)

    def test_exhausted(self):
        """最大フェーズ数で打ち切ることのテスト"""
        from problems import ProblemSpec
        from search import levin_search, SearchConfig, SearchExhausted

        problem = ProblemSpec('impossible', 'operator-induction', 1, (((1,), 2), ((1,), 3)))
        config = SearchConfig(initial_limit=1000, quantum=100, max_phases=2)
        event_logger = _quiet_logger()
        with pytest.raises(SearchExhausted) as excinfo:
            levin_search(_grammar('arith.grammar'), problem, config, event_logger=event_logger)
        assert excinfo.value.problem_id == 'impossible'
        assert excinfo.value.stats.phases == 2
        assert excinfo.value.stats.max_cycles == config.phase_limit(1)
        event_logger.logger.warning.assert_called_once()

    def test_shipped_grammar_solves_identity(self):
        """同梱の初期文法で恒等関数の逆問題を解くことのテスト"""
        from grammar import load_grammar
        from problems import ProblemSpec, inversion_examples
        from search import levin_search, SearchConfig

        scfg = load_grammar(os.path.join(DATA, 'r5rs_subset.grammar'))
        problem = ProblemSpec('inv-identity', 'inversion', 1, inversion_examples('identity', [5, 9, 2]))
        config = SearchConfig(initial_limit=10_000, quantum=100, max_phases=3)
        record = levin_search(scfg, problem, config, event_logger=_quiet_logger())
        assert record.program_text == '(define (inv-identity var0) var0)'
        assert record.stats.phases == 1

    def test_shipped_grammar_lambda_scope(self):
        """lambda 式の !push / !pop で束縛が復元されることのテスト"""
        from grammar import Nonterminal, load_grammar
        from derivation import SententialForm, sentence_text
        from search import enumerate_dfs

        scfg = load_grammar(os.path.join(DATA, 'r5rs_subset.grammar'))
        start = SententialForm.start((Nonterminal('lambda-expression'),), scfg.initial_context(['var0']))
        found = []
        enumerate_dfs(scfg, start, 0.001, found.append)
        texts = [sentence_text(form) for form in found]
        assert '( lambda ( var1 ) var0 )' in texts
        assert '( lambda ( var1 ) var1 )' in texts
        assert all(form.ctx.bound == ('var0',) and form.ctx.marks == () for form in found)

    def test_deterministic_across_workers(self):
        """ワーカー数によらず同じ解と試行数になることのテスト"""
        from problems import ProblemSpec
        from search import levin_search, SearchConfig

        problem = ProblemSpec('sqr', 'operator-induction', 1, SQR_EXAMPLES)
        scfg = _grammar('arith.grammar')
        single = levin_search(scfg, problem, SearchConfig(initial_limit=10_000, quantum=100, workers=1),
                              event_logger=_quiet_logger())
        double = levin_search(scfg, problem, SearchConfig(initial_limit=10_000, quantum=100, workers=2),
                              event_logger=_quiet_logger())
        assert single.program_text == double.program_text
        assert single.p == double.p
        assert single.t == double.t
        assert single.stats.trials == double.stats.trials
        assert single.stats.cycles_spent == double.stats.cycles_spent
