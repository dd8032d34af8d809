"""
問題・訓練系列のテスト
系列ファイルの読み込み・逆関数問題・解検査を確認
"""
import pytest
import sys
import os

# テスト用のパス設定
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'config'))

ROOT = os.path.join(os.path.dirname(__file__), '..')
FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures')


class TestSequenceFiles:
    """系列ファイルのテスト"""

    def test_load_seq1(self):
        """同梱の演算子帰納系列の読み込みテスト"""
        from problems import load_sequence

        sequence = load_sequence(os.path.join(ROOT, 'data', 'seq1.seq'))
        assert sequence.id == 'seq1'
        assert sequence.ids() == ['sqr', 'add', 'is0', 'pow4', 'nand', 'xor']
        add = sequence.problems[1]
        assert add.arity == 2
        assert add.examples[0] == ((1, 2), 3)
        nand = sequence.problems[4]
        assert nand.examples[0] == ((True, True), False)

    def test_load_seq0(self):
        """同梱の逆関数系列の読み込みテスト"""
        from problems import load_sequence

        sequence = load_sequence(os.path.join(ROOT, 'data', 'seq0.seq'))
        assert sequence.ids() == ['inv-identity', 'inv-reciprocal', 'inv-sqrt']
        assert all(p.kind == 'inversion' for p in sequence)
        sqrt = sequence.problems[2]
        assert sqrt.examples[0] == ((2,), 4)
        assert sqrt.examples[1] == ((3,), 9)

    def test_default_id_is_file_stem(self):
        """sequence 行がない場合は既定 id を使うことのテスト"""
        from problems import parse_sequence

        sequence = parse_sequence('problem f\nex (1) -> 1\n', 'fallback')
        assert sequence.id == 'fallback'
        assert sequence.problems[0].kind == 'operator-induction'

    def test_start_and_name_options(self):
        """start 行と name オプションのテスト"""
        from problems import parse_sequence

        text = 'problem p1 name=double\nstart ( define ( double var0 ) <expression> )\nex (2) -> 4\n'
        problem = parse_sequence(text).problems[0]
        assert problem.call_name == 'double'
        assert problem.start_form == '( define ( double var0 ) <expression> )'

    @pytest.mark.parametrize("text", [
        'ex (1) -> 2\n',
        'problem f\nex 1 -> 2\n',
        'problem f\nex (1) 2\n',
        'problem f color=red\nex (1) -> 2\n',
        'problem f\nfrobnicate\n',
        'problem f arity=x\nex (1) -> 2\n',
    ])
    def test_parse_errors(self, text):
        """系列テキストの書式エラーテスト"""
        from problems import parse_sequence, SequenceParseError

        with pytest.raises(SequenceParseError):
            parse_sequence(text)

    @pytest.mark.parametrize("text", [
        '',
        'problem f\n',
        'problem f arity=2\nex (1) -> 2\n',
        'problem f\nex (1) -> 1\nproblem f\nex (2) -> 2\n',
        'problem Upper\nex (1) -> 1\n',
        'problem f kind=guess\nex (1) -> 1\n',
        'problem f kind=inversion\ninvert reciprocal 0\n',
    ])
    def test_validation_errors(self, text):
        """系列の検証エラーテスト"""
        from problems import parse_sequence, SequenceValidationError

        with pytest.raises(SequenceValidationError):
            parse_sequence(text)


class TestInversion:
    """逆関数問題のテスト"""

    def test_identity(self):
        """恒等関数の例テスト"""
        from problems import inversion_examples

        assert inversion_examples('identity', [5, 9]) == (((5,), 5), ((9,), 9))

    def test_reciprocal(self):
        """逆数の例テスト"""
        from problems import inversion_examples

        assert inversion_examples('reciprocal', [4, 0.5]) == (((0.25,), 4), ((2.0,), 0.5))

    def test_sqrt_exact(self):
        """平方数の平方根は正確数になることのテスト"""
        from problems import inversion_examples

        examples = inversion_examples('sqrt', [4, 2.25])
        assert examples[0] == ((2,), 4)
        assert isinstance(examples[0][0][0], int)
        assert examples[1] == ((1.5,), 2.25)

    def test_domain_errors(self):
        """定義域外の点のテスト"""
        from problems import inversion_examples
        from grammar import DomainError

        with pytest.raises(DomainError):
            inversion_examples('reciprocal', [0])
        with pytest.raises(DomainError):
            inversion_examples('sqrt', [-1])
        with pytest.raises(DomainError):
            inversion_examples('cube', [1])


class TestValuesMatch:
    """出力値比較のテスト"""

    def test_exact_integers(self):
        """正確数同士は完全一致で比較することのテスト"""
        from problems import values_match

        assert values_match(4, 4)
        assert not values_match(4, 5)

    def test_inexact_tolerance(self):
        """不正確数は相対誤差で比較することのテスト"""
        from problems import values_match

        assert values_match(4.0, 4)
        assert values_match(1.0000000001, 1.0)
        assert not values_match(1.01, 1.0)
        assert not values_match(float('nan'), float('nan'))

    def test_booleans_are_not_numbers(self):
        """真偽値と数値を区別することのテスト"""
        from problems import values_match

        assert values_match(True, True)
        assert not values_match(True, 1)
        assert not values_match(False, 0)

    def test_lists(self):
        """リストの要素ごとの比較テスト"""
        from problems import values_match
        from scheme_reader import parse_datum

        assert values_match(parse_datum('(1 2.0000000001)'), parse_datum('(1 2.0)'))
        assert not values_match(parse_datum('(1 2)'), parse_datum('(1 2 3)'))


class TestCheckSolution:
    """解検査のテスト"""

    def _problem(self, name='sqr'):
        from problems import ProblemSpec
        return ProblemSpec(name, 'operator-induction', 1, (((2,), 4), ((3,), 9), ((5,), 25)))

    def test_pass(self):
        """正しい解の検査テスト"""
        from problems import check_solution, CheckStatus
        from scheme_reader import parse
        from scheme_machine import ExecBudget

        result = check_solution(parse('(define (sqr var0) (* var0 var0))'), self._problem(), ExecBudget(1000))
        assert result.status is CheckStatus.PASS
        assert result.t_i == result.cycles > 0

    def test_fail_stops_at_first_mismatch(self):
        """最初の不一致で打ち切ることのテスト"""
        from problems import check_solution, CheckStatus
        from scheme_reader import parse
        from scheme_machine import ExecBudget

        result = check_solution(parse('(define (sqr var0) (+ var0 var0))'), self._problem(), ExecBudget(1000))
        assert result.status is CheckStatus.FAIL
        assert result.failed_example == 1
        assert result.t_i is None

    def test_error_and_time_limit(self):
        """Scheme エラーと時間切れの区別テスト"""
        from problems import check_solution, CheckStatus
        from scheme_reader import parse
        from scheme_machine import ExecBudget

        error = check_solution(parse('(define (sqr var0) (car var0))'), self._problem(), ExecBudget(1000))
        assert error.status is CheckStatus.ERROR
        loop = check_solution(parse('(define (sqr var0) (sqr var0))'), self._problem(), ExecBudget(1000))
        assert loop.status is CheckStatus.TIME_LIMIT

    def test_arguments_are_quoted(self):
        """リスト引数が quote されて渡されることのテスト"""
        from problems import ProblemSpec, check_solution, CheckStatus
        from scheme_reader import parse, parse_datum
        from scheme_machine import ExecBudget

        problem = ProblemSpec('head', 'operator-induction', 1, (((parse_datum('(7 8)'),), 7),))
        assert problem.call_text((parse_datum('(7 8)'),)) == "(head '(7 8))"
        result = check_solution(parse('(define (head var0) (car var0))'), problem, ExecBudget(1000))
        assert result.status is CheckStatus.PASS

    def test_inverse_sqrt_program(self):
        """逆関数問題の解が許容誤差内で通ることのテスト"""
        from problems import ProblemSpec, inversion_examples, check_solution, CheckStatus
        from scheme_reader import parse
        from scheme_machine import ExecBudget

        problem = ProblemSpec('inv-sqrt', 'inversion', 1, inversion_examples('sqrt', [4, 9, 2.5]))
        result = check_solution(parse('(define (inv-sqrt var0) (* var0 var0))'), problem, ExecBudget(1000))
        assert result.status is CheckStatus.PASS

    def test_examples_do_not_share_state(self):
        """入出力例ごとにプログラムの状態が独立していることのテスト"""
        from problems import ProblemSpec, check_solution, CheckStatus
        from scheme_reader import parse
        from scheme_machine import ExecBudget

        problem = ProblemSpec('count', 'operator-induction', 1, (((5,), 1), ((6,), 1), ((7,), 1)))
        program = parse("(define cell '(0)) "
                        "(define (count var0) (set-car! cell (+ (car cell) 1)) (car cell))")
        result = check_solution(program, problem, ExecBudget(1000))
        assert result.status is CheckStatus.PASS
