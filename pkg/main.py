"""
HAM 増分プログラム合成システム
メインアプリケーション
"""
import os
import sys
import argparse

# パス設定
sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))
sys.path.append(os.path.join(os.path.dirname(__file__), 'config'))

from harness import EXIT_ERROR, HamApp

def build_parser() -> argparse.ArgumentParser:
    """コマンドライン引数パーサー"""
    parser = argparse.ArgumentParser(
        description="HAM 増分プログラム合成システム（文法誘導 Levin 探索）"
    )

    # サブコマンド
    subparsers = parser.add_subparsers(dest='command', help='実行コマンド')

    # runコマンド
    run_parser = subparsers.add_parser('run', help='訓練系列を実行')
    run_parser.add_argument('--seq', type=str, required=True, help='系列ファイル')
    run_parser.add_argument('--grammar', type=str, required=True, help='初期文法ファイル')
    run_parser.add_argument('--no-update', action='store_true', help='HAM 更新を行わない')
    run_parser.add_argument('--workers', type=int, help='ワーカー数（既定: 1）')
    run_parser.add_argument('--initial-limit', type=int, help='初期サイクル予算（既定: 10^6）')
    run_parser.add_argument('--quantum', type=int, help='時間量子 t_q（既定: 100）')
    run_parser.add_argument('--max-phases', type=int, help='最大フェーズ数（既定: 20）')
    run_parser.add_argument('--start-form', type=str, help='開始文形式（例: "( define ( f var0 ) <expression> )"）')
    run_parser.add_argument('--ham', type=str, help='HAM 状態ファイル（存在すれば再開）')
    run_parser.add_argument('--report', type=str, choices=['table', 'csv'], default='table', help='レポート形式')
    run_parser.add_argument('--out', type=str, help='レポート出力先ファイル')

    # evalコマンド
    eval_parser = subparsers.add_parser('eval', help='Scheme ファイルを評価')
    eval_parser.add_argument('file', type=str, help='Scheme ソースファイル')
    eval_parser.add_argument('--max-cycles', type=int, default=10 ** 6, help='サイクル予算')

    # statsコマンド
    subparsers.add_parser('stats', help='結果データベースの統計情報表示')

    # 共通オプション
    parser.add_argument('--config', type=str, default='config/config.json', help='設定ファイルパス')
    parser.add_argument('--verbose', '-v', action='store_true', help='詳細ログ出力')
    return parser

def main():
    """メイン関数"""
    parser = build_parser()
    try:
        args = parser.parse_args()
    except SystemExit as e:
        sys.exit(EXIT_ERROR if e.code else 0)

    # ログレベル設定
    if args.verbose:
        import logging
        logging.getLogger().setLevel(logging.DEBUG)

    if args.command is None:
        parser.print_help()
        sys.exit(EXIT_ERROR)

    # アプリケーション作成
    app = HamApp(args.config)

    if args.command == 'run':
        for path in (args.seq, args.grammar):
            if not os.path.exists(path):
                print(f"✗ ファイルが見つかりません: {path}")
                sys.exit(EXIT_ERROR)
        app.initialize()
        result = app.run(
            args.seq, args.grammar,
            updates=not args.no_update,
            ham_path=args.ham,
            report_format=args.report,
            out_path=args.out,
            workers=args.workers,
            initial_limit=args.initial_limit,
            quantum=args.quantum,
            max_phases=args.max_phases,
            start_form=args.start_form
        )
        if result['report'] and not args.out:
            print(result['report'], end='')
        if result['success']:
            print(f"[OK] {result['message']}")
        else:
            print(f"✗ {result['message']}")
        sys.exit(result['exit_code'])

    elif args.command == 'eval':
        result = app.evaluate_file(args.file, args.max_cycles)
        if result['success']:
            print(result['value'])
            print(f"[OK] cycles={result['cycles']} depth={result['max_depth']}")
            sys.exit(0)
        else:
            print(f"✗ {result['message']}: {result['error']}")
            sys.exit(EXIT_ERROR)

    elif args.command == 'stats':
        success = app.show_statistics()
        sys.exit(0 if success else EXIT_ERROR)

if __name__ == "__main__":
    main()
