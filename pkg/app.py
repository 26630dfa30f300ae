#!/usr/bin/env python3
import argparse
import configparser
import logging
import os
import sys

from supertoken_video_transformer.errors import SVTError
from supertoken_video_transformer.harness.commands import HANDLERS, seed_or_none

logger = logging.getLogger('app')

# retrieve configuration variables
global_config = configparser.ConfigParser()
global_config.read(os.path.join(os.path.dirname(os.path.abspath(__file__)), 'config.ini'))
log_level = os.getenv('SVT_LOG_LEVEL', global_config.get('general', 'log_level', fallback='INFO'))
output_dir = os.getenv('SVT_OUTPUT_DIR', global_config.get('general', 'output_dir', fallback='out'))
default_seed = os.getenv('SVT_SEED', global_config.get('general', 'seed', fallback=''))
default_views = global_config.get('audit', 'views', fallback='1x1')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='app.py', description='Supertoken video transformer toolkit')
    commands = parser.add_subparsers(dest='command', required=True)

    def command(name: str, help: str, checkpoint: bool = False) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help)
        sub.add_argument('--config', required=True, help='JSON document under configs/')
        sub.add_argument('--seed', default=default_seed, help='overrides the document seed')
        sub.add_argument('--out', default=output_dir, help='output directory')
        if checkpoint:
            sub.add_argument('--checkpoint', default=None, help='weights written by train')
        return sub

    command('generate', 'write the synthetic dataset as .npy arrays plus a manifest')
    command('train', 'train an experiment, writing metrics.csv and checkpoint.svt')
    command('eval', 'validation loss and top-1 of a checkpoint', checkpoint=True)
    audit = command('audit', 'per-layer FLOP and parameter ledger of a model')
    audit.add_argument('--baseline', default=None, help='model to report the reduction against')
    audit.add_argument('--views', default=default_views, help='temporal x spatial test views, e.g. 3x7')
    command('ablate', 'run an ablation sweep and write results.csv')
    maps = command('export-maps', 'score heatmaps and pool membership images of one clip', checkpoint=True)
    maps.add_argument('--layer', type=int, required=True)
    maps.add_argument('--clip', type=int, default=0, help='validation clip index')
    emb = command('export-embeddings', 'token embeddings after selected layers as CSV', checkpoint=True)
    emb.add_argument('--layers', default=None, help='comma-separated layer indices, 0 = embedding')
    emb.add_argument('--clips', type=int, default=8)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=log_level.upper(), format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    args = build_parser().parse_args(argv)
    try:
        args.seed = seed_or_none(args.seed)
        return HANDLERS[args.command](args)
    except SVTError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
