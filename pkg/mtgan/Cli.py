__author__ = 'frank'

import argparse
import logging
import os
import sys

from .Errors import ConfigError, MtganError
from .EvalKit import TrialScoreSet
from .MtganClient import Mtgan
from .TrainConfig import TrainConfig

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):

    def error(self, message):
        raise UsageError(message)


def _ints(text):
    try:
        return [int(v) for v in text.split(',') if v]
    except ValueError:
        raise argparse.ArgumentTypeError('expected comma-separated integers: %s' % text)


def _names(text):
    return [v.strip() for v in text.split(',') if v.strip()]


def build_parser():

    parser = _Parser(prog='mtgan', description='Triplet / GAN / softmax speaker verification toolkit.')
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    synth = sub.add_parser('synth', help='build the synthetic corpus')
    synth.add_argument('--speakers', type=int, required=True)
    synth.add_argument('--utts', type=int, required=True)
    synth.add_argument('--size', type=int, help='matrix side (default: config input_size)')
    synth.add_argument('-c', '--config')
    synth.add_argument('-o', '--output', required=True)

    extract = sub.add_parser('extract', help='featurize <dir>/<speaker>/<utt>.wav files')
    extract.add_argument('-i', '--input', required=True)
    extract.add_argument('-o', '--output', required=True)
    extract.add_argument('-c', '--config')
    extract.add_argument('--workers', type=int, default=1)

    train = sub.add_parser('train', help='train on a feature file')
    train.add_argument('-c', '--config', required=True)
    train.add_argument('-i', '--input', required=True)
    train.add_argument('-o', '--output', required=True, help='output directory')
    train.add_argument('--resume', help='checkpoint to continue from')

    enroll = sub.add_parser('enroll', help='enroll held-out speakers')
    enroll.add_argument('-k', '--checkpoint', required=True)
    enroll.add_argument('-i', '--input', required=True)
    enroll.add_argument('-o', '--output', required=True, help='speaker model JSON')

    score = sub.add_parser('score', help='score held-out trials and print EER/ACC')
    score.add_argument('-k', '--checkpoint', required=True)
    score.add_argument('-i', '--input', required=True)
    score.add_argument('-m', '--models', help='speaker model JSON from enroll')
    score.add_argument('-o', '--output', help='trial CSV')

    det = sub.add_parser('det', help='DET curve from a trial CSV')
    det.add_argument('-t', '--trials', required=True)
    det.add_argument('-o', '--output', required=True)
    det.add_argument('--points', type=int, default=200)

    sweep = sub.add_parser('sweep', help='embedding dimension sweep')
    sweep.add_argument('-c', '--config', required=True)
    sweep.add_argument('-i', '--input', required=True)
    sweep.add_argument('--dims', type=_ints, default=[64, 128, 256, 512])
    sweep.add_argument('-o', '--output', help='directory for per-run outputs')

    ablate = sub.add_parser('ablate', help='ablation table')
    ablate.add_argument('-c', '--config', required=True)
    ablate.add_argument('-i', '--input', required=True)
    ablate.add_argument('--drop', type=_names, default=['gan', 'softmax', 'triplet'])
    ablate.add_argument('--sampling', type=_names, default=[])
    ablate.add_argument('--people', type=_ints, default=[])
    ablate.add_argument('--train-speakers', type=_ints, default=[])
    ablate.add_argument('-o', '--output', help='directory for per-run outputs')

    for command in [synth, extract, train, enroll, score, det, sweep, ablate]:
        command.add_argument('--seed', type=int)

    return parser


def _seed(args):

    if args.seed is not None:
        return args.seed

    env = os.environ.get('MTGAN_SEED')
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError('MTGAN_SEED Must Be An Integer: %s' % env)

    return None


def _client(args):

    seed = _seed(args)
    if getattr(args, 'config', None):
        return Mtgan.from_config_file(args.config, seed)

    return Mtgan(TrainConfig(seed=seed) if seed is not None else None)


def _percent(value):
    return '-' if value is None else '%.2f%%' % (100 * value)


def print_report(rows, columns=None, out=None):
    """
    Format result rows as an aligned text table. EER and ACC columns are shown as percentages.

    :param rows: List of mappings.
    :param columns: Column keys; the keys of the first row when omitted.
    :param out: Stream to write to (stdout by default).
    :return: The table text.
    """

    if not rows:
        return ''

    columns = columns or list(rows[0].keys())
    cells = [[str(c) for c in columns]]
    for row in rows:
        cells.append([_percent(row[c]) if c in ('eer', 'acc') else ('-' if row[c] is None else str(row[c]))
                      for c in columns])

    widths = [max(len(r[i]) for r in cells) for i in range(len(columns))]
    text = '\n'.join('  '.join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in cells) + '\n'

    (out or sys.stdout).write(text)
    return text


def _dispatch(args):

    client = _client(args)

    if args.command == 'synth':
        features = client.synthesize(args.speakers, args.utts, out=args.output, n_frames=args.size,
                                     n_mels=args.size)
        print('wrote %d slices for %d speakers to %s' % (len(features), features.n_classes, args.output))

    elif args.command == 'extract':
        features = client.extract(args.input, args.output, args.workers)
        print('wrote %d slices for %d speakers to %s' % (len(features), features.n_classes, args.output))

    elif args.command == 'train':
        result = client.train(client.load(args.input), args.output, args.resume)
        print('trained %d steps, checkpoint %s' % (result.state.step, result.checkpoint))

    elif args.command == 'enroll':
        models = client.enroll_speakers(args.checkpoint, client.load(args.input), args.output)
        print('enrolled %d speakers to %s' % (len(models), args.output))

    elif args.command == 'score':
        result = client.score(args.checkpoint, client.load(args.input), args.output, args.models)
        print('EER=%.2f%%, ACC=%.2f%%' % (100 * result.eer, 100 * result.acc))

    elif args.command == 'det':
        curve = client.det(TrialScoreSet.read_csv(args.trials), args.output, args.points)
        print('wrote %d DET points to %s' % (len(curve.points), args.output))

    elif args.command == 'sweep':
        print_report(client.sweep_embedding_dims(client.load(args.input), args.dims, args.output),
                     ['dim', 'eer', 'acc'])

    elif args.command == 'ablate':
        rows = client.ablate(client.load(args.input), args.drop, args.sampling, args.people, args.train_speakers,
                             args.output)
        print_report(rows, ['condition', 'eer', 'acc', 'convergence'])


def run(argv):
    """
    Execute one subcommand.

    :param argv: Argument list without the program name.
    :return: 0 on success, 1 for usage or configuration errors, 2 for runtime errors.
    """

    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        sys.stderr.write('mtgan: %s\n' % e)
        return EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )

    try:
        _dispatch(args)
    except ConfigError as e:
        sys.stderr.write('mtgan: %s\n' % e)
        return EXIT_USAGE
    except (MtganError, OSError, RuntimeError, ValueError) as e:
        sys.stderr.write('mtgan: %s\n' % e)
        return EXIT_RUNTIME

    return EXIT_OK


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == '__main__':
    main()
