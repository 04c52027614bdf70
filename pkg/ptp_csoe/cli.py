import argparse
import copy
import json
import logging
import os
import sys
from typing import Sequence
from dotenv import load_dotenv
from ptp_csoe.config import load_config
from ptp_csoe.queue_sim import CANONICAL_LOADS
from ptp_csoe.runner import ExperimentRunner
from ptp_csoe.types import ExperimentInfo, ExperimentName
from ptp_csoe.utils import _in_literal, to_seconds


def build_parser() -> argparse.ArgumentParser:
    load_dotenv()

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML file with an experiment or a base scenario')
    common.add_argument('--experiment', default='convergence', help='Name of a preset experiment')
    common.add_argument('--out', default=os.getenv('PTP_CSOE_OUT', 'out'), help='Output directory')
    common.add_argument('--seed', type=int, help='Root seed of the experiment')
    common.add_argument('--trials', type=int, help='Trials per configuration point')
    common.add_argument('--threads', type=int, default=int(os.getenv('PTP_CSOE_THREADS', '1')),
                        help='Number of parallel workers')
    common.add_argument('--log-level', default=os.getenv('PTP_CSOE_LOG_LEVEL', 'WARNING'),
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])

    parser = argparse.ArgumentParser(prog='ptp-csoe', description='Robust PTP clock skew and offset estimation')
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate-delays', parents=[common], help='Write queuing-delay histograms')
    simulate.add_argument('--loads', type=float, nargs='+', default=list(CANONICAL_LOADS))
    simulate.add_argument('--samples', type=int, default=1_000_000)
    simulate.add_argument('--bin-width-us', type=float, default=0.1)

    commands.add_parser('run', parents=[common], help='Run the base scenario of an experiment')
    commands.add_parser('sweep', parents=[common], help='Run every configuration point of an experiment')
    commands.add_parser('genie-only', parents=[common], help='Sweep with the genie estimator only')
    return parser


def _experiment_info(args: argparse.Namespace) -> ExperimentName | ExperimentInfo:
    if not _in_literal(args.experiment, ExperimentName):
        raise ValueError(f'Unknown experiment {args.experiment!r}, choose from '
                         f'{sorted(ExperimentRunner.get_experiment_map())}')

    info = copy.deepcopy(ExperimentRunner.get_experiment_map()[args.experiment])
    if args.config is not None:
        document = load_config(args.config)
        if 'scenario' in document:
            info = document
        else:
            info['scenario'] = document

    if args.command == 'run':
        info.pop('sweep', None)
    return info


def _execute(args: argparse.Namespace):
    runner = ExperimentRunner(
        _experiment_info(args),
        trials=args.trials,
        seed=args.seed,
        estimators=['genie'] if args.command == 'genie-only' else None,
        out_dir=args.out,
        threads=args.threads
    )

    if args.command == 'simulate-delays':
        runner.simulate_delays(args.loads, args.samples, to_seconds(args.bin_width_us))
    else:
        runner.run()


def main(argv: Sequence[str] | None = None) -> int:
    """
    Entry point of the ptp-csoe command. Returns the exit status; errors are reported as one JSON line on stderr
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    try:
        _execute(args)
    except Exception as error:
        print(json.dumps({'error': type(error).__name__, 'message': str(error)}), file=sys.stderr)
        return 1

    return 0
