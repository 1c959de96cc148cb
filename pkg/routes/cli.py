import argparse
from typing import Optional, Sequence

from controllers.data_controller import DataController
from controllers.experiment_controller import STUDIES, ExperimentController
from services.dataset_service import DatasetService
from services.evaluation_service import EvaluationService
from services.study_service import StudyService
from services.training_service import TrainingService
from utils.error_handlers import EXIT_USAGE, handle_cli_errors


def get_data_controller(app):
    """Create and return a DataController wired to the application settings."""
    dataset_service = DatasetService(num_workers=app.config.get('NUM_WORKERS', 0))
    return DataController(dataset_service=dataset_service, output_dir=app.output_dir)


def get_experiment_controller(app):
    """Create and return an ExperimentController with its services."""
    dataset_service = DatasetService(num_workers=app.config.get('NUM_WORKERS', 0))
    evaluation_service = EvaluationService(dtype=app.dtype, show_progress=app.show_progress)
    training_service = TrainingService(dataset_service, evaluation_service, dtype=app.dtype,
                                       show_progress=app.show_progress)
    study_service = StudyService(dataset_service, training_service, evaluation_service)
    return ExperimentController(
        dataset_service=dataset_service,
        training_service=training_service,
        evaluation_service=evaluation_service,
        study_service=study_service,
        output_dir=app.output_dir
    )


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='key=value file with dotted keys (loss.lambda_band=0.4)')
    parser.add_argument('--set', action='append', metavar='KEY=VALUE', help='override one config key')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--variant', help='Baseline, +GLTR, +BGC, +GCS-no-point or +GCS-point')
    parser.add_argument('--gate', help="gate preset: ca, ca-t0, ca-tb, ca-tb-t0 or 'unit'")
    parser.add_argument('--point-budget', type=float, dest='point_budget', help='fraction of pixels refined')
    parser.add_argument('--no-point-refine', action='store_true', dest='no_point_refine')
    parser.add_argument('--out', help='output directory')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='cstr', description='Cross-scale segmentation decoder toolkit')
    commands = parser.add_subparsers(dest='command', required=True)

    gen = commands.add_parser('gen-data', help='write a synthetic scene dataset')
    gen.add_argument('--seed', type=int, default=0)
    gen.add_argument('--count', type=int, default=200)
    gen.add_argument('--size', default='64x64', help='HxW, multiples of 16')
    gen.add_argument('--overlap', type=float, default=0.3)
    gen.add_argument('--noise-radius', type=int, default=0, dest='noise_radius',
                     help='perturb labels within this distance of a boundary')
    gen.add_argument('--flip-prob', type=float, dest='flip_prob')
    gen.add_argument('--out', help='output file')
    gen.set_defaults(handler='generate', controller=get_data_controller)

    remap = commands.add_parser('remap-data', help='group the fine labels of a RUGD or RELLIS-3D dataset file')
    remap.add_argument('--source', required=True, help='dataset file with fine label ids')
    remap.add_argument('--ontology', required=True, help='rugd or rellis3d')
    remap.add_argument('--out', help='output file')
    remap.set_defaults(handler='remap', controller=get_data_controller)

    train = commands.add_parser('train', help='train one model')
    _add_experiment_flags(train)
    train.add_argument('--data', help='training dataset file (default: generated)')
    train.add_argument('--eval-data', dest='eval_data', help='evaluation dataset file (default: generated)')
    train.add_argument('--name', help='run name used for checkpoint and CSV files')
    train.set_defaults(handler='train', controller=get_experiment_controller)

    evaluate = commands.add_parser('eval', help='evaluate a checkpoint')
    evaluate.add_argument('--checkpoint', required=True)
    evaluate.add_argument('--data', help='dataset file (default: the generated evaluation split)')
    evaluate.add_argument('--save-predictions', dest='save_predictions', metavar='PATH')
    evaluate.add_argument('--preview-dir', dest='preview_dir', metavar='DIR')
    evaluate.add_argument('--preview-limit', dest='preview_limit', type=int, default=16)
    evaluate.add_argument('--out', help='output directory')
    evaluate.set_defaults(handler='evaluate', controller=get_experiment_controller)

    ablate = commands.add_parser('ablate', help='incremental variant chain or gate presets')
    _add_experiment_flags(ablate)
    ablate.add_argument('--study', choices=STUDIES, default='variants')
    ablate.add_argument('--seeds', help='comma-separated seeds')
    ablate.add_argument('--variants', help='comma-separated subset of the variant chain')
    ablate.add_argument('--gates', help='comma-separated gate presets')
    ablate.set_defaults(handler='ablate', controller=get_experiment_controller)

    noise = commands.add_parser('noise-study', help='train on boundary-perturbed labels')
    _add_experiment_flags(noise)
    noise.add_argument('--radii', help='comma-separated radii (default 0,1,3,5)')
    noise.add_argument('--seeds', help='comma-separated seeds')
    noise.set_defaults(handler='noise_study', controller=get_experiment_controller)
    return parser


@handle_cli_errors
def dispatch(app, args) -> int:
    controller = args.controller(app)
    return getattr(controller, args.handler)(args)


def run(app, argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and run the command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else 0
    return dispatch(app, args)
