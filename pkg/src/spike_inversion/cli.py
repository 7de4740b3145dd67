'''
The ``spike-inversion`` command: ``train``, ``attack``,
``evaluate`` and ``export``.

Settings come from the ``[command]`` section of an optional
``--config`` file, overridden by flags. Exit codes:
0 success, 2 invalid configuration, 3 invalid or missing data,
4 training divergence, 5 attack divergence.
'''

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Final

from .artifacts import (
	export_grid, read_results, ResultSet,
	write_attack_summary, write_history, write_result
)
from .attacks import (
	AttackConfig, AttackDiverged, AttackResult,
	blv1_attack, blv2_attack, mi_face
)
from .config import (
	AttackMethod, AttackRunConfig, EvaluateRunConfig,
	ExportRunConfig, InvalidConfiguration, read_config_file,
	RunConfig, Scale, TrainRunConfig, validated, write_config_file
)
from .encoding import (
	bin_events, Dataset, EmptyEventStream, load_event_csv, load_mnist_idx,
	MalformedFile, NotBinary, PixelOutOfRange, shuffle_split,
	synth_dataset, synth_event_dataset
)
from .metrics import (
	AttackedClass, build_report, DuplicateClassGroup, MissingClassGroup,
	NoSamples
)
from .models import (
	build_model, ensure_compatible, load_checkpoint, Model,
	ModelSpec, preset, save_checkpoint, TrainingMetadata
)
from .tensors import (
	DimensionMismatch, FloatArray, InvalidLabel, NonFiniteValues
)
from .training import TrainingConfig, TrainingDiverged, train


logger = logging.getLogger(__name__)

EXIT_OK: Final = 0
EXIT_CONFIGURATION: Final = 2
EXIT_DATA: Final = 3
EXIT_TRAINING_DIVERGED: Final = 4
EXIT_ATTACK_DIVERGED: Final = 5

DEFAULT_EPOCHS: dict[Scale, int] = {'desk': 5, 'paper': 20}
DESK_TRAINING_SAMPLES = 10_000
DEFAULT_ITERATIONS = 2000
DEFAULT_LEARNING_RATE: dict[AttackMethod, float] = {
	'miface': 0.1, 'blv1': 0.01, 'blv2': 0.01
}

EFFECTIVE_CONFIG = 'effective-config.ini'
CHECKPOINT_NAME = 'model.blks'
LOG_FORMAT = '%(levelname)s %(name)s: %(message)s'

_DATA_ERRORS = (
	MalformedFile, EmptyEventStream, PixelOutOfRange, NotBinary,
	MissingClassGroup, DuplicateClassGroup, NoSamples, DimensionMismatch,
	InvalidLabel, OSError
)


def _add_command(
	commands: argparse._SubParsersAction[argparse.ArgumentParser], name: str
) -> argparse.ArgumentParser:
	parser = commands.add_parser(name, argument_default = argparse.SUPPRESS)
	
	parser.add_argument(
		'--config', type = Path, help = 'key = value settings file'
	)
	parser.add_argument('--seed')
	parser.add_argument('--out')
	parser.add_argument('--scale', help = 'desk or paper')
	parser.add_argument('--workers')
	
	return parser


def build_parser() -> argparse.ArgumentParser:
	'''
	Flags left out do not appear in the parsed namespace,
	so that config file values are only overridden by flags
	actually given.
	'''
	
	parser = argparse.ArgumentParser(
		prog = 'spike-inversion',
		description = 'Model inversion attacks on spiking neural networks.',
		argument_default = argparse.SUPPRESS
	)
	
	verbosity = parser.add_mutually_exclusive_group()
	verbosity.add_argument('-v', '--verbose', action = 'store_true')
	verbosity.add_argument('-q', '--quiet', action = 'store_true')
	
	commands = parser.add_subparsers(dest = 'command', required = True)
	
	training = _add_command(commands, 'train')
	training.add_argument(
		'--preset', help = 'snn-mlp, ann-mlp, snn-cnn or ann-cnn'
	)
	training.add_argument(
		'--dataset', help = 'mnist, synth, events or synth-events'
	)
	training.add_argument('--data-dir', dest = 'data_dir')
	training.add_argument('--epochs')
	training.add_argument('--batch-size', dest = 'batch_size')
	training.add_argument('--learning-rate', dest = 'learning_rate')
	training.add_argument('--classes')
	training.add_argument('--samples-per-class', dest = 'samples_per_class')
	training.add_argument('--image-size', dest = 'image_size')
	training.add_argument('--limit')
	training.add_argument(
		'--validation-fraction', dest = 'validation_fraction'
	)
	training.add_argument('--time-steps', dest = 'time_steps')
	training.add_argument('--hidden')
	training.add_argument('--decay')
	training.add_argument('--threshold')
	training.add_argument('--slope')
	training.add_argument('--posterior-mode', dest = 'posterior_mode')
	training.add_argument('--polarity')
	
	attacking = _add_command(commands, 'attack')
	attacking.add_argument('--method', help = 'miface, blv1 or blv2')
	attacking.add_argument('--target', help = 'target model checkpoint')
	attacking.add_argument(
		'--classes', help = '"all" or a comma-separated list'
	)
	attacking.add_argument('--iterations')
	attacking.add_argument('--K', dest = 'population', help = 'population size')
	attacking.add_argument('--xi', dest = 'sparsity', help = 'sparsity penalty')
	attacking.add_argument('--rho', dest = 'rms_decay', help = 'RMSProp decay')
	attacking.add_argument('--beta', dest = 'momentum', help = 'momentum')
	attacking.add_argument(
		'--eta', dest = 'learning_rate', help = 'learning rate'
	)
	attacking.add_argument(
		'--samples', help = 'reconstructions to emit per class'
	)
	attacking.add_argument('--patience')
	attacking.add_argument('--confidence-goal', dest = 'confidence_goal')
	attacking.add_argument(
		'--initial-probability', dest = 'initial_probability'
	)
	
	evaluating = _add_command(commands, 'evaluate')
	evaluating.add_argument('--evaluator', help = 'evaluation model checkpoint')
	evaluating.add_argument(
		'--results', nargs = '+', help = 'attack directories'
	)
	
	exporting = _add_command(commands, 'export')
	exporting.add_argument('--results', help = 'attack directory')
	exporting.add_argument('--format', help = 'pgm or png')
	exporting.add_argument('--rows')
	
	return parser


def configure_logging(verbose: bool, quiet: bool) -> None:
	'''
	Log to stderr; numeric outputs go to files and stdout.
	'''
	
	package = logging.getLogger(__package__ or 'spike_inversion')
	
	if not package.handlers:
		handler = logging.StreamHandler(sys.stderr)
		handler.setFormatter(logging.Formatter(LOG_FORMAT))
		package.addHandler(handler)
	
	if verbose:
		package.setLevel(logging.DEBUG)
	elif quiet:
		package.setLevel(logging.WARNING)
	else:
		package.setLevel(logging.INFO)


def settings_from(arguments: argparse.Namespace) -> RunConfig:
	'''
	Merge the config file section of the command with the given flags.
	
	:raise InvalidConfiguration: If a value is invalid or a key unknown.
	'''
	
	command: str = arguments.command
	flags = {
		key: value for key, value in vars(arguments).items()
		if key not in ('command', 'config', 'verbose', 'quiet')
	}
	
	config_file: Path | None = getattr(arguments, 'config', None)
	values: dict[str, Any] = {}
	
	if config_file is not None:
		values.update(read_config_file(config_file, command))
	
	values.update(flags)
	
	settings_class: type[RunConfig] = {
		'train': TrainRunConfig,
		'attack': AttackRunConfig,
		'evaluate': EvaluateRunConfig,
		'export': ExportRunConfig,
	}[command]
	
	return validated(settings_class, values)


def _idx_file(directory: Path, stem: str) -> Path:
	for candidate in (directory / stem, directory / f'{stem}.gz'):
		if candidate.exists():
			return candidate
	
	raise MalformedFile(directory / stem, 'not found')


def _event_dataset(settings: TrainRunConfig, directory: Path) -> Dataset:
	'''
	``<data_dir>/<label>/*.csv``, one recording per file.
	'''
	
	trains = []
	labels = sorted(
		(
			path for path in directory.iterdir()
			if path.is_dir() and path.name.isdigit()
		),
		key = lambda path: int(path.name)
	)
	
	for label_directory in labels:
		for path in sorted(label_directory.glob('*.csv')):
			stream = load_event_csv(path)
			train = bin_events(stream, settings.time_steps, settings.polarity)
			trains.append((train, int(label_directory.name)))
	
	if not trains:
		raise MalformedFile(directory, 'no <label>/*.csv recordings')
	
	return Dataset.from_spike_trains(trains[:settings.limit])


def load_dataset(settings: TrainRunConfig) -> Dataset:
	'''
	:raise InvalidConfiguration: If a dataset needing files has no ``data_dir``.
	'''
	
	kind = settings.dataset
	
	if kind in ('mnist', 'events') and settings.data_dir is None:
		raise InvalidConfiguration(f'The {kind} dataset needs data_dir')
	
	if kind == 'mnist':
		assert settings.data_dir is not None
		
		limit = settings.limit
		
		if limit is None and settings.scale == 'desk':
			limit = DESK_TRAINING_SAMPLES
		
		images = load_mnist_idx(
			_idx_file(settings.data_dir, 'train-images-idx3-ubyte'),
			_idx_file(settings.data_dir, 'train-labels-idx1-ubyte')
		)
		
		return Dataset.from_images(images[:limit])
	
	if kind == 'events':
		assert settings.data_dir is not None
		return _event_dataset(settings, settings.data_dir)
	
	if kind == 'synth':
		images = synth_dataset(
			settings.classes, settings.samples_per_class, settings.seed,
			size = settings.image_size
		)
		
		return Dataset.from_images(images[:settings.limit])
	
	recordings = synth_event_dataset(
		settings.classes, settings.samples_per_class, settings.seed,
		size = settings.image_size, windows = settings.time_steps
	)
	trains = [
		(bin_events(stream, settings.time_steps, settings.polarity), label)
		for stream, label in recordings
	]
	
	return Dataset.from_spike_trains(trains[:settings.limit])


def cmd_train(settings: TrainRunConfig) -> int:
	'''
	Train a model and write ``model.blks`` and ``history.csv``.
	'''
	
	dataset = load_dataset(settings)
	training_set, validation_set = shuffle_split(
		dataset, settings.validation_fraction, settings.seed
	)
	
	overrides: dict[str, Any] = {
		'time_steps': settings.time_steps,
		'decay': settings.decay,
		'threshold': settings.threshold,
		'slope': settings.slope,
		'posterior_mode': settings.posterior_mode,
	}
	
	if settings.hidden is not None:
		overrides['hidden'] = (settings.hidden,)
	
	spec = preset(
		settings.preset, settings.scale,
		dataset.frame_shape, dataset.classes, **overrides
	)
	epochs = settings.epochs or DEFAULT_EPOCHS[settings.scale]
	
	logger.info(
		'Training %s (%d parameters) on %d samples, %d held out',
		spec.kind, spec.parameter_count, len(training_set), len(validation_set)
	)
	
	config = TrainingConfig(
		epochs = epochs,
		batch_size = settings.batch_size,
		learning_rate = settings.learning_rate,
		seed = settings.seed
	)
	model, history = train(
		build_model(spec, settings.seed), training_set, config, validation_set
	)
	
	settings.out.mkdir(parents = True, exist_ok = True)
	
	save_checkpoint(model, settings.out / CHECKPOINT_NAME, TrainingMetadata(
		seed = settings.seed,
		epochs = epochs,
		validation_accuracy = history.final_accuracy,
		dataset = settings.dataset
	))
	write_history(settings.out / 'history.csv', history)
	write_config_file(
		settings.out / EFFECTIVE_CONFIG, 'train',
		settings.model_copy(update = {'epochs': epochs})
	)
	
	return EXIT_OK


def attacked_classes(selection: str, classes: int) -> list[int]:
	'''
	:raise InvalidConfiguration: \
		If ``selection`` is neither ``all`` nor a list of valid classes.
	'''
	
	if selection.strip() == 'all':
		return list(range(classes))
	
	try:
		chosen = [int(part) for part in selection.split(',') if part.strip()]
	except ValueError as error:
		message = f'Invalid class list {selection!r}'
		raise InvalidConfiguration(message) from error
	
	invalid = [label for label in chosen if not 0 <= label < classes]
	
	if not chosen or invalid:
		raise InvalidConfiguration(
			f'Classes must be "all" or values in [0, {classes}), '
			f'got {selection!r}'
		)
	
	return sorted(set(chosen))


_ATTACKS: dict[AttackMethod, Callable[[Model, AttackConfig], AttackResult]] = {
	'miface': mi_face,
	'blv1': blv1_attack,
	'blv2': blv2_attack,
}


def _attack_class(
	method: AttackMethod, target: Path, config: AttackConfig
) -> AttackResult:
	return _ATTACKS[method](load_checkpoint(target), config)


def _check_method(method: AttackMethod, model: Model) -> None:
	if method == 'miface' and model.spiking:
		raise InvalidConfiguration('MI-FACE needs a conventional (ANN) target')
	
	if method != 'miface' and not model.spiking:
		raise InvalidConfiguration(f'{method} needs a spiking (SNN) target')


def cmd_attack(settings: AttackRunConfig) -> int:
	'''
	Attack every selected class and write one result directory per class.
	'''
	
	model = load_checkpoint(settings.target)
	_check_method(settings.method, model)
	
	labels = attacked_classes(settings.classes, model.spec.classes)
	learning_rate = settings.learning_rate \
		or DEFAULT_LEARNING_RATE[settings.method]
	configs = [
		AttackConfig.create(
			target_class = label,
			iterations = settings.iterations if settings.iterations is not None
				else DEFAULT_ITERATIONS,
			population = settings.population,
			sparsity = settings.sparsity,
			rms_decay = settings.rms_decay,
			momentum = settings.momentum,
			learning_rate = learning_rate,
			seed = settings.seed ^ label,
			samples = settings.samples,
			patience = settings.patience,
			confidence_goal = settings.confidence_goal,
			initial_probability = settings.initial_probability
		)
		for label in labels
	]
	
	logger.info(
		'Attacking classes %s of %s with %s',
		labels, settings.target, settings.method
	)
	
	if settings.workers > 1 and len(configs) > 1:
		with ProcessPoolExecutor(max_workers = settings.workers) as pool:
			results = list(pool.map(
				_attack_class,
				[settings.method] * len(configs),
				[settings.target] * len(configs),
				configs
			))
	else:
		attack = _ATTACKS[settings.method]
		results = [attack(model, config) for config in configs]
	
	write_attack_summary(
		settings.out,
		method = settings.method,
		target = settings.target,
		seed = settings.seed,
		classes = labels,
		target_spec = model.spec.model_dump(mode = 'json')
	)
	
	for result in results:
		write_result(settings.out, result)
	
	write_config_file(settings.out / EFFECTIVE_CONFIG, 'attack', settings)
	
	return EXIT_OK


class _SeededEvaluator:
	'''
	Fixes the seed spiking evaluators rate-encode images with.
	'''
	
	__slots__ = ('_model', '_seed')
	
	def __init__(self, model: Model, seed: int) -> None:
		self._model = model
		self._seed = seed
	
	def posteriors(self, samples: FloatArray) -> FloatArray:
		return self._model.posteriors(samples, seed = self._seed)


def _runs(
	result_sets: Sequence[ResultSet], evaluator: Model
) -> list[list[AttackedClass]]:
	runs = []
	
	for results in result_sets:
		target_spec = ModelSpec.create(**results.target_spec)
		ensure_compatible(target_spec, evaluator.spec)
		runs.append(list(results.classes))
	
	return runs


def cmd_evaluate(settings: EvaluateRunConfig) -> int:
	'''
	Score attack directories and write ``report.json``,
	``report.csv`` and ``report.txt``; print the summary.
	'''
	
	if not settings.results:
		raise InvalidConfiguration('No result directories given')
	
	evaluator = load_checkpoint(settings.evaluator)
	result_sets = [read_results(path) for path in settings.results]
	methods = {results.method for results in result_sets}
	
	report = build_report(
		_SeededEvaluator(evaluator, settings.seed),
		_runs(result_sets, evaluator),
		evaluator_name = str(settings.evaluator),
		method = methods.pop() if len(methods) == 1 else None,
		targets = [results.target for results in result_sets],
		seeds = [results.seed for results in result_sets]
	)
	
	settings.out.mkdir(parents = True, exist_ok = True)
	
	reports = {
		'report.json': report.to_json() + '\n',
		'report.csv': report.to_csv(),
		'report.txt': report.summary(),
	}
	
	for name, content in reports.items():
		(settings.out / name).write_text(content, encoding = 'utf-8')
	
	write_config_file(settings.out / EFFECTIVE_CONFIG, 'evaluate', settings)
	
	sys.stdout.write(report.summary())
	
	return EXIT_OK


def cmd_export(settings: ExportRunConfig) -> int:
	'''
	Write a grid of the classes' first reconstructions to ``out``,
	and the effective settings next to it.
	'''
	
	results = read_results(settings.results)
	grid = export_grid(results, settings.out, settings.format, settings.rows)
	
	write_config_file(settings.out.with_suffix('.ini'), 'export', settings)
	logger.info('Wrote a %d×%d grid to %s', *grid.shape, settings.out)
	
	return EXIT_OK


def run(settings: RunConfig) -> int:
	if isinstance(settings, TrainRunConfig):
		return cmd_train(settings)
	
	if isinstance(settings, AttackRunConfig):
		return cmd_attack(settings)
	
	if isinstance(settings, EvaluateRunConfig):
		return cmd_evaluate(settings)
	
	assert isinstance(settings, ExportRunConfig)
	return cmd_export(settings)


def exit_code(error: Exception) -> int | None:
	'''
	The exit code reporting ``error``, or ``None`` for unexpected errors.
	'''
	
	if isinstance(error, AttackDiverged):
		return EXIT_ATTACK_DIVERGED
	
	if isinstance(error, (TrainingDiverged, NonFiniteValues)):
		return EXIT_TRAINING_DIVERGED
	
	if isinstance(error, InvalidConfiguration):
		return EXIT_CONFIGURATION
	
	if isinstance(error, _DATA_ERRORS):
		return EXIT_DATA
	
	return None


def main(argv: Sequence[str] | None = None) -> int:
	parser = build_parser()
	
	try:
		arguments = parser.parse_args(argv)
	except SystemExit as exit:
		return exit.code if isinstance(exit.code, int) else EXIT_CONFIGURATION
	
	configure_logging(
		getattr(arguments, 'verbose', False), getattr(arguments, 'quiet', False)
	)
	
	try:
		return run(settings_from(arguments))
	except Exception as error:
		code = exit_code(error)
		
		if code is None:
			raise
		
		logger.error('%s', error)
		
		return code

