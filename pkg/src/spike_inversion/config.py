'''
Validated settings and the ``key = value`` files they are read from.

Every settings class forbids unknown keys and is frozen once built.
Validation failures surface as :class:`InvalidConfiguration`, which the
command-line interface turns into exit code 2.
'''

from __future__ import annotations

import configparser
from collections.abc import Mapping
from pathlib import Path
from typing import Annotated, Literal, TypeVar

from pydantic import (
	BaseModel, BeforeValidator, ConfigDict, Field,
	PositiveFloat, PositiveInt, ValidationError, field_validator
)


_Settings = TypeVar('_Settings', bound = BaseModel)

Scale = Literal['desk', 'paper']
ModelKind = Literal['snn-mlp', 'ann-mlp', 'snn-cnn', 'ann-cnn']
PosteriorMode = Literal['summed', 'mean-step']
AttackMethod = Literal['miface', 'blv1', 'blv2']
DatasetKind = Literal['mnist', 'synth', 'events', 'synth-events']
ImageFormat = Literal['pgm', 'png']

COMMANDS = ('train', 'attack', 'evaluate', 'export')


class InvalidConfiguration(ValueError):
	'''
	Raised when a setting, a model specification or
	a combination of them cannot be used.
	'''
	
	pass


class Settings(BaseModel):
	'''
	Base class of all validated settings.
	'''
	
	model_config = ConfigDict(
		extra = 'forbid',
		frozen = True,
		protected_namespaces = ()
	)


def _describe(error: ValidationError) -> str:
	problems = []
	
	for detail in error.errors():
		location = '.'.join(str(part) for part in detail['loc']) or 'value'
		problems.append(f'{location}: {detail["msg"]}')
	
	return '; '.join(problems)


def validated(
	settings_class: type[_Settings],
	values: Mapping[str, object]
) -> _Settings:
	'''
	Build ``settings_class`` from ``values``.
	
	:raise InvalidConfiguration: \
		If any value is invalid or any key is unrecognized.
	'''
	
	try:
		return settings_class.model_validate(dict(values))
	except ValidationError as error:
		name = settings_class.__name__
		raise InvalidConfiguration(f'{name}: {_describe(error)}') from error


def _split_paths(value: object) -> object:
	if isinstance(value, str):
		return tuple(part.strip() for part in value.split(',') if part.strip())
	
	return value


class RunConfig(Settings):
	'''
	Settings shared by every command.
	'''
	
	seed: int = 0
	out: Path
	scale: Scale = 'desk'
	workers: PositiveInt = 1


class TrainRunConfig(RunConfig):

	preset: ModelKind
	dataset: DatasetKind
	data_dir: Path | None = None
	epochs: PositiveInt | None = None
	batch_size: PositiveInt = 64
	learning_rate: PositiveFloat = 1e-3
	classes: Annotated[int, Field(ge = 2)] = 10
	samples_per_class: PositiveInt = 100
	image_size: Annotated[int, Field(ge = 8)] = 20
	limit: PositiveInt | None = None
	validation_fraction: Annotated[float, Field(gt = 0, lt = 1)] = 0.1
	time_steps: PositiveInt = 25
	hidden: PositiveInt | None = None
	decay: Annotated[float, Field(ge = 0, le = 1)] = 0.7
	threshold: PositiveFloat = 1.0
	slope: PositiveFloat = 40.0
	posterior_mode: PosteriorMode = 'summed'
	polarity: int = 1
	
	@field_validator('polarity')
	@classmethod
	def _polarity_is_signed_unit(cls, value: int) -> int:
		if value not in (1, -1):
			raise ValueError('polarity must be +1 or -1')
		
		return value


class AttackRunConfig(RunConfig):

	method: AttackMethod
	target: Path
	classes: str = 'all'
	iterations: Annotated[int, Field(ge = 0)] | None = None
	population: PositiveInt = 8
	sparsity: Annotated[float, Field(ge = 0)] = 0.0
	rms_decay: Annotated[float, Field(ge = 0, lt = 1)] = 0.9
	momentum: Annotated[float, Field(ge = 0, lt = 1)] = 0.9
	learning_rate: PositiveFloat | None = None
	samples: PositiveInt = 20
	patience: PositiveInt = 20
	confidence_goal: Annotated[float, Field(gt = 0, le = 1)] = 0.99
	initial_probability: Annotated[float, Field(ge = 0, le = 1)] = 0.5


class EvaluateRunConfig(RunConfig):

	evaluator: Path
	results: Annotated[tuple[Path, ...], BeforeValidator(_split_paths)]


class ExportRunConfig(RunConfig):

	results: Path
	format: ImageFormat = 'pgm'
	rows: PositiveInt = 1


def read_config_file(path: Path, section: str) -> dict[str, str]:
	'''
	Read the ``[section]`` of a ``key = value`` file.
	A file may carry sections for several commands;
	sections other than those of known commands are rejected.
	
	:raise InvalidConfiguration: \
		If the file cannot be parsed or names an unknown section.
	'''
	
	parser = configparser.ConfigParser(interpolation = None)
	
	try:
		with path.open(encoding = 'utf-8') as file:
			parser.read_file(file)
	except (OSError, configparser.Error) as error:
		raise InvalidConfiguration(f'Cannot read {path}: {error}') from error
	
	unknown = [name for name in parser.sections() if name not in COMMANDS]
	
	if unknown:
		raise InvalidConfiguration(f'Unknown config sections: {unknown}')
	
	if not parser.has_section(section):
		return {}
	
	return dict(parser.items(section))


def _to_text(value: object) -> str:
	if isinstance(value, bool):
		return 'true' if value else 'false'
	
	if isinstance(value, (list, tuple)):
		return ', '.join(_to_text(element) for element in value)
	
	return str(value)


def write_config_file(path: Path, section: str, settings: BaseModel) -> None:
	'''
	Persist the effective ``settings`` of a command so that
	feeding the file back with ``--config`` reproduces the run.
	'''
	
	values = settings.model_dump(mode = 'json', exclude_none = True)
	
	parser = configparser.ConfigParser(interpolation = None)
	parser[section] = {key: _to_text(value) for key, value in values.items()}
	
	with path.open('w', encoding = 'utf-8', newline = '\n') as file:
		parser.write(file)
