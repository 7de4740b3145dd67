'''
Files written and read by the command-line interface.

An attack writes one directory::

	<out>/attack.json
	<out>/class-<y>/result.json
	<out>/class-<y>/loss-trace.csv
	<out>/class-<y>/bernoulli-params.npy      (BL-v2 only)
	<out>/class-<y>/samples/sample-000.csv    (spike rasters)
	<out>/class-<y>/samples/sample-000.npy    (pixel images)
	<out>/class-<y>/samples/sample-000.pgm    (time-averaged image)
'''

from __future__ import annotations

import csv
import json
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from .attacks import AttackResult
from .config import ImageFormat
from .encoding import MalformedFile, SpikeTrain
from .metrics import AttackedClass, MissingClassGroup, NoSamples
from .tensors import FloatArray, Tensor
from .training import TrainingHistory


RESULT_FORMAT_VERSION = 1

_IMAGE_FORMATS: dict[ImageFormat, str] = {'pgm': 'PPM', 'png': 'PNG'}


def write_spike_csv(path: Path, spikes: SpikeTrain) -> None:
	'''
	Write one ``t,feature,value`` row per spike, after
	a comment line carrying the shape of the train.
	'''
	
	shape = f'{spikes.time_steps},{spikes.features}'
	frame = ','.join(str(extent) for extent in spikes.frame_shape)
	times, features = np.nonzero(spikes.data.data)
	
	with path.open('w', encoding = 'utf-8', newline = '') as file:
		file.write(f'# shape={shape} frame={frame}\n')
		
		writer = csv.writer(file, lineterminator = '\n')
		writer.writerow(['t', 'feature', 'value'])
		writer.writerows((int(t), int(f), 1) for t, f in zip(times, features))


def _parse_shape_line(
	path: Path, line: str
) -> tuple[tuple[int, int], tuple[int, ...]]:
	try:
		fields = dict(part.split('=', 1) for part in line.lstrip('#').split())
		shape = fields['shape'].split(',')
		time_steps, features = (int(value) for value in shape)
		frame = tuple(int(value) for value in fields['frame'].split(','))
	except (KeyError, ValueError) as error:
		raise MalformedFile(path, 'missing or invalid shape line', 1) from error
	
	return (time_steps, features), frame


def read_spike_csv(path: Path) -> SpikeTrain:
	'''
	:raise MalformedFile: \
		If the shape line, the header or a row is invalid.
	'''
	
	try:
		lines = path.read_text(encoding = 'utf-8').splitlines()
	except OSError as error:
		raise MalformedFile(path, f'cannot be read ({error})') from error
	
	if len(lines) < 2:
		raise MalformedFile(path, 'truncated file')
	
	(time_steps, features), frame = _parse_shape_line(path, lines[0])
	
	if lines[1].strip() != 't,feature,value':
		raise MalformedFile(path, 'expected the header t,feature,value', 2)
	
	spikes = np.zeros((time_steps, features))
	
	for number, row in enumerate(csv.reader(lines[2:]), start = 3):
		try:
			t, feature, value = (int(field) for field in row)
		except ValueError as error:
			message = 'expected three integers'
			raise MalformedFile(path, message, number) from error
		
		if value != 1 or not (0 <= t < time_steps and 0 <= feature < features):
			raise MalformedFile(path, f'invalid spike {row}', number)
		
		spikes[t, feature] = 1.0
	
	try:
		return SpikeTrain(Tensor(spikes), frame)
	except ValueError as error:
		raise MalformedFile(path, str(error)) from error


def to_image(sample: FloatArray, frame_shape: Sequence[int]) -> FloatArray:
	'''
	The first channel of a sample as a ``[h×w]`` image in ``[0, 1]``;
	spike trains (``[T×features]``) are time-averaged first.
	'''
	
	values = np.asarray(sample, dtype = np.float64)
	
	if values.ndim == 2:
		values = values.mean(axis = 0)
	
	frame = values.reshape(tuple(frame_shape))
	
	if frame.ndim == 1:
		side = math.isqrt(frame.size)
		frame = frame.reshape(side, side) if side * side == frame.size \
			else frame.reshape(1, -1)
	elif frame.ndim == 3:
		frame = frame[0]
	
	return frame


def to_gray(image: FloatArray) -> np.ndarray[Any, np.dtype[np.uint8]]:
	'''
	Intensities in ``[0, 1]`` scaled to ``0 - 255`` and rounded.
	'''
	
	return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(
	path: Path, image: FloatArray, format: ImageFormat = 'pgm'
) -> None:
	'''
	Write an 8-bit grayscale image: binary PGM (P5) or PNG.
	'''
	
	pillow_format = _IMAGE_FORMATS[format]
	Image.fromarray(to_gray(image)).save(path, format = pillow_format)


def read_image(path: Path) -> np.ndarray[Any, np.dtype[np.uint8]]:
	try:
		with Image.open(path) as image:
			return np.asarray(image.convert('L'), dtype = np.uint8)
	except OSError as error:
		raise MalformedFile(path, f'not a readable image ({error})') from error


def compose_grid(images: Sequence[FloatArray], rows: int = 1) -> FloatArray:
	'''
	Tile same-sized images row-major on a ``rows`` high grid.
	'''
	
	if not images:
		raise NoSamples('images')
	
	height, width = images[0].shape
	columns = math.ceil(len(images) / rows)
	grid = np.zeros((rows * height, columns * width))
	
	for index, image in enumerate(images):
		row, column = divmod(index, columns)
		top, left = row * height, column * width
		grid[top:top + height, left:left + width] = image
	
	return grid


def write_loss_trace(path: Path, trace: Sequence[float]) -> None:
	with path.open('w', encoding = 'utf-8', newline = '') as file:
		writer = csv.writer(file, lineterminator = '\n')
		writer.writerow(['iteration', 'loss'])
		writer.writerows(
			(index, repr(loss)) for index, loss in enumerate(trace)
		)


def write_history(path: Path, history: TrainingHistory) -> None:
	with path.open('w', encoding = 'utf-8', newline = '') as file:
		writer = csv.writer(file, lineterminator = '\n')
		writer.writerow(['epoch', 'loss', 'validation_accuracy'])
		
		for record in history.epochs:
			accuracy = '' if record.validation_accuracy is None \
				else repr(record.validation_accuracy)
			writer.writerow([record.epoch, repr(record.loss), accuracy])


def class_directory(out: Path, label: int) -> Path:
	return out / f'class-{label}'


def write_json(path: Path, content: dict[str, Any]) -> None:
	text = json.dumps(content, indent = 2, sort_keys = True)
	path.write_text(text + '\n', encoding = 'utf-8')


def _read_json(path: Path) -> dict[str, Any]:
	try:
		content = json.loads(path.read_text(encoding = 'utf-8'))
	except (OSError, UnicodeDecodeError, json.JSONDecodeError) as error:
		raise MalformedFile(path, f'not readable JSON ({error})') from error
	
	if not isinstance(content, dict):
		raise MalformedFile(path, 'expected a JSON object')
	
	return content


def write_attack_summary(
	out: Path, *,
	method: str, target: Path, seed: int,
	classes: Sequence[int], target_spec: dict[str, Any]
) -> None:
	out.mkdir(parents = True, exist_ok = True)
	write_json(out / 'attack.json', {
		'format_version': RESULT_FORMAT_VERSION,
		'method': method,
		'target': str(target),
		'target_spec': target_spec,
		'seed': seed,
		'classes': list(classes),
	})


def write_result(out: Path, result: AttackResult) -> Path:
	'''
	Write the files of one attacked class and return their directory.
	'''
	
	directory = class_directory(out, result.target_class)
	samples = directory / 'samples'
	samples.mkdir(parents = True, exist_ok = True)
	
	frame_shape = result.frame_shape
	
	for index, sample in enumerate(result.samples):
		stem = samples / f'sample-{index:03d}'
		
		if result.spiking:
			spikes = SpikeTrain(Tensor(sample), frame_shape)
			write_spike_csv(stem.with_suffix('.csv'), spikes)
		else:
			np.save(stem.with_suffix('.npy'), sample)
		
		write_image(stem.with_suffix('.pgm'), to_image(sample, frame_shape))
	
	if result.method == 'blv2':
		np.save(directory / 'bernoulli-params.npy', result.reconstruction.data)
	
	write_loss_trace(directory / 'loss-trace.csv', result.loss_trace)
	write_json(directory / 'result.json', {
		'method': result.method,
		'target_class': result.target_class,
		'iterations': result.iterations,
		'confidence': result.confidence,
		'peak_confidence': result.peak_confidence,
		'samples': len(result.samples),
		'frame_shape': list(result.frame_shape),
	})
	
	return directory


@dataclass(frozen = True, slots = True)
class ResultSet:
	'''
	An attack directory read back.
	'''
	
	path: Path
	method: str
	target: str
	seed: int
	target_spec: dict[str, Any]
	frame_shape: tuple[int, ...]
	classes: tuple[AttackedClass, ...]


def _read_samples(directory: Path, spiking: bool) -> FloatArray:
	pattern = 'sample-*.csv' if spiking else 'sample-*.npy'
	paths = sorted((directory / 'samples').glob(pattern))
	
	if spiking:
		samples = [read_spike_csv(path).data.data for path in paths]
	else:
		samples = [_load_array(path) for path in paths]
	
	return np.stack(samples) if samples else np.zeros((0,))


def _load_array(path: Path) -> FloatArray:
	try:
		array: FloatArray = np.load(path, allow_pickle = False) \
			.astype(np.float64)
	except (OSError, ValueError) as error:
		raise MalformedFile(path, f'not a readable array ({error})') from error
	
	return array


def read_results(path: Path) -> ResultSet:
	'''
	Read an attack directory.
	
	:raise MalformedFile: If ``attack.json`` or a class file is unreadable.
	:raise MissingClassGroup: If an attacked class has no results.
	'''
	
	summary = _read_json(path / 'attack.json')
	
	try:
		method = str(summary['method'])
		labels = [int(label) for label in summary['classes']]
		spec = dict(summary['target_spec'])
		frame_shape = tuple(int(extent) for extent in spec['input_shape'])
	except (KeyError, TypeError, ValueError) as error:
		message = f'missing or invalid field {error}'
		raise MalformedFile(path / 'attack.json', message) from error
	
	classes = []
	
	for label in labels:
		directory = class_directory(path, label)
		
		if not directory.is_dir():
			raise MissingClassGroup(label)
		
		result = _read_json(directory / 'result.json')
		samples = _read_samples(directory, spiking = method != 'miface')
		
		if not len(samples):
			raise MissingClassGroup(label)
		
		classes.append(AttackedClass(
			label = label,
			samples = samples,
			target_confidence = result.get('confidence'),
			peak_confidence = result.get('peak_confidence')
		))
	
	return ResultSet(
		path = path,
		method = method,
		target = str(summary.get('target', '')),
		seed = int(summary.get('seed', 0)),
		target_spec = spec,
		frame_shape = frame_shape,
		classes = tuple(classes)
	)


def export_grid(
	results: ResultSet, path: Path,
	format: ImageFormat = 'pgm', rows: int = 1
) -> FloatArray:
	'''
	Write the first reconstruction of every class, time-averaged,
	as one grid image and return the grid.
	'''
	
	images = [
		to_image(attacked.samples[0], results.frame_shape)
		for attacked in results.classes
	]
	
	grid = compose_grid(images, rows)
	path.parent.mkdir(parents = True, exist_ok = True)
	write_image(path, grid, format)
	
	return grid
