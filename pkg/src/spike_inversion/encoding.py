'''
Input pipelines: spike trains and how they are made.

Static images become spike trains through :func:`rate_encode`,
event-camera recordings through :func:`bin_events`. Readers for
MNIST's IDX files and for ``x,y,t,polarity`` event CSV files, and
seeded synthetic fixtures, produce the raw material.
'''

from __future__ import annotations

import csv
import gzip
import math
import struct
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, NamedTuple

import numpy as np

from .config import InvalidConfiguration
from .tensors import FloatArray, IntArray, Tensor


Geometry = Literal['bars', 'blobs']

_IMAGES_MAGIC = 0x00000803
_LABELS_MAGIC = 0x00000801


class NotBinary(ValueError):
	'''
	Raised when values that must be spikes are not all 0 or 1.
	'''
	
	def __init__(self, where: str) -> None:
		super().__init__(f'Expected only 0 and 1 in {where}')


class PixelOutOfRange(ValueError):
	'''
	Raised when a pixel intensity is outside ``[0, 1]``.
	'''
	
	def __init__(self, lowest: float, highest: float) -> None:
		super().__init__(
			f'Expected pixels in [0, 1], got values in [{lowest}, {highest}]'
		)


class EmptyEventStream(ValueError):
	'''
	Raised when an event stream to be binned has no events.
	'''
	
	def __init__(self) -> None:
		super().__init__('Cannot bin an empty event stream')


class MalformedFile(ValueError):
	'''
	Raised when a dataset or artifact file does not follow its format.
	Nothing read from such a file is returned.
	'''
	
	def __init__(
		self, path: Path | str, reason: str, line: int | None = None
	) -> None:
		location = f'{path}, line {line}' if line is not None else f'{path}'
		
		super().__init__(f'{location}: {reason}')
		
		self.path = Path(path)
		self.line = line


def is_binary(array: FloatArray) -> bool:
	return bool(np.all((array == 0.0) | (array == 1.0)))


def require_binary(array: FloatArray, where: str) -> None:
	if not is_binary(array):
		raise NotBinary(where)


@dataclass(frozen = True, slots = True)
class SpikeTrain:
	'''
	Binary spikes over ``[time × features]``. ``frame_shape``
	gives the layout of one time step's features, such as
	``(1, 28, 28)`` for a rate-encoded MNIST digit.
	'''
	
	data: Tensor
	frame_shape: tuple[int, ...]
	
	def __post_init__(self) -> None:
		if len(self.data.shape) != 2:
			raise InvalidConfiguration(
				f'Expected [time × features] spikes, got {self.data.shape}'
			)
		
		if math.prod(self.frame_shape) != self.data.shape[1]:
			raise InvalidConfiguration(
				f'Frame shape {self.frame_shape} does not hold '
				f'{self.data.shape[1]} features'
			)
		
		require_binary(self.data.data, 'spike train')
	
	@classmethod
	def from_array(
		cls, array: FloatArray,
		frame_shape: Sequence[int] | None = None
	) -> SpikeTrain:
		'''
		Build a spike train from ``[T × features]``
		or ``[T × *frame]`` values.
		'''
		
		values = np.asarray(array, dtype = np.float64)
		time_steps = values.shape[0]
		
		if frame_shape is None:
			frame_shape = values.shape[1:] if values.ndim > 2 \
				else (values.shape[1],)
		
		flat = values.reshape(time_steps, -1)
		
		return cls(Tensor(flat), tuple(frame_shape))
	
	@property
	def time_steps(self) -> int:
		return self.data.shape[0]
	
	@property
	def features(self) -> int:
		return self.data.shape[1]
	
	@property
	def spike_count(self) -> int:
		return int(self.data.data.sum())
	
	def rate_decode(self) -> FloatArray:
		'''
		The time-averaged firing rate of every feature, in ``[0, 1]``.
		'''
		
		decoded: FloatArray = self.data.data.mean(axis = 0)
		
		return decoded


@dataclass(frozen = True, slots = True)
class StaticImage:
	'''
	A labeled grayscale image with intensities in ``[0, 1]``.
	'''
	
	pixels: Tensor
	label: int
	
	def __post_init__(self) -> None:
		values = self.pixels.data
		
		if values.size and (values.min() < 0.0 or values.max() > 1.0):
			raise PixelOutOfRange(float(values.min()), float(values.max()))
		
		if self.label < 0:
			raise InvalidConfiguration(f'Negative label {self.label}')
	
	@property
	def frame_shape(self) -> tuple[int, ...]:
		shape = self.pixels.shape
		
		return (1, *shape) if len(shape) == 2 else shape


class Event(NamedTuple):
	x: int
	y: int
	t: int
	polarity: int


@dataclass(frozen = True, slots = True)
class EventStream:
	'''
	Events of a ``width × height`` sensor, ordered by timestamp
	(microseconds).
	'''
	
	events: tuple[Event, ...]
	width: int
	height: int
	
	def __post_init__(self) -> None:
		previous = None
		
		for event in self.events:
			if not (0 <= event.x < self.width and 0 <= event.y < self.height):
				raise InvalidConfiguration(
					f'Event {event} outside a '
					f'{self.width}×{self.height} sensor'
				)
			
			if event.polarity not in (1, -1):
				raise InvalidConfiguration(f'Event {event} has polarity 0')
			
			if previous is not None and event.t < previous:
				raise InvalidConfiguration('Events are not ordered by time')
			
			previous = event.t
	
	def __len__(self) -> int:
		return len(self.events)
	
	@classmethod
	def sorted(
		cls, events: Sequence[Event], width: int, height: int
	) -> EventStream:
		ordered = sorted(events, key = lambda event: event.t)
		
		return cls(tuple(ordered), width, height)


def _check_pixels(pixels: FloatArray) -> None:
	if pixels.size and (pixels.min() < 0.0 or pixels.max() > 1.0):
		raise PixelOutOfRange(float(pixels.min()), float(pixels.max()))


def rate_encode(image: StaticImage, time_steps: int, seed: int) -> SpikeTrain:
	'''
	Each pixel of intensity ``p`` fires an independent
	``Bernoulli(p)`` spike at every one of ``time_steps`` steps.
	'''
	
	if time_steps < 1:
		raise InvalidConfiguration(
			f'time_steps must be ≥ 1, got {time_steps}'
		)
	
	rng = np.random.default_rng(seed)
	pixels = image.pixels.data.reshape(-1)
	spikes = rng.random((time_steps, pixels.size)) < pixels
	
	return SpikeTrain(Tensor(spikes), image.frame_shape)


def rate_encode_batch(
	pixels: FloatArray, time_steps: int,
	rng: np.random.Generator
) -> FloatArray:
	'''
	Rate-encode ``[B × features]`` intensities into
	``[T × B × features]`` spikes drawn from ``rng``.
	
	:raise PixelOutOfRange: If an intensity is outside ``[0, 1]``.
	'''
	
	_check_pixels(pixels)
	
	draws = rng.random((time_steps, *pixels.shape))
	spikes: FloatArray = (draws < pixels).astype(np.float64)
	
	return spikes


def _downsample(occupancy: FloatArray, factor: int) -> FloatArray:
	time_steps, height, width = occupancy.shape
	
	if height % factor or width % factor:
		raise InvalidConfiguration(
			f'Sensor {width}×{height} is not divisible by {factor}'
		)
	
	pooled = occupancy.reshape(
		time_steps, height // factor, factor, width // factor, factor
	).mean(axis = (2, 4))
	
	result: FloatArray = (pooled >= 0.5).astype(np.float64)
	
	return result


def bin_events(
	stream: EventStream, time_steps: int,
	polarity: int = 1, *,
	downsample: int = 1
) -> SpikeTrain:
	'''
	Split ``[t_min, t_max]`` into ``time_steps`` equal windows (the last
	one closed on the right) and set voxel ``(window, y, x)`` to 1 when
	at least one event of the retained ``polarity`` falls in it.
	
	With ``downsample > 1``, each window is average-pooled over
	``downsample × downsample`` blocks and thresholded at 0.5.
	
	:raise EmptyEventStream: If ``stream`` has no events.
	'''
	
	if time_steps < 1:
		raise InvalidConfiguration(
			f'time_steps must be ≥ 1, got {time_steps}'
		)
	
	if not stream.events:
		raise EmptyEventStream
	
	table = np.array(stream.events, dtype = np.int64).reshape(-1, 4)
	start, stop = table[0, 2], table[-1, 2]
	duration = max(int(stop - start), 1)
	
	windows = ((table[:, 2] - start) * time_steps) // duration
	windows = np.minimum(windows, time_steps - 1)
	
	retained = table[:, 3] == polarity
	occupancy = np.zeros((time_steps, stream.height, stream.width))
	occupancy[windows[retained], table[retained, 1], table[retained, 0]] = 1.0
	
	if downsample > 1:
		occupancy = _downsample(occupancy, downsample)
	
	_, height, width = occupancy.shape
	
	spikes = Tensor(occupancy.reshape(time_steps, -1))
	
	return SpikeTrain(spikes, (1, height, width))


def downsample_events(
	stream: EventStream, factor: int,
	time_steps: int, polarity: int = 1
) -> SpikeTrain:
	'''
	Bin ``stream`` at a resolution reduced by ``factor`` along both axes.
	'''
	
	if factor < 1:
		raise InvalidConfiguration(
			f'Downsampling factor must be ≥ 1, got {factor}'
		)
	
	return bin_events(stream, time_steps, polarity, downsample = factor)


def _open_binary(path: Path) -> bytes:
	try:
		if path.suffix == '.gz':
			with gzip.open(path, 'rb') as file:
				return file.read()
		
		return path.read_bytes()
	except OSError as error:
		raise MalformedFile(path, f'cannot be read ({error})') from error


def _idx_header(
	path: Path, content: bytes,
	magic: int, dimensions: int
) -> tuple[int, ...]:
	header_size = 4 * (1 + dimensions)
	
	if len(content) < header_size:
		raise MalformedFile(path, 'truncated header')
	
	actual_magic, *extents = struct.unpack(
		f'>{1 + dimensions}I', content[:header_size]
	)
	
	if actual_magic != magic:
		raise MalformedFile(
			path, f'magic number {actual_magic:#010x}, expected {magic:#010x}'
		)
	
	expected = header_size + math.prod(extents)
	
	if len(content) != expected:
		raise MalformedFile(
			path, f'{len(content)} bytes, header announces {expected}'
		)
	
	return tuple(extents)


def load_mnist_idx(
	images_path: Path | str,
	labels_path: Path | str
) -> list[StaticImage]:
	'''
	Read an IDX image file and its label file (optionally gzipped).
	Pixels are scaled to ``[0, 1]`` by dividing by 255.
	
	:raise MalformedFile: \
		On a wrong magic number, a truncated file,
		or differing image and label counts.
	'''
	
	images_path, labels_path = Path(images_path), Path(labels_path)
	
	images = _open_binary(images_path)
	labels = _open_binary(labels_path)
	
	count, rows, columns = _idx_header(images_path, images, _IMAGES_MAGIC, 3)
	(label_count,) = _idx_header(labels_path, labels, _LABELS_MAGIC, 1)
	
	if count != label_count:
		raise MalformedFile(
			labels_path, f'{label_count} labels for {count} images'
		)
	
	pixels = np.frombuffer(images, dtype = np.uint8, offset = 16)
	pixels = pixels.reshape(count, rows, columns) / 255.0
	classes = np.frombuffer(labels, dtype = np.uint8, offset = 8)
	
	return [
		StaticImage(Tensor(image), int(label))
		for image, label in zip(pixels, classes)
	]


def _parse_event(row: list[str], path: Path, line: int) -> Event:
	if len(row) != 4:
		raise MalformedFile(path, f'expected 4 fields, got {len(row)}', line)
	
	try:
		x, y, t, polarity = (int(field.strip()) for field in row)
	except ValueError as error:
		raise MalformedFile(path, 'fields must be integers', line) from error
	
	if polarity not in (1, -1):
		message = f'polarity must be +1 or -1, got {polarity}'
		raise MalformedFile(path, message, line)
	
	if x < 0 or y < 0:
		raise MalformedFile(path, 'negative coordinates', line)
	
	return Event(x, y, t, polarity)


def _is_header(row: list[str]) -> bool:
	fields = [field.strip().lower() for field in row]
	
	return fields == ['x', 'y', 't', 'polarity']


def load_event_csv(
	path: Path | str,
	width: int | None = None,
	height: int | None = None
) -> EventStream:
	'''
	Read ``x,y,t,polarity`` lines (an optional header line is skipped)
	into a time-ordered stream. Sensor extents default to the
	smallest ones holding every event.
	
	:raise MalformedFile: \
		On the first malformed line, naming its line number.
	:raise InvalidConfiguration: If a given extent is below 1.
	'''
	
	path = Path(path)
	events: list[Event] = []
	
	for name, extent in (('width', width), ('height', height)):
		if extent is not None and extent < 1:
			raise InvalidConfiguration(
				f'Sensor {name} must be ≥ 1, got {extent}'
			)
	
	try:
		with path.open(encoding = 'utf-8', newline = '') as file:
			for line, row in enumerate(csv.reader(file), start = 1):
				if not row or line == 1 and _is_header(row):
					continue
				
				events.append(_parse_event(row, path, line))
	except OSError as error:
		raise MalformedFile(path, f'cannot be read ({error})') from error
	
	if width is None:
		width = max((event.x for event in events), default = 0) + 1
	
	if height is None:
		height = max((event.y for event in events), default = 0) + 1
	
	if any(event.x >= width or event.y >= height for event in events):
		raise MalformedFile(path, f'events outside a {width}×{height} sensor')
	
	return EventStream.sorted(events, width, height)


def _class_template(
	label: int, classes: int, size: int, geometry: Geometry
) -> FloatArray:
	template = np.zeros((size, size))
	
	if geometry == 'blobs':
		angle = 2 * math.pi * label / classes
		radius = size * 0.3
		centre_y = size / 2 + radius * math.sin(angle)
		centre_x = size / 2 + radius * math.cos(angle)
		rows, columns = np.mgrid[0:size, 0:size]
		distance = (rows - centre_y) ** 2 + (columns - centre_x) ** 2
		width = max(size / 10, 1.0)
		
		result: FloatArray = np.exp(-distance / (2 * width ** 2))
		
		return result
	
	per_orientation = math.ceil(classes / 2)
	spacing = size / per_orientation
	thickness = max(1, int(spacing) // 2)
	start = int(label // 2 * spacing + (spacing - thickness) / 2)
	
	if label % 2 == 0:
		template[start:start + thickness, 1:size - 1] = 1.0
	else:
		template[1:size - 1, start:start + thickness] = 1.0
	
	return template


def _check_layout(classes: int, size: int, geometry: Geometry) -> None:
	if classes < 2:
		raise InvalidConfiguration(
			f'Expected at least 2 classes, got {classes}'
		)
	
	if geometry == 'bars' and math.ceil(classes / 2) > size:
		raise InvalidConfiguration(
			f'{classes} classes of bars do not fit a {size}×{size} image'
		)


def synth_dataset(
	classes: int, samples_per_class: int, seed: int, *,
	size: int = 20,
	geometry: Geometry = 'bars'
) -> list[StaticImage]:
	'''
	Seeded ``size × size`` images whose classes differ by
	the position of a bar (alternately horizontal and vertical)
	or of a blob on a circle. Samples vary by intensity, a one-pixel
	jitter where the layout leaves room, and faint background noise.
	'''
	
	_check_layout(classes, size, geometry)
	
	rng = np.random.default_rng(seed)
	spacing = size / math.ceil(classes / 2)
	jitter = 1 if geometry == 'bars' and spacing >= 4 else 0
	images: list[StaticImage] = []
	
	for label in range(classes):
		template = _class_template(label, classes, size, geometry)
		
		for _ in range(samples_per_class):
			shift = int(rng.integers(-jitter, jitter + 1))
			axis = 0 if label % 2 == 0 else 1
			shape = np.roll(template, shift, axis = axis)
			
			intensity = rng.uniform(0.7, 1.0)
			noise = rng.uniform(0.0, 0.1, size = (size, size))
			pixels = np.clip(shape * intensity + noise, 0.0, 1.0)
			
			images.append(StaticImage(Tensor(pixels), label))
	
	return images


def synth_event_dataset(
	classes: int, samples_per_class: int, seed: int, *,
	size: int = 20,
	windows: int = 25,
	window_length: int = 1000
) -> list[tuple[EventStream, int]]:
	'''
	Seeded event recordings of class-specific bars drifting by one pixel
	halfway through (horizontal bars downwards, vertical bars rightwards).
	In every window each bar pixel emits a +1 event with probability 0.6
	and random pixels emit sparse -1 and +1 noise events.
	'''
	
	_check_layout(classes, size, 'bars')
	
	rng = np.random.default_rng(seed)
	recordings: list[tuple[EventStream, int]] = []
	
	for label in range(classes):
		template = _class_template(label, classes, size, 'bars')
		
		for _ in range(samples_per_class):
			events: list[Event] = []
			
			for window in range(windows):
				offset = window * window_length
				shift = 2 * window // windows
				drift = np.roll(template, shift, axis = label % 2)
				fires = rng.random((size, size)) < drift * 0.6
				noise = rng.random((size, size)) < 0.01
				flips = rng.random((size, size)) < 0.02
				
				for polarity, mask in ((1, fires | noise), (-1, flips)):
					ys, xs = np.nonzero(mask)
					jitter = rng.integers(0, window_length, size = len(xs))
					times = offset + jitter
					
					events.extend(
						Event(int(x), int(y), int(t), polarity)
						for x, y, t in zip(xs, ys, times)
					)
			
			recordings.append((EventStream.sorted(events, size, size), label))
	
	return recordings


@dataclass(frozen = True, slots = True)
class Dataset:
	'''
	Labeled samples stacked for training: ``[N × features]``
	intensities, or ``[N × T × features]`` spikes when ``spiking``.
	'''
	
	samples: FloatArray
	labels: IntArray
	frame_shape: tuple[int, ...]
	spiking: bool
	
	def __post_init__(self) -> None:
		if len(self.samples) != len(self.labels):
			raise InvalidConfiguration(
				f'{len(self.samples)} samples for {len(self.labels)} labels'
			)
	
	def __len__(self) -> int:
		return len(self.labels)
	
	@property
	def classes(self) -> int:
		return int(self.labels.max()) + 1 if len(self.labels) else 0
	
	@classmethod
	def from_images(cls, images: Sequence[StaticImage]) -> Dataset:
		if not images:
			raise InvalidConfiguration('No images given')
		
		samples = np.stack([image.pixels.data.reshape(-1) for image in images])
		labels = np.array([image.label for image in images], dtype = np.int64)
		
		return cls(samples, labels, images[0].frame_shape, spiking = False)
	
	@classmethod
	def from_spike_trains(
		cls, trains: Sequence[tuple[SpikeTrain, int]]
	) -> Dataset:
		if not trains:
			raise InvalidConfiguration('No spike trains given')
		
		samples = np.stack([train.data.data for train, _ in trains])
		labels = np.array([label for _, label in trains], dtype = np.int64)
		
		return cls(samples, labels, trains[0][0].frame_shape, spiking = True)
	
	def subset(self, indices: IntArray | Sequence[int]) -> Dataset:
		chosen = np.asarray(indices, dtype = np.int64)
		
		return Dataset(
			self.samples[chosen], self.labels[chosen],
			self.frame_shape, self.spiking
		)


def shuffle_split(
	dataset: Dataset, fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
	'''
	Shuffle with ``seed`` and hold out ``fraction`` of the samples
	(at least one) for validation.
	'''
	
	if not 0.0 < fraction < 1.0:
		raise InvalidConfiguration(f'Split fraction {fraction} not in (0, 1)')
	
	order = np.random.default_rng(seed).permutation(len(dataset))
	held_out = max(1, int(round(len(dataset) * fraction)))
	
	return dataset.subset(order[held_out:]), dataset.subset(order[:held_out])

