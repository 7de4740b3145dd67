'''
Target and evaluation architectures, and their checkpoints.

Four kinds of model exist: spiking and conventional (ANN)
variants of a one-hidden-layer perceptron and of a small
convolutional network. Spiking and conventional variants
share layer shapes, so a model's parameters are always
``(weights, bias)`` pairs in declaration order.
'''

from __future__ import annotations

import json
import math
import struct
from abc import ABC, abstractmethod
from collections.abc import Sequence
from pathlib import Path
from typing import Annotated, Any, ClassVar, TypeAlias

import numpy as np
from pydantic import (
	Field, model_validator, PositiveFloat, PositiveInt, ValidationError
)
from typing_extensions import override, Self

from .config import (
	InvalidConfiguration, ModelKind, PosteriorMode, Scale, Settings, validated
)
from .encoding import MalformedFile, rate_encode_batch, SpikeTrain, StaticImage
from .neurons import (
	LifLayer, membrane_ce_loss, posterior,
	snn_backward, snn_forward, SurrogateSpec
)
from .tensors import (
	affine, DimensionMismatch, FloatArray, IntArray, maxpool2d,
	relu, scale, sigmoid, softmax_array, softmax_ce, Tape, Tensor, Variable
)


Parameters: TypeAlias = tuple[tuple[Tensor, Tensor], ...]
ParameterArrays: TypeAlias = tuple[tuple[FloatArray, FloatArray], ...]
Operand: TypeAlias = Variable | Tensor

CHECKPOINT_MAGIC = b'BLKS'
CHECKPOINT_VERSION = 1

_HEADER = struct.Struct('<4sHI')

HIDDEN_WIDTH: dict[Scale, int] = {'desk': 300, 'paper': 3000}


class ModelSpec(Settings):
	'''
	The architecture of a model. ``input_shape`` is the
	layout of one input frame, such as ``(1, 28, 28)``.
	'''
	
	kind: ModelKind
	input_shape: tuple[PositiveInt, ...]
	classes: Annotated[int, Field(ge = 2)]
	hidden: tuple[PositiveInt, ...] = (300,)
	channels: tuple[PositiveInt, ...] = (12, 24)
	kernel_size: PositiveInt = 5
	time_steps: PositiveInt = 25
	decay: Annotated[float, Field(ge = 0, le = 1)] = 0.7
	threshold: PositiveFloat = 1.0
	slope: PositiveFloat = 40.0
	posterior_mode: PosteriorMode = 'summed'
	
	@model_validator(mode = 'after')
	def _convolutions_fit(self) -> Self:
		if not self.convolutional:
			return self
		
		if len(self.input_shape) != 3:
			raise ValueError(
				f'convolutional models need (c, h, w) inputs, '
				f'got {self.input_shape}'
			)
		
		_, height, width = self.input_shape
		shrink = self.kernel_size - 1
		
		for _ in self.channels:
			height, width = height - shrink, width - shrink
			
			if height < 2 or width < 2 or height % 2 or width % 2:
				raise ValueError(
					f'a {self.input_shape} input does not pool evenly '
					f'after {self.kernel_size}×{self.kernel_size} convolutions'
				)
			
			height, width = height // 2, width // 2
		
		return self
	
	@property
	def spiking(self) -> bool:
		return self.kind.startswith('snn')
	
	@property
	def convolutional(self) -> bool:
		return self.kind.endswith('cnn')
	
	@property
	def features(self) -> int:
		return math.prod(self.input_shape)
	
	def layer_shapes(self) -> list[tuple[tuple[int, ...], tuple[int]]]:
		'''
		``(weights, bias)`` shapes of every layer, readout last.
		'''
		
		if not self.convolutional:
			widths = [self.features, *self.hidden, self.classes]
			
			return [
				((outputs, inputs), (outputs,))
				for inputs, outputs in zip(widths, widths[1:])
			]
		
		shapes: list[tuple[tuple[int, ...], tuple[int]]] = []
		channels, height, width = self.input_shape
		kernel = self.kernel_size
		
		for filters in self.channels:
			shapes.append(((filters, channels, kernel, kernel), (filters,)))
			channels = filters
			height = (height - kernel + 1) // 2
			width = (width - kernel + 1) // 2
		
		flattened = channels * height * width
		shapes.append(((self.classes, flattened), (self.classes,)))
		
		return shapes
	
	@property
	def parameter_count(self) -> int:
		return sum(
			math.prod(weights) + math.prod(bias)
			for weights, bias in self.layer_shapes()
		)
	
	@classmethod
	def create(cls, **values: Any) -> ModelSpec:
		'''
		Like the constructor, but raising :class:`InvalidConfiguration`.
		'''
		
		return validated(cls, values)


def preset(
	kind: ModelKind, scale: Scale,
	input_shape: Sequence[int], classes: int,
	**overrides: Any
) -> ModelSpec:
	'''
	The reference architecture of ``kind``: one hidden layer of
	3000 neurons (300 at desk scale) for perceptrons, 12 then 24
	5×5 filters for convolutional networks. ``overrides``
	replace individual fields.
	'''
	
	values: dict[str, Any] = {
		'kind': kind,
		'input_shape': tuple(input_shape),
		'classes': classes,
		'hidden': (HIDDEN_WIDTH[scale],),
	}
	values.update(overrides)
	
	return ModelSpec.create(**values)


def _as_frames(samples: FloatArray, spec: ModelSpec) -> FloatArray:
	if samples.shape[-1] != spec.features:
		raise DimensionMismatch(
			'predict',
			f'{samples.shape[-1]} features '
			f'for a model expecting {spec.features}'
		)
	
	return samples


class Model(ABC):
	'''
	A classifier with immutable parameters.
	'''
	
	__slots__ = ('_spec', '_parameters')
	
	_spec: ModelSpec
	_parameters: Parameters
	
	spiking: ClassVar[bool]
	
	def __init__(self, spec: ModelSpec, parameters: Parameters) -> None:
		expected = spec.layer_shapes()
		actual = [(weights.shape, bias.shape) for weights, bias in parameters]
		
		if actual != expected:
			raise InvalidConfiguration(
				f'Parameters {actual} do not match the specification {expected}'
			)
		
		self._spec = spec
		self._parameters = tuple(parameters)
	
	def __repr__(self) -> str:
		return f'{self.__class__.__name__}({self._spec.kind!r})'
	
	@property
	def spec(self) -> ModelSpec:
		return self._spec
	
	@property
	def parameters(self) -> Parameters:
		return self._parameters
	
	def with_parameters(self, parameters: Parameters) -> Self:
		return self.__class__(self._spec, parameters)
	
	@abstractmethod
	def loss_and_gradients(
		self, inputs: FloatArray, labels: IntArray
	) -> tuple[float, ParameterArrays]:
		'''
		The mean loss of a training batch and its gradients with respect
		to every parameter. ``inputs`` are ``[B×features]`` intensities
		for conventional models and ``[T×B×features]`` spikes for spiking
		models.
		'''
		
		raise NotImplementedError
	
	@abstractmethod
	def _posteriors(
		self, samples: FloatArray, rng: np.random.Generator
	) -> FloatArray:
		raise NotImplementedError
	
	def posteriors(
		self, samples: FloatArray, *,
		seed: int = 0,
		batch_size: int = 256
	) -> FloatArray:
		'''
		Class probabilities ``[N×C]`` of ``[N×features]`` images or
		``[N×T×features]`` spike trains. Spiking models rate-encode
		images (seeded with ``seed``); conventional models
		rate-decode spike trains.
		
		:raise DimensionMismatch: If the features do not fit the model.
		'''
		
		values = np.asarray(samples, dtype = np.float64)
		samples = _as_frames(values, self._spec)
		rng = np.random.default_rng(seed)
		
		chunks = [
			self._posteriors(samples[start:start + batch_size], rng)
			for start in range(0, len(samples), batch_size)
		]
		
		if not chunks:
			return np.zeros((0, self._spec.classes))
		
		return np.concatenate(chunks)
	
	def accuracy(
		self, samples: FloatArray, labels: IntArray, *, seed: int = 0
	) -> float:
		if not len(labels):
			return 0.0
		
		predicted = self.posteriors(samples, seed = seed).argmax(axis = 1)
		
		return float(np.mean(predicted == labels))


class SpikingModel(Model):
	'''
	LIF hidden layers (convolutional ones pool their synaptic current)
	and a non-spiking readout.
	'''
	
	__slots__ = ('_layers',)
	
	_layers: tuple[LifLayer, ...]
	
	spiking = True
	
	def __init__(self, spec: ModelSpec, parameters: Parameters) -> None:
		super().__init__(spec, parameters)
		
		*hidden, (weights, bias) = self._parameters
		layers = [
			LifLayer(
				layer_weights, layer_bias, spec.decay, spec.threshold,
				pool = spec.convolutional
			)
			for layer_weights, layer_bias in hidden
		]
		layers.append(LifLayer(
			weights, bias, spec.decay, spec.threshold, spiking = False
		))
		
		self._layers = tuple(layers)
	
	@property
	def layers(self) -> tuple[LifLayer, ...]:
		return self._layers
	
	@property
	def surrogate(self) -> SurrogateSpec:
		return SurrogateSpec(self._spec.slope)
	
	@override
	def loss_and_gradients(
		self, inputs: FloatArray, labels: IntArray
	) -> tuple[float, ParameterArrays]:
		_, record = snn_forward(
			self._layers, inputs,
			frame_shape = self._spec.input_shape,
			surrogate = self.surrogate
		)
		
		loss = scale(membrane_ce_loss(record.steps, labels), 1.0 / len(labels))
		layers, _ = snn_backward(record, loss)
		
		gradients = tuple(
			(layer.weights.data, layer.bias.data) for layer in layers
		)
		
		return float(loss.array), gradients
	
	@override
	def _posteriors(
		self, samples: FloatArray, rng: np.random.Generator
	) -> FloatArray:
		if samples.ndim == 2:
			spikes = rate_encode_batch(samples, self._spec.time_steps, rng)
		else:
			spikes = samples.transpose(1, 0, 2)
		
		membranes, _ = snn_forward(
			self._layers, spikes,
			frame_shape = self._spec.input_shape,
			surrogate = self.surrogate,
			record = False
		)
		
		return posterior(membranes, self._spec.posterior_mode).data


class ConventionalModel(Model):
	'''
	Sigmoid perceptrons, or convolutional networks
	whose layers apply ReLU and then max-pool.
	'''
	
	__slots__ = ()
	
	spiking = False
	
	def logits(
		self, inputs: Variable,
		parameters: Sequence[tuple[Operand, Operand]] | None = None
	) -> Variable:
		'''
		``[B×C]`` logits of a ``[B×...]`` batch on the tape of ``inputs``.
		'''
		
		*hidden, (weights, bias) = self._parameters if parameters is None \
			else parameters
		signal = inputs
		
		for layer_weights, layer_bias in hidden:
			current = affine(signal, layer_weights, layer_bias)
			
			if self._spec.convolutional:
				signal = maxpool2d(relu(current))
			else:
				signal = sigmoid(current)
		
		return affine(signal, weights, bias)
	
	def _batch(self, tape: Tape, samples: FloatArray) -> Variable:
		shape = (len(samples), *self._spec.input_shape)
		
		return tape.constant(samples.reshape(shape))
	
	@override
	def loss_and_gradients(
		self, inputs: FloatArray, labels: IntArray
	) -> tuple[float, ParameterArrays]:
		tape = Tape()
		parameters = [
			(tape.watch(weights), tape.watch(bias))
			for weights, bias in self._parameters
		]
		
		logits = self.logits(self._batch(tape, inputs), parameters)
		loss = scale(softmax_ce(logits, labels), 1.0 / len(labels))
		gradients = tape.gradients(loss)
		
		return float(loss.array), tuple(
			(gradients.array(weights), gradients.array(bias))
			for weights, bias in parameters
		)
	
	@override
	def _posteriors(
		self, samples: FloatArray, rng: np.random.Generator
	) -> FloatArray:
		if samples.ndim == 3:
			samples = samples.mean(axis = 1)
		
		tape = Tape(recording = False)
		logits = self.logits(self._batch(tape, samples)).array
		
		return softmax_array(logits)


def model_class(spec: ModelSpec) -> type[Model]:
	return SpikingModel if spec.spiking else ConventionalModel


def build_model(spec: ModelSpec, seed: int) -> Model:
	'''
	A freshly initialized model: every weight and bias drawn
	uniformly from ``±1/√fan_in`` of its layer.
	'''
	
	rng = np.random.default_rng(seed)
	parameters: list[tuple[Tensor, Tensor]] = []
	
	for weights_shape, bias_shape in spec.layer_shapes():
		bound = 1.0 / math.sqrt(math.prod(weights_shape[1:]))
		weights = rng.uniform(-bound, bound, size = weights_shape)
		bias = rng.uniform(-bound, bound, size = bias_shape)
		parameters.append((Tensor(weights), Tensor(bias)))
	
	return model_class(spec)(spec, tuple(parameters))


def predict(
	model: Model, sample: SpikeTrain | StaticImage, *, seed: int = 0
) -> Tensor:
	'''
	The posterior ``M(x)`` of a single input.
	
	:raise DimensionMismatch: If ``sample`` does not fit the model.
	'''
	
	if isinstance(sample, SpikeTrain):
		batch = sample.data.data[np.newaxis]
	else:
		batch = sample.pixels.data.reshape(1, -1)
	
	return Tensor(model.posteriors(batch, seed = seed)[0])


class MalformedCheckpoint(MalformedFile):
	'''
	Raised when a checkpoint is corrupt, truncated
	or of an unrecognized version.
	'''
	
	pass


class TrainingMetadata(Settings):
	'''
	How a checkpointed model came to be.
	'''
	
	seed: int = 0
	epochs: int = 0
	validation_accuracy: float | None = None
	dataset: str | None = None


def save_checkpoint(
	model: Model, path: Path,
	training: TrainingMetadata = TrainingMetadata()
) -> None:
	'''
	Write ``model`` as: magic ``BLKS``, a ``u16`` version,
	a ``u32``-length-prefixed UTF-8 JSON metadata block, then every
	parameter as little-endian ``f64`` values in declaration order.
	'''
	
	metadata = json.dumps({
		'spec': model.spec.model_dump(mode = 'json'),
		'training': training.model_dump(mode = 'json'),
	}).encode('utf-8')
	
	header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(metadata))
	chunks = [header, metadata]
	
	for weights, bias in model.parameters:
		chunks.append(np.asarray(weights.data, dtype = '<f8').tobytes())
		chunks.append(np.asarray(bias.data, dtype = '<f8').tobytes())
	
	path.parent.mkdir(parents = True, exist_ok = True)
	path.write_bytes(b''.join(chunks))


def _read_metadata(path: Path, content: bytes) -> tuple[dict[str, Any], int]:
	if len(content) < _HEADER.size:
		raise MalformedCheckpoint(path, 'truncated header')
	
	magic, version, length = _HEADER.unpack_from(content)
	
	if magic != CHECKPOINT_MAGIC:
		raise MalformedCheckpoint(
			path, f'magic {magic!r}, expected {CHECKPOINT_MAGIC!r}'
		)
	
	if version != CHECKPOINT_VERSION:
		raise MalformedCheckpoint(path, f'unsupported version {version}')
	
	end = _HEADER.size + length
	
	try:
		metadata = json.loads(content[_HEADER.size:end].decode('utf-8'))
	except (UnicodeDecodeError, json.JSONDecodeError) as error:
		raise MalformedCheckpoint(path, 'unreadable metadata') from error
	
	if not isinstance(metadata, dict) or 'spec' not in metadata:
		raise MalformedCheckpoint(path, 'metadata has no model specification')
	
	return metadata, end


def read_checkpoint(path: Path) -> tuple[Model, TrainingMetadata]:
	'''
	Read a model and its training metadata.
	
	:raise MalformedCheckpoint: \
		On a wrong magic number or version, unreadable metadata,
		or a size that does not match the specification.
	'''
	
	try:
		content = path.read_bytes()
	except OSError as error:
		raise MalformedCheckpoint(path, f'cannot be read ({error})') from error
	
	metadata, offset = _read_metadata(path, content)
	
	try:
		spec = ModelSpec.model_validate(metadata['spec'])
		training = TrainingMetadata.model_validate(metadata.get('training', {}))
	except ValidationError as error:
		message = f'invalid metadata ({error})'
		raise MalformedCheckpoint(path, message) from error
	
	shapes = spec.layer_shapes()
	expected = offset + 8 * spec.parameter_count
	
	if len(content) != expected:
		raise MalformedCheckpoint(
			path, f'{len(content)} bytes, the specification implies {expected}'
		)
	
	def take(shape: tuple[int, ...]) -> Tensor:
		nonlocal offset
		
		count = math.prod(shape)
		values = np.frombuffer(
			content, dtype = '<f8', count = count, offset = offset
		)
		offset += 8 * count
		
		return Tensor(values.astype(np.float64).reshape(shape))
	
	parameters = tuple(
		(take(weights_shape), take(bias_shape))
		for weights_shape, bias_shape in shapes
	)
	
	return model_class(spec)(spec, parameters), training


def load_checkpoint(path: Path) -> Model:
	model, _ = read_checkpoint(path)
	
	return model


def ensure_compatible(target: ModelSpec, evaluator: ModelSpec) -> None:
	'''
	:raise InvalidConfiguration: \
		If the two models disagree on the input layout or the classes.
	'''
	
	same_features = target.features == evaluator.features
	
	if not same_features or target.classes != evaluator.classes:
		raise InvalidConfiguration(
			f'Models are incompatible: '
			f'{target.input_shape} → {target.classes} classes vs '
			f'{evaluator.input_shape} → {evaluator.classes} classes'
		)
