'''
Leaky integrate-and-fire layers and their unrolling over time.

A layer integrates its synaptic current into a leaky membrane::

	ν[n] = α·ν[n-1] + W·x[n] + b - θ·O[n-1]
	O[n] = 1 if ν[n] > θ else 0

The spike function is a step whose derivative is replaced by
the fast sigmoid ``1 / (1 + k·|ν - θ|)²`` when differentiating,
which is what lets gradients reach the (binary) input spikes.
'''

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, replace
from typing import Literal, overload

import numpy as np
from typing_extensions import override

from .config import InvalidConfiguration, PosteriorMode
from .encoding import SpikeTrain, require_binary
from .tensors import (
	Adjoints, Saved,
	accumulate, add, affine, DimensionMismatch, FloatArray, IntArray,
	maxpool2d, Operation, scale, softmax, softmax_array, softmax_ce, stack,
	subtract, Tape, TapeMisuse, Tensor, Variable
)


@dataclass(frozen = True, slots = True)
class SurrogateSpec:
	'''
	The stand-in derivative of the spike function.
	'''
	
	slope: float = 40.0
	kind: Literal['fast-sigmoid'] = 'fast-sigmoid'
	
	def __post_init__(self) -> None:
		if not self.slope > 0:
			raise InvalidConfiguration(
				f'Surrogate slope must be > 0, got {self.slope}'
			)


@overload
def surrogate_derivative(
	membrane: float, threshold: float, spec: SurrogateSpec
) -> float:
	...


@overload
def surrogate_derivative(
	membrane: FloatArray, threshold: float, spec: SurrogateSpec
) -> FloatArray:
	...


def surrogate_derivative(
	membrane: float | FloatArray, threshold: float, spec: SurrogateSpec
) -> float | FloatArray:
	'''
	``1 / (1 + k·|ν - θ|)²``: 1 at the threshold,
	decaying towards 0 away from it.
	'''
	
	return 1.0 / (1.0 + spec.slope * np.abs(membrane - threshold)) ** 2


def soft_spike(
	membrane: FloatArray, threshold: float, slope: float
) -> FloatArray:
	'''
	The smooth spike function whose exact derivative is
	``k / (2·(1 + k·|ν - θ|)²)``, for checking gradients.
	'''
	
	shifted = slope * (membrane - threshold)
	result: FloatArray = 0.5 * (1.0 + shifted / (1.0 + np.abs(shifted)))
	
	return result


class SpikeFunction(Operation):
	'''
	Heaviside step at ``threshold`` with a surrogate derivative,
	or, with ``soft = True``, a smooth fast sigmoid differentiated exactly.
	'''
	
	name = 'spike'
	
	__slots__ = ('threshold', 'surrogate', 'soft')
	
	def __init__(
		self, threshold: float, surrogate: SurrogateSpec,
		soft: bool = False
	) -> None:
		self.threshold = threshold
		self.surrogate = surrogate
		self.soft = soft
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		(membrane,) = inputs
		
		if self.soft:
			output = soft_spike(membrane, self.threshold, self.surrogate.slope)
		else:
			output = (membrane > self.threshold).astype(np.float64)
		
		return output, (membrane,)
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		(membrane,) = saved
		derivative = surrogate_derivative(
			membrane, self.threshold, self.surrogate
		)
		
		if self.soft:
			derivative = derivative * (0.5 * self.surrogate.slope)
		
		return (adjoint * derivative,)


@dataclass(frozen = True, slots = True)
class LifLayer:
	'''
	A dense (``[out×in]`` weights) or convolutional
	(``[c_out×c_in×kh×kw]`` kernels) layer of LIF neurons.
	Convolutional layers may max-pool their synaptic current.
	Layers that do not spike only accumulate; they serve as readouts.
	'''
	
	weights: Tensor
	bias: Tensor
	decay: float = 0.7
	threshold: float = 1.0
	spiking: bool = True
	pool: bool = False
	
	def __post_init__(self) -> None:
		rank = len(self.weights.shape)
		
		if rank not in (2, 4):
			raise InvalidConfiguration(
				f'Expected [out×in] or [c_out×c_in×kh×kw] weights, '
				f'got {self.weights.shape}'
			)
		
		if self.bias.shape != (self.weights.shape[0],):
			raise InvalidConfiguration(
				f'Bias {self.bias.shape} does not match '
				f'weights {self.weights.shape}'
			)
		
		if not 0.0 <= self.decay <= 1.0:
			raise InvalidConfiguration(
				f'Decay must be in [0, 1], got {self.decay}'
			)
		
		if not self.threshold > 0.0:
			raise InvalidConfiguration(
				f'Threshold must be > 0, got {self.threshold}'
			)
		
		if self.pool and rank != 4:
			raise InvalidConfiguration('Only convolutional layers can pool')
	
	@property
	def width(self) -> int:
		'''
		Output units, or output channels of a convolutional layer.
		'''
		
		return self.weights.shape[0]
	
	@property
	def fan_in(self) -> int:
		return math.prod(self.weights.shape[1:])
	
	@property
	def convolutional(self) -> bool:
		return len(self.weights.shape) == 4
	
	def with_parameters(self, weights: Tensor, bias: Tensor) -> LifLayer:
		return replace(self, weights = weights, bias = bias)


@dataclass(frozen = True, slots = True)
class LifState:

	membrane: Tensor
	last_spike: Tensor
	
	def __post_init__(self) -> None:
		if self.membrane.shape != self.last_spike.shape:
			raise DimensionMismatch(
				'LifState',
				f'membrane {self.membrane.shape} '
				f'!= spikes {self.last_spike.shape}'
			)
		
		require_binary(self.last_spike.data, 'last spikes')
	
	@classmethod
	def resting(cls, *shape: int) -> LifState:
		return cls(Tensor.zeros(*shape), Tensor.zeros(*shape))


def synaptic_current(
	layer: LifLayer, signal: Variable,
	weights: Variable | Tensor, bias: Variable | Tensor
) -> Variable:
	current = affine(signal, weights, bias)
	
	return maxpool2d(current) if layer.pool else current


def integrate(
	layer: LifLayer,
	membrane: Variable | None, last_spike: Variable | None,
	current: Variable, *,
	surrogate: SurrogateSpec,
	soft: bool = False
) -> tuple[Variable, Variable | None]:
	'''
	One step of the membrane update. ``None`` stands for
	the resting state. Returns the new membrane and,
	for spiking layers, the emitted spikes.
	'''
	
	potential = current if membrane is None \
		else add(scale(membrane, layer.decay), current)
	
	if not layer.spiking:
		return potential, None
	
	if last_spike is not None:
		potential = subtract(potential, scale(last_spike, layer.threshold))
	
	spike = SpikeFunction(layer.threshold, surrogate, soft)
	
	return potential, potential.tape.apply(spike, potential)


def lif_step(
	layer: LifLayer, state: LifState, input_spikes: Tensor, *,
	surrogate: SurrogateSpec = SurrogateSpec()
) -> tuple[LifState, Tensor]:
	'''
	Advance ``layer`` by one time step.
	
	:raise NotBinary: If ``input_spikes`` are not all 0 or 1.
	:raise DimensionMismatch: \
		If the input or the state does not fit the layer.
	'''
	
	require_binary(input_spikes.data, 'input spikes')
	
	tape = Tape(recording = False)
	signal = tape.constant(input_spikes.data[np.newaxis])
	current = synaptic_current(layer, signal, layer.weights, layer.bias)
	
	if current.shape[1:] != state.membrane.shape:
		raise DimensionMismatch(
			'lif_step',
			f'state {state.membrane.shape} '
			f'for a layer producing {current.shape[1:]}'
		)
	
	membrane = tape.constant(state.membrane.data[np.newaxis])
	last_spike = tape.constant(state.last_spike.data[np.newaxis])
	
	potential, spikes = integrate(
		layer, membrane, last_spike, current, surrogate = surrogate
	)
	
	emitted = np.zeros(state.membrane.shape) if spikes is None \
		else spikes.array[0]
	output = Tensor(emitted)
	
	return LifState(Tensor(potential.array[0]), output), output


@dataclass(frozen = True, slots = True, eq = False)
class LayerGradients:
	weights: Tensor
	bias: Tensor


@dataclass(frozen = True, slots = True, eq = False)
class SpikeRecord:
	'''
	Everything recorded by :func:`snn_forward`: the tape and its
	variables, which :func:`snn_backward` differentiates, and the
	membrane and spike traces of every layer (time-major).
	'''
	
	tape: Tape
	steps: tuple[Variable, ...]
	output: Variable
	inputs: tuple[Variable, ...]
	parameters: tuple[tuple[Variable, Variable], ...]
	membranes: tuple[FloatArray, ...]
	spikes: tuple[FloatArray, ...]
	batched: bool
	
	@property
	def time_steps(self) -> int:
		return len(self.steps)


def _frames(
	spikes: SpikeTrain | FloatArray,
	frame_shape: Sequence[int] | None
) -> tuple[FloatArray, bool]:
	if isinstance(spikes, SpikeTrain):
		data = spikes.data.data
		frames = data.reshape(data.shape[0], 1, *spikes.frame_shape)
		
		return frames, False
	
	data = np.asarray(spikes, dtype = np.float64)
	
	if data.ndim < 3:
		raise DimensionMismatch(
			'snn_forward', f'expected [T×B×features...], got {data.shape}'
		)
	
	if frame_shape is not None:
		data = data.reshape(data.shape[0], data.shape[1], *frame_shape)
	
	return data, True


def _check_network(network: Sequence[LifLayer]) -> None:
	if not network:
		raise InvalidConfiguration('A network needs at least one layer')
	
	if any(not layer.spiking for layer in network[:-1]):
		raise InvalidConfiguration('Only the last layer may be non-spiking')


def snn_forward(
	network: Sequence[LifLayer],
	spikes: SpikeTrain | FloatArray, *,
	frame_shape: Sequence[int] | None = None,
	surrogate: SurrogateSpec = SurrogateSpec(),
	soft: bool = False,
	record: bool = True
) -> tuple[Tensor, SpikeRecord]:
	'''
	Unroll ``network`` over every time step of ``spikes``, starting
	from rest, and return the readout membranes: ``[T×C]`` for a
	:class:`SpikeTrain`, ``[T×B×C]`` for a ``[T×B×...]`` batch.
	
	With ``soft = True`` the smooth spike function is used
	throughout and inputs need not be binary.
	With ``record = False`` nothing is kept for differentiation.
	
	:raise NotBinary: If a non-soft run receives non-binary spikes.
	:raise DimensionMismatch: If consecutive layers do not fit.
	'''
	
	_check_network(network)
	frames, batched = _frames(spikes, frame_shape)
	
	if frames.shape[0] < 1:
		raise InvalidConfiguration('Expected at least one time step')
	
	if not soft:
		require_binary(frames, 'input spikes')
	
	tape = Tape(recording = record)
	parameters = tuple(
		(tape.watch(layer.weights), tape.watch(layer.bias)) for layer in network
	)
	inputs = tuple(tape.watch(frame) for frame in frames)
	
	membranes: list[Variable | None] = [None] * len(network)
	emitted: list[Variable | None] = [None] * len(network)
	membrane_traces: list[list[FloatArray]] = [[] for _ in network]
	spike_traces: list[list[FloatArray]] = [[] for _ in network]
	steps: list[Variable] = []
	
	for frame in inputs:
		signal = frame
		
		for index, layer in enumerate(network):
			current = synaptic_current(layer, signal, *parameters[index])
			membrane, spike = integrate(
				layer, membranes[index], emitted[index], current,
				surrogate = surrogate, soft = soft
			)
			
			membranes[index], emitted[index] = membrane, spike
			membrane_traces[index].append(membrane.array)
			spike_traces[index].append(
				np.zeros(membrane.shape) if spike is None else spike.array
			)
			
			if spike is not None:
				signal = spike
		
		steps.append(membrane)
	
	output = stack(steps)
	
	def unbatch(trace: list[FloatArray]) -> FloatArray:
		stacked = np.stack(trace)
		
		return stacked if batched else stacked[:, 0]
	
	readout = output.array if batched else output.array[:, 0]
	
	return Tensor(readout), SpikeRecord(
		tape = tape,
		steps = tuple(steps),
		output = output,
		inputs = inputs,
		parameters = parameters,
		membranes = tuple(unbatch(trace) for trace in membrane_traces),
		spikes = tuple(unbatch(trace) for trace in spike_traces),
		batched = batched
	)


def snn_backward(
	record: SpikeRecord | None,
	adjoint: Variable | Tensor | FloatArray
) -> tuple[tuple[LayerGradients, ...], Tensor]:
	'''
	Backpropagate through time. ``adjoint`` is either the adjoint
	of the readout membranes returned by :func:`snn_forward` or
	a scalar loss built on the record's tape from :attr:`SpikeRecord.steps`.
	
	Returns the gradients of every layer and the dense gradient
	with respect to the input spikes, ``[T×features]``
	(``[T×B×features]`` for a batch).
	
	:raise TapeMisuse: \
		If there is no record, it was not recorded,
		or it has already been differentiated.
	'''
	
	if record is None:
		raise TapeMisuse('Backpropagation needs the record of a forward pass')
	
	if isinstance(adjoint, Variable):
		gradients = record.tape.gradients(adjoint)
	else:
		seed = np.asarray(adjoint, dtype = np.float64)
		
		if not record.batched:
			seed = seed[:, np.newaxis]
		
		gradients = record.tape.gradients(record.output, seed)
	
	layers = tuple(
		LayerGradients(gradients[weights], gradients[bias])
		for weights, bias in record.parameters
	)
	
	inputs = np.stack([gradients.array(frame) for frame in record.inputs])
	inputs = inputs.reshape(inputs.shape[0], inputs.shape[1], -1)
	
	return layers, Tensor(inputs if record.batched else inputs[:, 0])


def _repeated_labels(
	labels: int | Sequence[int] | IntArray, repeats: int
) -> IntArray:
	return np.tile(np.asarray(labels, dtype = np.int64).reshape(-1), repeats)


@overload
def membrane_ce_loss(
	membranes: Tensor, labels: int | Sequence[int] | IntArray
) -> float:
	...


@overload
def membrane_ce_loss(
	membranes: Sequence[Variable], labels: int | Sequence[int] | IntArray
) -> Variable:
	...


def membrane_ce_loss(
	membranes: Tensor | Sequence[Variable],
	labels: int | Sequence[int] | IntArray
) -> float | Variable:
	'''
	Softmax cross-entropy of the readout membranes,
	summed over time steps (and over the batch).
	
	Accepts the ``[T×C]`` or ``[T×B×C]`` membranes of
	:func:`snn_forward`, or its per-step readout variables.
	
	:raise InvalidLabel: If a label is not in ``[0, C)``.
	'''
	
	if isinstance(membranes, Tensor):
		values = membranes.data
		
		if values.shape[0] < 1:
			raise InvalidConfiguration('Expected at least one time step')
		
		rows = values.reshape(-1, values.shape[-1])
		repeated = _repeated_labels(labels, values.shape[0])
		
		return softmax_ce(Tensor(rows), repeated)
	
	if not membranes:
		raise InvalidConfiguration('Expected at least one time step')
	
	return accumulate([softmax_ce(step, labels) for step in membranes])


@overload
def posterior(membranes: Tensor, mode: PosteriorMode = 'summed') -> Tensor:
	...


@overload
def posterior(
	membranes: Sequence[Variable], mode: PosteriorMode = 'summed'
) -> Variable:
	...


def posterior(
	membranes: Tensor | Sequence[Variable],
	mode: PosteriorMode = 'summed'
) -> Tensor | Variable:
	'''
	Class probabilities from readout membranes: the softmax of the
	membranes summed over time (``'summed'``) or the mean of the
	per-step softmaxes (``'mean-step'``).
	'''
	
	if isinstance(membranes, Tensor):
		values = membranes.data
		
		if mode == 'summed':
			return Tensor(softmax_array(values.sum(axis = 0)))
		
		return Tensor(softmax_array(values).mean(axis = 0))
	
	if mode == 'summed':
		return softmax(accumulate(membranes))
	
	steps = [softmax(step) for step in membranes]
	
	return scale(accumulate(steps), 1.0 / len(steps))
