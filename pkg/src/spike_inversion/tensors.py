'''
A dense-tensor engine with reverse-mode differentiation,
just large enough for multilayer perceptrons, small
convolutional networks and networks unrolled over time.

Values are immutable :class:`Tensor` objects. Differentiation
goes through a :class:`Tape`: inputs of interest are *watched*,
operations applied to the resulting :class:`Variable` objects
are recorded, and :meth:`Tape.gradients` replays the record
backwards once::

	>>> tape = Tape()
	>>> a = tape.watch(Tensor([[1.0, 2.0], [3.0, 4.0]]))
	>>> b = tape.constant(Tensor([[5.0], [6.0]]))
	>>> product = matmul(a, b)
	>>> tape.gradients(product, Tensor([[1.0], [1.0]]))[a]
	Tensor([[5.0, 6.0], [5.0, 6.0]])

The same functions accept plain tensors and then
simply compute the result::

	>>> matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
	Tensor([[17.0], [39.0]])

'''

from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from typing import Any, ClassVar, overload, TypeAlias

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view
from typing_extensions import override, Self


FloatArray: TypeAlias = npt.NDArray[np.float64]
IntArray: TypeAlias = npt.NDArray[np.int64]

Saved: TypeAlias = tuple[Any, ...]
Adjoints: TypeAlias = tuple['FloatArray | None', ...]


class DimensionMismatch(ValueError):
	'''
	Raised when the extents of an operation's inputs
	are incompatible with each other or with the operation.
	'''
	
	def __init__(self, operation: str, detail: str) -> None:
		super().__init__(f'{operation}: {detail}')


class NonFiniteValues(FloatingPointError):
	'''
	Raised when a tensor would contain NaN or an infinity.
	'''
	
	def __init__(self, where: str) -> None:
		super().__init__(f'Non-finite values produced by {where}')


class InvalidLabel(IndexError):
	'''
	Raised when a class label is not in ``[0, classes)``.
	'''
	
	def __init__(self, label: object, classes: int) -> None:
		super().__init__(
			f'Expected labels in the interval [0, {classes - 1}], '
			f'got {label!r}'
		)


class TapeMisuse(RuntimeError):
	'''
	Raised when a tape is replayed twice, replayed without
	a record, or mixed with variables of another tape.
	'''
	
	pass


def _must_be_finite(array: FloatArray, where: str) -> None:
	if not np.isfinite(array).all():
		raise NonFiniteValues(where)


class Tensor:
	'''
	An immutable, finite, 64-bit floating point array.
	'''
	
	__slots__ = ('_array',)
	
	_array: FloatArray
	
	def __init__(self, data: npt.ArrayLike, /) -> None:
		array = np.array(data, dtype = np.float64)
		_must_be_finite(array, 'Tensor()')
		
		array.flags.writeable = False
		self._array = array
	
	@classmethod
	def _adopt(cls, array: FloatArray, /) -> Self:
		instance = cls.__new__(cls)
		
		if array.flags.writeable:
			array.flags.writeable = False
		
		instance._array = array
		
		return instance
	
	def __repr__(self) -> str:
		return f'{self.__class__.__name__}({self._array.tolist()!r})'
	
	def __len__(self) -> int:
		return len(self._array)
	
	def __array__(
		self, dtype: npt.DTypeLike = None, copy: bool | None = None
	) -> FloatArray:
		if dtype is None or np.dtype(dtype) == self._array.dtype:
			return self._array
		
		return self._array.astype(dtype)
	
	def __eq__(self, other: object) -> bool:
		'''
		Two tensors are equal if they have
		the same shape and the same elements.
		'''
		
		if not isinstance(other, Tensor):
			return NotImplemented
		
		return (
			self.shape == other.shape and
			bool(np.array_equal(self._array, other._array))
		)
	
	__hash__ = None  # type: ignore[assignment]
	
	@property
	def shape(self) -> tuple[int, ...]:
		'''
		The extent of each axis.
		'''
		
		return tuple(self._array.shape)
	
	@property
	def data(self) -> FloatArray:
		'''
		A read-only view of the elements.
		'''
		
		return self._array
	
	@property
	def size(self) -> int:
		return int(self._array.size)
	
	def item(self) -> float:
		return float(self._array.item())
	
	def reshape(self, *shape: int) -> Tensor:
		return Tensor._adopt(self._array.reshape(shape).copy())
	
	@classmethod
	def zeros(cls, *shape: int) -> Self:
		return cls._adopt(np.zeros(shape))


class Operation(ABC):
	'''
	A differentiable primitive. :meth:`forward` computes the output
	together with whatever :meth:`backward` needs later; :meth:`backward`
	maps the adjoint of the output to the adjoints of the inputs
	(``None`` where an input has no derivative).
	'''
	
	name: ClassVar[str]
	
	@abstractmethod
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		raise NotImplementedError
	
	@abstractmethod
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		raise NotImplementedError


@dataclass(frozen = True, slots = True)
class _Node:
	operation: Operation | None
	inputs: tuple[int | None, ...]
	saved: Saved
	shape: tuple[int, ...]


class Variable:
	'''
	A value living on a :class:`Tape`. Variables that depend on
	no watched value carry no node and receive no adjoint.
	'''
	
	__slots__ = ('_tape', '_index', '_array')
	
	_tape: Tape
	_index: int | None
	_array: FloatArray
	
	def __init__(
		self, tape: Tape, index: int | None, array: FloatArray
	) -> None:
		self._tape = tape
		self._index = index
		self._array = array
	
	def __repr__(self) -> str:
		return f'{self.__class__.__name__}(shape = {self.shape!r})'
	
	def __add__(self, other: Variable) -> Variable:
		return add(self, other)
	
	def __sub__(self, other: Variable) -> Variable:
		return subtract(self, other)
	
	def __mul__(self, factor: float) -> Variable:
		return scale(self, factor)
	
	__rmul__ = __mul__
	
	def __neg__(self) -> Variable:
		return scale(self, -1.0)
	
	@property
	def tape(self) -> Tape:
		return self._tape
	
	@property
	def value(self) -> Tensor:
		'''
		The computed value, as an immutable tensor.
		'''
		
		return Tensor._adopt(self._array)
	
	@property
	def array(self) -> FloatArray:
		return self._array
	
	@property
	def shape(self) -> tuple[int, ...]:
		return tuple(self._array.shape)
	
	@property
	def tracked(self) -> bool:
		'''
		Whether adjoints can flow into this variable.
		'''
		
		return self._index is not None


class Gradients:
	'''
	Adjoints computed by :meth:`Tape.gradients`, looked up by variable.
	Variables the output does not depend on get zero adjoints.
	'''
	
	__slots__ = ('_tape', '_adjoints')
	
	def __init__(
		self, tape: Tape, adjoints: list[FloatArray | None]
	) -> None:
		self._tape = tape
		self._adjoints = adjoints
	
	def __getitem__(self, variable: Variable) -> Tensor:
		return Tensor._adopt(self.array(variable))
	
	def array(self, variable: Variable) -> FloatArray:
		if variable.tape is not self._tape:
			raise TapeMisuse('Variable belongs to another tape')
		
		index = variable._index
		adjoint = None if index is None else self._adjoints[index]
		
		if adjoint is None:
			return np.zeros(variable.shape)
		
		return adjoint


class Tape:
	'''
	An ordered record of operations, replayed backwards
	at most once. A tape built with ``recording = False``
	only evaluates, which keeps inference cheap.
	
	Every node's inputs precede it, so reverse order is
	a valid topological order.
	'''
	
	__slots__ = ('_nodes', '_recording', '_replayed')
	
	_nodes: list[_Node]
	_recording: bool
	_replayed: bool
	
	def __init__(self, *, recording: bool = True) -> None:
		self._nodes = []
		self._recording = recording
		self._replayed = False
	
	def __len__(self) -> int:
		return len(self._nodes)
	
	@property
	def recording(self) -> bool:
		return self._recording
	
	def _own(self, variable: Variable) -> Variable:
		if variable.tape is not self:
			raise TapeMisuse('Variable belongs to another tape')
		
		return variable
	
	def watch(self, value: Tensor | FloatArray) -> Variable:
		'''
		Introduce a value whose adjoint will be computed.
		'''
		
		array = np.asarray(value, dtype = np.float64)
		
		if not self._recording:
			return Variable(self, None, array)
		
		self._nodes.append(_Node(None, (), (), array.shape))
		
		return Variable(self, len(self._nodes) - 1, array)
	
	def constant(self, value: Tensor | FloatArray) -> Variable:
		'''
		Introduce a value that is not differentiated.
		'''
		
		return Variable(self, None, np.asarray(value, dtype = np.float64))
	
	def apply(self, operation: Operation, *inputs: Variable) -> Variable:
		'''
		Evaluate ``operation`` and, if any input is
		tracked, record it for the backward pass.
		
		:raise NonFiniteValues: If the output is not finite.
		'''
		
		for variable in inputs:
			self._own(variable)
		
		output, saved = operation.forward(*(v.array for v in inputs))
		_must_be_finite(output, operation.name)
		
		if not self._recording or not any(v.tracked for v in inputs):
			return Variable(self, None, output)
		
		indices = tuple(v._index for v in inputs)
		self._nodes.append(_Node(operation, indices, saved, output.shape))
		
		return Variable(self, len(self._nodes) - 1, output)
	
	def gradients(
		self, output: Variable,
		adjoint: Tensor | FloatArray | None = None
	) -> Gradients:
		'''
		Propagate ``adjoint`` (ones for a scalar output when omitted)
		from ``output`` back to every watched variable.
		
		:raise TapeMisuse: \
			If the tape has already been replayed, does not record,
			or ``output`` belongs to another tape.
		'''
		
		self._own(output)
		
		if self._replayed:
			raise TapeMisuse('A tape can only be replayed once')
		
		if not self._recording:
			raise TapeMisuse('Tape was created with recording = False')
		
		self._replayed = True
		adjoints: list[FloatArray | None] = [None] * len(self._nodes)
		
		if output._index is None:
			return Gradients(self, adjoints)
		
		if adjoint is None:
			seed = np.ones(output.shape)
		else:
			seed = np.asarray(adjoint, dtype = np.float64)
		
		if seed.shape != output.shape:
			raise DimensionMismatch(
				'gradients',
				f'adjoint shape {seed.shape} != output shape {output.shape}'
			)
		
		adjoints[output._index] = seed
		
		for index in range(output._index, -1, -1):
			node, node_adjoint = self._nodes[index], adjoints[index]
			
			if node.operation is None or node_adjoint is None:
				continue
			
			input_adjoints = node.operation.backward(node.saved, node_adjoint)
			
			for input_index, input_adjoint in zip(node.inputs, input_adjoints):
				if input_index is None or input_adjoint is None:
					continue
				
				accumulated = adjoints[input_index]
				
				if accumulated is None:
					adjoints[input_index] = input_adjoint
				else:
					adjoints[input_index] = accumulated + input_adjoint
		
		return Gradients(self, adjoints)


class MatrixProduct(Operation):

	name = 'matmul'
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		a, b = inputs
		
		if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
			raise DimensionMismatch(
				self.name, f'cannot multiply {a.shape} by {b.shape}'
			)
		
		return a @ b, (a, b)
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		a, b = saved
		
		return adjoint @ b.T, a.T @ adjoint


class Transpose(Operation):

	name = 'transpose'
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		(a,) = inputs
		
		if a.ndim != 2:
			message = f'expected a matrix, got {a.shape}'
			raise DimensionMismatch(self.name, message)
		
		return a.T.copy(), ()
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		return (adjoint.T.copy(),)


class _SameShape(Operation, ABC):

	@staticmethod
	def _check(name: str, a: FloatArray, b: FloatArray) -> None:
		if a.shape != b.shape:
			raise DimensionMismatch(name, f'{a.shape} and {b.shape} differ')


class Sum(_SameShape):

	name = 'add'
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		a, b = inputs
		self._check(self.name, a, b)
		
		return a + b, ()
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		return adjoint, adjoint


class Difference(_SameShape):

	name = 'subtract'
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		a, b = inputs
		self._check(self.name, a, b)
		
		return a - b, ()
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		return adjoint, -adjoint


class Product(_SameShape):

	name = 'multiply'
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		a, b = inputs
		self._check(self.name, a, b)
		
		return a * b, (a, b)
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		a, b = saved
		
		return adjoint * b, adjoint * a


class Scale(Operation):

	name = 'scale'
	
	__slots__ = ('factor',)
	
	def __init__(self, factor: float) -> None:
		self.factor = float(factor)
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		(a,) = inputs
		
		return a * self.factor, ()
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		return (adjoint * self.factor,)


class BiasAddition(Operation):
	'''
	Adds a per-channel bias. The channel axis is the last axis of
	dense activations and the third-from-last of feature maps.
	'''
	
	name = 'add_bias'
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		x, bias = inputs
		axis = self._channel_axis(x)
		
		if bias.ndim != 1 or x.shape[axis] != bias.shape[0]:
			raise DimensionMismatch(
				self.name, f'bias {bias.shape} does not fit {x.shape}'
			)
		
		shape = [1] * x.ndim
		shape[axis] = bias.shape[0]
		
		return x + bias.reshape(shape), (axis, x.ndim)
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		axis, ndim = saved
		axis = axis % ndim
		other_axes = tuple(i for i in range(ndim) if i != axis)
		
		return adjoint, adjoint.sum(axis = other_axes)
	
	@staticmethod
	def _channel_axis(x: FloatArray) -> int:
		return -3 if x.ndim >= 3 else -1


class Reshape(Operation):

	name = 'reshape'
	
	__slots__ = ('shape',)
	
	def __init__(self, shape: Sequence[int]) -> None:
		self.shape = tuple(shape)
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		(a,) = inputs
		
		try:
			return a.reshape(self.shape), (a.shape,)
		except ValueError as error:
			raise DimensionMismatch(self.name, str(error)) from error
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		(shape,) = saved
		
		return (adjoint.reshape(shape),)


class Sigmoid(Operation):

	name = 'sigmoid'
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		(a,) = inputs
		output = np.exp(-np.logaddexp(0.0, -a))
		
		return output, (output,)
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		(output,) = saved
		
		return (adjoint * output * (1.0 - output),)


class Rectifier(Operation):

	name = 'relu'
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		(a,) = inputs
		positive = a > 0
		
		return np.where(positive, a, 0.0), (positive,)
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		(positive,) = saved
		
		return (np.where(positive, adjoint, 0.0),)


def _as_batch(x: FloatArray, rank: int) -> tuple[FloatArray, bool]:
	if x.ndim == rank:
		return x[np.newaxis], True
	
	return x, False


class Convolution(Operation):
	'''
	Valid (unpadded), stride-1 cross-correlation of
	``[c_in×h×w]`` or ``[n×c_in×h×w]`` inputs with
	``[c_out×c_in×kh×kw]`` kernels.
	'''
	
	name = 'conv2d'
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		x, kernels = inputs
		
		if x.ndim not in (3, 4) or kernels.ndim != 4:
			raise DimensionMismatch(
				self.name, f'unsupported ranks {x.shape}, {kernels.shape}'
			)
		
		batch, unbatched = _as_batch(x, 3)
		_, channels, height, width = batch.shape
		_, kernel_channels, kernel_height, kernel_width = kernels.shape
		
		if channels != kernel_channels:
			raise DimensionMismatch(
				self.name, f'{channels} input channels, kernels expect '
				f'{kernel_channels}'
			)
		
		if kernel_height > height or kernel_width > width:
			raise DimensionMismatch(
				self.name, f'kernel {kernels.shape[2:]} larger than input '
				f'{(height, width)}'
			)
		
		output = _correlate(batch, kernels)
		
		return (output[0] if unbatched else output), (batch, kernels, unbatched)
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		batch, kernels, unbatched = saved
		adjoint_batch = adjoint[np.newaxis] if unbatched else adjoint
		_, _, kernel_height, kernel_width = kernels.shape
		
		windows = sliding_window_view(
			batch, (kernel_height, kernel_width), axis = (2, 3)
		)
		kernel_adjoint = np.einsum(
			'nchwij,nohw->ocij', windows, adjoint_batch, optimize = True
		)
		
		padded = np.pad(
			adjoint_batch,
			(
				(0, 0), (0, 0),
				(kernel_height - 1, kernel_height - 1),
				(kernel_width - 1, kernel_width - 1)
			)
		)
		flipped = kernels[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
		input_adjoint = _correlate(padded, np.ascontiguousarray(flipped))
		
		if unbatched:
			input_adjoint = input_adjoint[0]
		
		return input_adjoint, kernel_adjoint


def _correlate(batch: FloatArray, kernels: FloatArray) -> FloatArray:
	_, _, kernel_height, kernel_width = kernels.shape
	windows = sliding_window_view(
		batch, (kernel_height, kernel_width), axis = (2, 3)
	)
	
	result: FloatArray = np.einsum(
		'nchwij,ocij->nohw', windows, kernels, optimize = True
	)
	
	return np.ascontiguousarray(result)


class MaxPooling(Operation):
	'''
	2×2 max-pooling with stride 2. The adjoint of each window goes
	to its first maximal element in row-major order.
	'''
	
	name = 'maxpool2d'
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		(x,) = inputs
		
		if x.ndim < 3:
			message = f'expected [c×h×w], got {x.shape}'
			raise DimensionMismatch(self.name, message)
		
		*leading, height, width = x.shape
		
		if height % 2 or width % 2:
			raise DimensionMismatch(
				self.name, f'extents {(height, width)} are not even'
			)
		
		windows = (
			x.reshape(*leading, height // 2, 2, width // 2, 2)
				.swapaxes(-3, -2)
				.reshape(*leading, height // 2, width // 2, 4)
		)
		winners = windows.argmax(axis = -1)[..., np.newaxis]
		output = np.take_along_axis(windows, winners, axis = -1)[..., 0]
		
		return output, (winners, x.shape)
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		winners, shape = saved
		*leading, height, width = shape
		
		routed = np.zeros((*adjoint.shape, 4))
		np.put_along_axis(routed, winners, adjoint[..., np.newaxis], axis = -1)
		
		routed = (
			routed.reshape(*leading, height // 2, width // 2, 2, 2)
				.swapaxes(-3, -2)
				.reshape(shape)
		)
		
		return (routed,)


def softmax_array(logits: FloatArray) -> FloatArray:
	'''
	The softmax of plain arrays along the last axis, off the tape.
	'''
	
	shifted = logits - logits.max(axis = -1, keepdims = True)
	exponentials = np.exp(shifted)
	
	totals = exponentials.sum(axis = -1, keepdims = True)
	result: FloatArray = exponentials / totals
	
	return result


def _check_labels(labels: IntArray, classes: int) -> None:
	if labels.size and (labels.min() < 0 or labels.max() >= classes):
		raise InvalidLabel(labels.tolist(), classes)


class SoftmaxCrossEntropy(Operation):
	'''
	``-log softmax(logits)[label]``, summed over
	the rows of ``[B×C]`` logits.
	'''
	
	name = 'softmax_ce'
	
	__slots__ = ('labels',)
	
	def __init__(self, labels: int | Sequence[int] | IntArray) -> None:
		self.labels = np.asarray(labels, dtype = np.int64)
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		(logits,) = inputs
		batch, unbatched = (logits[np.newaxis], True) if logits.ndim == 1 \
			else (logits, False)
		labels = self.labels.reshape(-1)
		
		if batch.ndim != 2 or batch.shape[1] < 2:
			raise DimensionMismatch(
				self.name,
				f'expected [C] or [B×C] with C ≥ 2, got {logits.shape}'
			)
		
		if labels.shape[0] != batch.shape[0]:
			raise DimensionMismatch(
				self.name, f'{labels.shape[0]} labels for {batch.shape[0]} rows'
			)
		
		_check_labels(labels, batch.shape[1])
		
		shifted = batch - batch.max(axis = 1, keepdims = True)
		log_normalizers = np.log(np.exp(shifted).sum(axis = 1))
		rows = np.arange(batch.shape[0])
		losses = log_normalizers - shifted[rows, labels]
		
		return np.asarray(losses.sum()), (batch, labels, unbatched)
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		batch, labels, unbatched = saved
		
		gradient = softmax_array(batch)
		gradient[np.arange(batch.shape[0]), labels] -= 1.0
		gradient *= adjoint
		
		return (gradient[0] if unbatched else gradient,)


class Softmax(Operation):

	name = 'softmax'
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		(logits,) = inputs
		output = softmax_array(logits)
		
		return output, (output,)
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		(output,) = saved
		inner = (adjoint * output).sum(axis = -1, keepdims = True)
		
		return (output * (adjoint - inner),)


class Selection(Operation):
	'''
	Picks ``x[..., label]`` from ``[C]`` or ``[B×C]`` values.
	'''
	
	name = 'pick'
	
	__slots__ = ('label',)
	
	def __init__(self, label: int) -> None:
		self.label = label
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		(x,) = inputs
		_check_labels(np.asarray([self.label]), x.shape[-1])
		
		return x[..., self.label].copy(), (x.shape,)
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		(shape,) = saved
		routed = np.zeros(shape)
		routed[..., self.label] = adjoint
		
		return (routed,)


class Total(Operation):

	name = 'total'
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		(x,) = inputs
		
		return np.asarray(x.sum()), (x.shape,)
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		(shape,) = saved
		
		return (np.full(shape, float(adjoint)),)


class Stack(Operation):
	'''
	Joins same-shaped values along a new leading axis.
	'''
	
	name = 'stack'
	
	@override
	def forward(self, *inputs: FloatArray) -> tuple[FloatArray, Saved]:
		shapes = {x.shape for x in inputs}
		
		if len(shapes) != 1:
			raise DimensionMismatch(self.name, f'differing shapes {shapes}')
		
		return np.stack(inputs), ()
	
	@override
	def backward(self, saved: Saved, adjoint: FloatArray) -> Adjoints:
		return tuple(adjoint)


def _apply(operation: Operation, *operands: Tensor | Variable) -> Any:
	tape = next(
		(operand.tape for operand in operands if isinstance(operand, Variable)),
		None
	)
	
	if tape is None:
		arrays = (np.asarray(operand) for operand in operands)
		output, _ = operation.forward(*arrays)
		_must_be_finite(output, operation.name)
		
		return Tensor._adopt(output)
	
	variables = (
		operand if isinstance(operand, Variable) else tape.constant(operand)
		for operand in operands
	)
	
	return tape.apply(operation, *variables)


@overload
def matmul(a: Tensor, b: Tensor, /) -> Tensor:
	...


@overload
def matmul(a: Variable, b: Variable | Tensor, /) -> Variable:
	...


@overload
def matmul(a: Tensor, b: Variable, /) -> Variable:
	...


def matmul(a: Variable | Tensor, b: Variable | Tensor, /) -> Variable | Tensor:
	'''
	``[m×k] × [k×n] → [m×n]``.
	
	:raise DimensionMismatch: If the inner extents differ.
	'''
	
	return _apply(MatrixProduct(), a, b)  # type: ignore[no-any-return]


@overload
def conv2d(x: Tensor, kernels: Tensor, /) -> Tensor:
	...


@overload
def conv2d(x: Variable, kernels: Variable | Tensor, /) -> Variable:
	...


@overload
def conv2d(x: Tensor, kernels: Variable, /) -> Variable:
	...


def conv2d(
	x: Variable | Tensor, kernels: Variable | Tensor, /
) -> Variable | Tensor:
	'''
	Valid, stride-1 convolution: ``h' = h - kh + 1``, ``w' = w - kw + 1``.
	
	:raise DimensionMismatch: \
		If channels differ or the kernel is larger than the input.
	'''
	
	return _apply(Convolution(), x, kernels)  # type: ignore[no-any-return]


@overload
def maxpool2d(x: Tensor, /) -> Tensor:
	...


@overload
def maxpool2d(x: Variable, /) -> Variable:
	...


def maxpool2d(x: Variable | Tensor, /) -> Variable | Tensor:
	'''
	2×2 max-pooling over the last two axes.
	
	:raise DimensionMismatch: If either extent is odd.
	'''
	
	return _apply(MaxPooling(), x)  # type: ignore[no-any-return]


@overload
def softmax_ce(
	logits: Tensor, labels: int | Sequence[int] | IntArray, /
) -> float:
	...


@overload
def softmax_ce(
	logits: Variable, labels: int | Sequence[int] | IntArray, /
) -> Variable:
	...


def softmax_ce(
	logits: Variable | Tensor,
	labels: int | Sequence[int] | IntArray, /
) -> Variable | float:
	'''
	Cross-entropy of the softmax of ``logits`` against ``labels``,
	summed over rows for ``[B×C]`` logits.
	
	:raise InvalidLabel: If a label is not in ``[0, C)``.
	'''
	
	result = _apply(SoftmaxCrossEntropy(labels), logits)
	
	if isinstance(result, Tensor):
		return result.item()
	
	return result  # type: ignore[no-any-return]


def add(a: Variable, b: Variable | Tensor, /) -> Variable:
	return _apply(Sum(), a, b)  # type: ignore[no-any-return]


def subtract(a: Variable, b: Variable | Tensor, /) -> Variable:
	return _apply(Difference(), a, b)  # type: ignore[no-any-return]


def multiply(a: Variable, b: Variable | Tensor, /) -> Variable:
	return _apply(Product(), a, b)  # type: ignore[no-any-return]


def scale(a: Variable, factor: float, /) -> Variable:
	return _apply(Scale(factor), a)  # type: ignore[no-any-return]


def transpose(a: Variable, /) -> Variable:
	return _apply(Transpose(), a)  # type: ignore[no-any-return]


def add_bias(x: Variable, bias: Variable | Tensor, /) -> Variable:
	return _apply(BiasAddition(), x, bias)  # type: ignore[no-any-return]


def reshape(x: Variable, shape: Sequence[int], /) -> Variable:
	return _apply(Reshape(shape), x)  # type: ignore[no-any-return]


def sigmoid(x: Variable, /) -> Variable:
	return _apply(Sigmoid(), x)  # type: ignore[no-any-return]


def relu(x: Variable, /) -> Variable:
	return _apply(Rectifier(), x)  # type: ignore[no-any-return]


def softmax(x: Variable, /) -> Variable:
	return _apply(Softmax(), x)  # type: ignore[no-any-return]


def pick(x: Variable, label: int, /) -> Variable:
	return _apply(Selection(label), x)  # type: ignore[no-any-return]


def total(x: Variable, /) -> Variable:
	return _apply(Total(), x)  # type: ignore[no-any-return]


def stack(values: Sequence[Variable], /) -> Variable:
	if not values:
		raise DimensionMismatch('stack', 'nothing to stack')
	
	return _apply(Stack(), *values)  # type: ignore[no-any-return]


def accumulate(values: Sequence[Variable], /) -> Variable:
	'''
	Element-wise sum of one or more same-shaped variables.
	'''
	
	iterator: Iterator[Variable] = iter(values)
	result = next(iterator)
	
	for value in iterator:
		result = add(result, value)
	
	return result


def affine(
	x: Variable, weights: Variable | Tensor, bias: Variable | Tensor, /
) -> Variable:
	'''
	The synaptic projection of a layer: a dense product with
	``[out×in]`` weights (inputs flattened behind the batch axis)
	or a convolution with ``[c_out×c_in×kh×kw]`` kernels,
	followed by the bias.
	'''
	
	weight_array = weights.array if isinstance(weights, Variable) \
		else weights.data
	
	if weight_array.ndim == 4:
		return add_bias(conv2d(x, weights), bias)
	
	features = x.shape[1:]
	flat = reshape(x, (x.shape[0], int(np.prod(features))))
	
	if isinstance(weights, Variable):
		weights_t = transpose(weights)
	else:
		weights_t = x.tape.constant(weight_array.T)
	
	return add_bias(matmul(flat, weights_t), bias)
