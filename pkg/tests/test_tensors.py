import math
from collections.abc import Callable

import numpy as np
import pytest
from hypothesis import given, settings

from spike_inversion.tensors import (
	add_bias, affine, conv2d, DimensionMismatch, FloatArray, InvalidLabel,
	matmul, maxpool2d, NonFiniteValues, pick, relu, sigmoid, softmax,
	softmax_array, softmax_ce, Tape, TapeMisuse, Tensor, total, transpose,
	Variable
)
from . import numerical_gradient, relative_error
from .strategies import real_arrays


def _backward(
	operation: Callable[[Variable], Variable],
	at: FloatArray, adjoint: FloatArray
) -> FloatArray:
	tape = Tape()
	x = tape.watch(at)
	
	return tape.gradients(operation(x), adjoint).array(x)


def _forward(operation: Callable[[Variable], Variable], at: FloatArray) -> FloatArray:
	tape = Tape(recording = False)
	
	return operation(tape.constant(at)).array


def _check_gradient(
	operation: Callable[[Variable], Variable],
	at: FloatArray, tolerance: float = 1e-3
) -> None:
	rng = np.random.default_rng(1)
	adjoint = rng.normal(size = _forward(operation, at).shape)
	
	analytic = _backward(operation, at, adjoint)
	numeric = numerical_gradient(
		lambda point: float((_forward(operation, point) * adjoint).sum()), at
	)
	
	assert relative_error(analytic, numeric) <= tolerance


@pytest.mark.parametrize('a, b, expected', [
	([[1, 0], [0, 1]], [[1, 2], [3, 4]], [[1, 2], [3, 4]]),
	([[1, 2], [3, 4]], [[5], [6]], [[17], [39]]),
	([[0, 0], [0, 0], [0, 0]], [[3, -1], [2, 7]], [[0, 0], [0, 0], [0, 0]]),
])
def test_matmul(a, b, expected):
	assert matmul(Tensor(a), Tensor(b)) == Tensor(expected)


def test_matmul_inner_extents_must_match():
	with pytest.raises(DimensionMismatch):
		matmul(Tensor([[1, 2, 3]]), Tensor([[1, 2]]))


def test_matmul_adjoints():
	tape = Tape()
	a = tape.watch(Tensor([[1.0, 2.0], [3.0, 4.0]]))
	b = tape.watch(Tensor([[5.0], [6.0]]))
	gradients = tape.gradients(matmul(a, b), Tensor([[1.0], [2.0]]))
	
	assert gradients[a] == Tensor([[5.0, 6.0], [10.0, 12.0]])
	assert gradients[b] == Tensor([[7.0], [10.0]])


def test_conv2d_identity_kernel():
	image = np.arange(12, dtype = np.float64).reshape(1, 3, 4)
	
	assert conv2d(Tensor(image), Tensor(np.ones((1, 1, 1, 1)))) == Tensor(image)


def test_conv2d_local_sums():
	image = Tensor(np.arange(1, 10, dtype = np.float64).reshape(1, 3, 3))
	sums = conv2d(image, Tensor(np.ones((1, 1, 2, 2))))
	
	assert sums == Tensor([[[12.0, 16.0], [24.0, 28.0]]])


def test_conv2d_batched_matches_unbatched():
	rng = np.random.default_rng(3)
	images = rng.normal(size = (3, 2, 6, 6))
	kernels = Tensor(rng.normal(size = (4, 2, 3, 3)))
	
	batched = conv2d(Tensor(images), kernels).data
	
	for index, image in enumerate(images):
		np.testing.assert_allclose(batched[index], conv2d(Tensor(image), kernels).data)


@pytest.mark.parametrize('image_shape, kernel_shape', [
	((1, 3, 3), (1, 1, 4, 4)),
	((2, 5, 5), (1, 1, 3, 3)),
	((5, 5), (1, 1, 3, 3)),
])
def test_conv2d_invalid_shapes(image_shape, kernel_shape):
	with pytest.raises(DimensionMismatch):
		conv2d(Tensor(np.zeros(image_shape)), Tensor(np.zeros(kernel_shape)))


def test_conv2d_input_gradient():
	rng = np.random.default_rng(4)
	kernels = Tensor(rng.normal(size = (2, 1, 3, 3)))
	
	_check_gradient(lambda x: conv2d(x, kernels), rng.normal(size = (1, 6, 6)), 1e-4)


def test_conv2d_kernel_gradient():
	rng = np.random.default_rng(5)
	image = Tensor(rng.normal(size = (1, 6, 6)))
	
	_check_gradient(lambda k: conv2d(image, k), rng.normal(size = (2, 1, 3, 3)), 1e-4)


def test_maxpool2d_of_constant_input_is_constant():
	pooled = maxpool2d(Tensor(np.full((2, 4, 6), 3.5)))
	
	assert pooled == Tensor(np.full((2, 2, 3), 3.5))


def test_maxpool2d_takes_window_maximum():
	assert maxpool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]])) == Tensor([[[4.0]]])


def test_maxpool2d_routes_ties_to_first_maximum():
	tape = Tape()
	x = tape.watch(Tensor([[[5.0, 5.0], [0.0, 0.0]]]))
	gradients = tape.gradients(maxpool2d(x), Tensor([[[1.0]]]))
	
	assert gradients[x] == Tensor([[[1.0, 0.0], [0.0, 0.0]]])


def test_maxpool2d_rejects_odd_extents():
	with pytest.raises(DimensionMismatch):
		maxpool2d(Tensor(np.zeros((1, 3, 4))))


def test_maxpool2d_gradient():
	rng = np.random.default_rng(6)
	
	_check_gradient(maxpool2d, rng.normal(size = (2, 4, 4)))


@pytest.mark.parametrize('logits', [
	pytest.param(np.array([1.0, 2.0, 3.0]), id = 'vector'),
	pytest.param(np.array([[0.0, 0.0], [5.0, -5.0]]), id = 'rows'),
	pytest.param(np.array([1000.0, 999.0, -1000.0]), id = 'huge'),
])
def test_softmax_array_matches_the_taped_softmax(logits):
	result = softmax_array(logits)
	
	np.testing.assert_allclose(result, _forward(softmax, logits))
	np.testing.assert_allclose(result.sum(axis = -1), 1.0)


def test_softmax_array_ignores_a_common_shift():
	logits = np.array([[0.5, -1.0, 2.0]])
	
	np.testing.assert_allclose(softmax_array(logits + 700.0), softmax_array(logits))


def test_softmax_ce_of_uniform_logits():
	assert softmax_ce(Tensor(np.zeros(10)), 3) == pytest.approx(math.log(10))


def test_softmax_ce_of_confident_logits():
	assert softmax_ce(Tensor([10.0, -10.0]), 0) == pytest.approx(2.06e-9, rel = 1e-2)


def test_softmax_ce_gradient_at_uniform_logits():
	tape = Tape()
	logits = tape.watch(Tensor(np.zeros(4)))
	gradients = tape.gradients(softmax_ce(logits, 2))
	
	np.testing.assert_allclose(gradients[logits].data, [0.25, 0.25, -0.75, 0.25])


def test_softmax_ce_sums_over_rows():
	logits = Tensor(np.zeros((3, 10)))
	
	assert softmax_ce(logits, [0, 4, 9]) == pytest.approx(3 * math.log(10))


@pytest.mark.parametrize('label', [-1, 2, 7])
def test_softmax_ce_rejects_labels_out_of_range(label):
	with pytest.raises(InvalidLabel):
		softmax_ce(Tensor([1.0, 2.0]), label)


def test_softmax_ce_needs_two_classes():
	with pytest.raises(DimensionMismatch):
		softmax_ce(Tensor([1.0]), 0)


@pytest.mark.parametrize('operation', [
	pytest.param(sigmoid, id = 'sigmoid'),
	pytest.param(softmax, id = 'softmax'),
	pytest.param(lambda x: softmax_ce(x, [1, 0]), id = 'softmax_ce'),
	pytest.param(lambda x: pick(softmax(x), 2), id = 'pick'),
	pytest.param(lambda x: total(sigmoid(x)), id = 'total'),
	pytest.param(transpose, id = 'transpose'),
	pytest.param(lambda x: x * 2.5 - sigmoid(x), id = 'scale, subtract'),
])
def test_elementwise_gradients(operation):
	rng = np.random.default_rng(7)
	
	_check_gradient(operation, rng.normal(size = (2, 3)))


def test_relu_gradient_away_from_zero():
	_check_gradient(relu, np.array([[-1.5, 0.5, 2.0], [0.3, -0.2, 1.1]]))


def test_two_layer_network_gradient():
	rng = np.random.default_rng(8)
	first, second = Tensor(rng.normal(size = (5, 4))), Tensor(rng.normal(size = (3, 5)))
	bias = Tensor(rng.normal(size = 3))
	
	def network(x: Variable) -> Variable:
		hidden = sigmoid(affine(x, first, Tensor(np.zeros(5))))
		return softmax_ce(add_bias(matmul(hidden, Tensor(second.data.T)), bias), [0, 2])
	
	_check_gradient(network, rng.normal(size = (2, 4)))


@settings(max_examples = 25, deadline = None)
@given(real_arrays((2, 3), -3.0, 3.0))
def test_sigmoid_gradient_property(values):
	_check_gradient(sigmoid, values)


def test_operations_leave_inputs_unmodified():
	values = np.array([[1.0, -2.0], [3.0, 4.0]])
	tensor = Tensor(values)
	
	maxpool2d(Tensor(values[np.newaxis]))
	matmul(tensor, tensor)
	
	np.testing.assert_array_equal(tensor.data, values)


def test_tensor_rejects_non_finite_values():
	with pytest.raises(NonFiniteValues):
		Tensor([1.0, math.nan])
	
	with pytest.raises(NonFiniteValues):
		Tensor([[math.inf]])


def test_tensor_is_read_only():
	tensor = Tensor([1.0, 2.0])
	
	with pytest.raises(ValueError):
		tensor.data[0] = 5.0


def test_operation_producing_infinity_is_rejected():
	tape = Tape()
	x = tape.watch(Tensor([[1e200]]))
	
	with pytest.raises(NonFiniteValues):
		matmul(x, tape.constant(Tensor([[1e200]])))


def test_tape_replays_once():
	tape = Tape()
	x = tape.watch(Tensor([1.0, 2.0]))
	output = total(x)
	tape.gradients(output)
	
	with pytest.raises(TapeMisuse):
		tape.gradients(output)


def test_tape_without_recording_cannot_replay():
	tape = Tape(recording = False)
	output = total(tape.watch(Tensor([1.0])))
	
	assert len(tape) == 0
	
	with pytest.raises(TapeMisuse):
		tape.gradients(output)


def test_tapes_do_not_mix():
	first, second = Tape(), Tape()
	x = first.watch(Tensor([[1.0]]))
	y = second.watch(Tensor([[2.0]]))
	
	with pytest.raises(TapeMisuse):
		matmul(x, y)


def test_unreached_variables_get_zero_gradients():
	tape = Tape()
	x = tape.watch(Tensor([1.0, 2.0]))
	unused = tape.watch(Tensor([[3.0, 4.0]]))
	gradients = tape.gradients(total(x))
	
	assert gradients[unused] == Tensor([[0.0, 0.0]])


def test_adjoint_shape_must_match_output():
	tape = Tape()
	x = tape.watch(Tensor([[1.0, 2.0]]))
	
	with pytest.raises(DimensionMismatch):
		tape.gradients(sigmoid(x), Tensor([1.0, 2.0, 3.0]))


def test_fan_out_accumulates_adjoints():
	tape = Tape()
	x = tape.watch(Tensor([1.0, -1.0]))
	gradients = tape.gradients(total(x + x * 3.0))
	
	assert gradients[x] == Tensor([4.0, 4.0])
