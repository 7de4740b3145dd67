'''
Shared fixtures: finite-difference oracles, tiny architectures,
and evaluators whose posteriors are known in advance.
'''

from collections.abc import Callable
from typing import Any

import numpy as np

from spike_inversion.config import ModelKind
from spike_inversion.models import build_model, Model, ModelSpec
from spike_inversion.tensors import FloatArray


def numerical_gradient(
	function: Callable[[FloatArray], float],
	at: FloatArray, epsilon: float = 1e-4
) -> FloatArray:
	'''
	Central differences of a scalar ``function`` around ``at``.
	'''
	
	point = np.array(at, dtype = np.float64)
	gradient = np.zeros_like(point)
	
	for index in np.ndindex(point.shape):
		original = point[index]
		
		point[index] = original + epsilon
		above = function(point.copy())
		point[index] = original - epsilon
		below = function(point.copy())
		point[index] = original
		
		gradient[index] = (above - below) / (2 * epsilon)
	
	return gradient


def relative_error(actual: FloatArray, expected: FloatArray) -> float:
	difference = np.linalg.norm(np.asarray(actual) - np.asarray(expected))
	scale = max(np.linalg.norm(actual), np.linalg.norm(expected), 1e-12)
	
	return float(difference / scale)


_TINY: dict[ModelKind, dict[str, Any]] = {
	'snn-mlp': {'input_shape': (1, 4, 4), 'hidden': (8,)},
	'ann-mlp': {'input_shape': (1, 4, 4), 'hidden': (8,)},
	'snn-cnn': {'input_shape': (1, 16, 16), 'channels': (2, 3)},
	'ann-cnn': {'input_shape': (1, 16, 16), 'channels': (2, 3)},
}


def tiny_spec(kind: ModelKind = 'snn-mlp', /, classes: int = 3, **overrides: Any) -> ModelSpec:
	values: dict[str, Any] = {
		'kind': kind, 'classes': classes, 'time_steps': 5, **_TINY[kind]
	}
	values.update(overrides)
	
	return ModelSpec.create(**values)


def tiny_model(kind: ModelKind = 'snn-mlp', seed: int = 0, **overrides: Any) -> Model:
	return build_model(tiny_spec(kind, **overrides), seed)


class Verbatim:
	'''
	An evaluator reading each ``[C]`` sample as its own posterior.
	'''
	
	def posteriors(self, samples: FloatArray) -> FloatArray:
		return np.asarray(samples, dtype = np.float64)


def one_hot(label: int, classes: int, confidence: float = 1.0) -> FloatArray:
	rest = (1.0 - confidence) / (classes - 1)
	row = np.full(classes, rest)
	row[label] = confidence
	
	return row
