'''
Model inversion: reconstructing what a class "looks like"
to a trained classifier from the classifier alone.

Three procedures are provided:

* :func:`mi_face`, gradient descent in pixel space against
  a conventional network;
* :func:`blv1_attack`, which flips individual input spikes of a
  spiking network, guided by binarized surrogate gradients;
* :func:`blv2_attack`, which instead optimizes the firing
  probability of every input voxel, estimating gradients over a
  population of sampled spike trains and stepping with RMSProp
  and momentum.

All of them minimize the identity loss ``1 - M_y(x)``, the
complement of the target posterior, optionally with a penalty
on the fraction of spiking voxels.
'''

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Annotated, Any

import numpy as np
from pydantic import Field, PositiveFloat, PositiveInt

from .config import AttackMethod, InvalidConfiguration, Settings, validated
from .encoding import SpikeTrain, StaticImage
from .models import ConventionalModel, Model, predict, SpikingModel
from .neurons import posterior, snn_backward, snn_forward
from .tensors import (
	DimensionMismatch, FloatArray, InvalidLabel, NonFiniteValues,
	pick, scale, softmax, Tape, Tensor, total
)


logger = logging.getLogger(__name__)

RMS_EPSILON = 1e-8


class EmptyPopulation(ValueError):
	'''
	Raised when a gradient estimate is asked of no samples.
	'''
	
	def __init__(self) -> None:
		super().__init__('Cannot estimate a gradient from an empty population')


class AttackDiverged(FloatingPointError):
	'''
	Raised when an attack's iterate stops being finite.
	'''
	
	def __init__(self, method: str, iteration: int) -> None:
		super().__init__(f'{method} diverged at iteration {iteration}')
		
		self.method = method
		self.iteration = iteration


class AttackConfig(Settings):
	'''
	Settings of a single-class attack. ``population`` (K),
	``sparsity`` (ξ), ``rms_decay`` (ρ) and ``momentum`` (β)
	only concern :func:`blv2_attack`; ``cost_goal``
	only concerns :func:`mi_face`.
	'''
	
	target_class: Annotated[int, Field(ge = 0)]
	iterations: Annotated[int, Field(ge = 0)] = 2000
	population: PositiveInt = 8
	sparsity: Annotated[float, Field(ge = 0)] = 0.0
	rms_decay: Annotated[float, Field(ge = 0, lt = 1)] = 0.9
	momentum: Annotated[float, Field(ge = 0, lt = 1)] = 0.9
	learning_rate: PositiveFloat = 0.01
	seed: int = 0
	samples: PositiveInt = 20
	patience: PositiveInt = 20
	confidence_goal: Annotated[float, Field(gt = 0, le = 1)] = 0.99
	initial_probability: Annotated[float, Field(ge = 0, le = 1)] = 0.5
	cost_goal: Annotated[float, Field(ge = 0)] = 0.001
	
	@classmethod
	def create(cls, **values: Any) -> AttackConfig:
		return validated(cls, values)


@dataclass(frozen = True, slots = True)
class BernoulliParams:
	'''
	Firing probabilities of every ``[T×features]`` voxel.
	'''
	
	probabilities: Tensor
	
	def __post_init__(self) -> None:
		values = self.probabilities.data
		
		if values.size and (values.min() < 0.0 or values.max() > 1.0):
			raise InvalidConfiguration(
				f'Probabilities must be in [0, 1], '
				f'got [{values.min()}, {values.max()}]'
			)
	
	def sample(self, rng: np.random.Generator, count: int) -> FloatArray:
		'''
		``count`` independent spike trains, ``[count×T×features]``.
		'''
		
		values = self.probabilities.data
		draws = rng.random((count, *values.shape))
		spikes: FloatArray = (draws < values).astype(np.float64)
		
		return spikes


@dataclass(frozen = True, slots = True, eq = False)
class AttackResult:
	'''
	The outcome of attacking one class.
	
	``reconstruction`` is the final image (MI-FACE), the best spike
	train (BL-v1) or the final firing probabilities (BL-v2).
	``samples`` are the emitted reconstructions: ``[S×features]``
	images or ``[S×T×features]`` spike trains. ``confidence`` is the
	mean target posterior of the emitted samples, ``peak_confidence``
	the highest one seen while optimizing.
	'''
	
	method: AttackMethod
	target_class: int
	reconstruction: Tensor
	loss_trace: tuple[float, ...]
	confidence: float
	peak_confidence: float
	samples: FloatArray
	frame_shape: tuple[int, ...]
	
	@property
	def iterations(self) -> int:
		return len(self.loss_trace)
	
	@property
	def spiking(self) -> bool:
		return self.method != 'miface'
	
	def best_so_far(self) -> FloatArray:
		result: FloatArray = np.minimum.accumulate(np.asarray(self.loss_trace))
		
		return result


def sparsity_penalty(spikes: SpikeTrain, sparsity: float) -> float:
	'''
	``ξ`` times the fraction of voxels that spike.
	'''
	
	if sparsity < 0:
		raise InvalidConfiguration(f'Sparsity must be ≥ 0, got {sparsity}')
	
	if not sparsity:
		return 0.0
	
	return sparsity * spikes.spike_count / spikes.data.size


def identity_loss(
	model: Model, sample: SpikeTrain | StaticImage,
	target: int, sparsity: float = 0.0
) -> float:
	'''
	``1 - M_y(x) + P_ξ(x)``. The sparsity penalty only
	applies to spike trains.
	'''
	
	_check_target(model, target)
	
	confidence = predict(model, sample).data[target]
	penalty = sparsity_penalty(sample, sparsity) \
		if isinstance(sample, SpikeTrain) else 0.0
	
	return 1.0 - float(confidence) + penalty


def _check_target(model: Model, target: int) -> None:
	if not 0 <= target < model.spec.classes:
		raise InvalidLabel(target, model.spec.classes)


def _require_spiking(model: Model, method: str) -> SpikingModel:
	if not isinstance(model, SpikingModel):
		raise InvalidConfiguration(f'{method} only attacks spiking models')
	
	return model


def population_gradients(
	model: SpikingModel, spikes: FloatArray,
	target: int, sparsity: float = 0.0
) -> tuple[FloatArray, FloatArray, FloatArray]:
	'''
	Identity losses ``[K]``, their gradients with respect to the
	input spikes ``[K×T×features]`` and the target confidences ``[K]``
	of ``K`` spike trains, computed as one batch. Samples never
	interact, so each gradient is that of its own loss.
	'''
	
	count, time_steps, features = spikes.shape
	voxels = time_steps * features
	
	_, record = snn_forward(
		model.layers, spikes.transpose(1, 0, 2),
		frame_shape = model.spec.input_shape,
		surrogate = model.surrogate
	)
	
	probabilities = posterior(record.steps, model.spec.posterior_mode)
	confidence = pick(probabilities, target)
	
	_, inputs = snn_backward(record, scale(total(confidence), -1.0))
	
	penalties = sparsity * spikes.reshape(count, -1).sum(axis = 1) / voxels
	losses = 1.0 - confidence.array + penalties
	gradients = inputs.data.transpose(1, 0, 2) + sparsity / voxels
	
	return losses, gradients, confidence.array.copy()


def nes_gradient(
	losses: Sequence[float] | FloatArray,
	gradients: Sequence[Tensor] | FloatArray
) -> Tensor:
	'''
	The average of per-sample gradients weighted by ``exp(-L_i)``;
	samples with lower loss count more. Weights are computed
	relative to the lowest loss.
	
	:raise EmptyPopulation: If there are no samples.
	:raise DimensionMismatch: If there is not one loss per gradient.
	'''
	
	loss_values = np.asarray(losses, dtype = np.float64).reshape(-1)
	
	if isinstance(gradients, np.ndarray):
		stacked = np.asarray(gradients, dtype = np.float64)
	elif gradients:
		stacked = np.stack([np.asarray(gradient) for gradient in gradients])
	else:
		stacked = np.zeros((0,))
	
	if not loss_values.size or not stacked.size:
		raise EmptyPopulation
	
	if loss_values.shape[0] != stacked.shape[0]:
		raise DimensionMismatch(
			'nes_gradient',
			f'{loss_values.shape[0]} losses for {stacked.shape[0]} gradients'
		)
	
	weights = np.exp(-(loss_values - loss_values.min()))
	estimate = np.tensordot(weights, stacked, axes = 1) / weights.sum()
	
	return Tensor(estimate)


def _clamp_scale(values: FloatArray) -> FloatArray:
	clamped = np.maximum(values, 0.0)
	highest = clamped.max(initial = 0.0)
	
	if highest > 1.0:
		clamped = clamped / highest
	
	return clamped


def clamp_scale(values: Tensor | FloatArray) -> BernoulliParams:
	'''
	Clamp negative values to 0, then, if any value exceeds 1,
	divide everything by the largest value. Ratios between
	positive values survive.
	'''
	
	array = np.asarray(values, dtype = np.float64)
	
	return BernoulliParams(Tensor(_clamp_scale(array)))


def _flip(
	spikes: FloatArray, gradient: FloatArray,
	rng: np.random.Generator
) -> FloatArray:
	magnitude = np.abs(gradient)
	largest = magnitude.max(initial = 0.0)
	
	if largest == 0.0:
		return spikes
	
	mask = rng.random(gradient.shape) < magnitude / largest
	ternary = mask * np.sign(gradient)
	
	result: FloatArray = np.clip(spikes - ternary, 0.0, 1.0)
	
	return result


def blv1_step(
	model: Model, spikes: SpikeTrain, target: int,
	rng: np.random.Generator, *,
	sparsity: float = 0.0
) -> SpikeTrain:
	'''
	Flip input spikes against the identity loss gradient ``g``: each
	voxel is selected with probability ``|g| / max|g|`` and moved by
	``-sign(g)``; values leaving ``{0, 1}`` are clipped back.
	'''
	
	spiking = _require_spiking(model, 'BL-v1')
	_check_target(spiking, target)
	
	_, gradients, _ = population_gradients(
		spiking, spikes.data.data[np.newaxis], target, sparsity
	)
	
	flipped = _flip(spikes.data.data, gradients[0], rng)
	
	return SpikeTrain(Tensor(flipped), spikes.frame_shape)


def _check_finite(method: str, iteration: int, *arrays: FloatArray) -> None:
	if not all(np.isfinite(array).all() for array in arrays):
		raise AttackDiverged(method, iteration)


def _checked_posteriors(
	model: Model, samples: FloatArray, method: str, iteration: int
) -> FloatArray:
	try:
		posteriors = model.posteriors(samples)
	except NonFiniteValues as error:
		raise AttackDiverged(method, iteration) from error
	
	_check_finite(method, iteration, posteriors)
	
	return posteriors


def blv1_attack(model: Model, config: AttackConfig) -> AttackResult:
	'''
	Iterate :func:`blv1_step` from a random spike train
	(firing probability ``config.initial_probability``) for
	``config.iterations`` steps and return the best iterate.
	'''
	
	spiking = _require_spiking(model, 'BL-v1')
	_check_target(spiking, config.target_class)
	
	spec = spiking.spec
	rng = np.random.default_rng(config.seed)
	shape = (spec.time_steps, spec.features)
	spikes: FloatArray = (rng.random(shape) < config.initial_probability) \
		.astype(np.float64)
	
	trace: list[float] = []
	best_loss, best_spikes, best_confidence, peak = math.inf, spikes, 0.0, 0.0
	
	for iteration in range(config.iterations + 1):
		try:
			losses, gradients, confidences = population_gradients(
				spiking, spikes[np.newaxis],
				config.target_class, config.sparsity
			)
		except NonFiniteValues as error:
			raise AttackDiverged('BL-v1', iteration) from error
		
		loss, confidence = float(losses[0]), float(confidences[0])
		peak = max(peak, confidence)
		
		if loss < best_loss:
			best_loss, best_spikes, best_confidence = loss, spikes, confidence
		
		if iteration == config.iterations:
			break
		
		trace.append(loss)
		spikes = _flip(spikes, gradients[0], rng)
		
		logger.debug(
			'BL-v1 class %d, iteration %d: loss %.5f',
			config.target_class, iteration, loss
		)
	
	logger.info(
		'BL-v1 class %d: %d iterations, best loss %.4f, confidence %.4f',
		config.target_class, len(trace), best_loss, best_confidence
	)
	
	return AttackResult(
		method = 'blv1',
		target_class = config.target_class,
		reconstruction = Tensor(best_spikes),
		loss_trace = tuple(trace),
		confidence = best_confidence,
		peak_confidence = peak,
		samples = best_spikes[np.newaxis].copy(),
		frame_shape = spec.input_shape
	)


def blv2_attack(model: Model, config: AttackConfig) -> AttackResult:
	'''
	Optimize firing probabilities ``X_p`` (initially
	``config.initial_probability`` everywhere). Every iteration draws
	``K`` spike trains from ``X_p``, combines their identity loss
	gradients with :func:`nes_gradient` and moves ``X_p`` by an
	RMSProp-scaled momentum step, then :func:`clamp_scale`\\ s it.
	
	Stops after ``config.iterations`` iterations, or once the best
	population confidence has reached ``config.confidence_goal``
	for ``config.patience`` consecutive iterations. Emits
	``config.samples`` spike trains drawn from the final ``X_p``.
	'''
	
	spiking = _require_spiking(model, 'BL-v2')
	_check_target(spiking, config.target_class)
	
	spec = spiking.spec
	rng = np.random.default_rng(config.seed)
	shape = (spec.time_steps, spec.features)
	
	probabilities = np.full(shape, config.initial_probability)
	mean_square = np.zeros(shape)
	velocity = np.zeros(shape)
	
	trace: list[float] = []
	peak, streak = 0.0, 0
	
	for iteration in range(config.iterations):
		params = BernoulliParams(Tensor(probabilities))
		draws = params.sample(rng, config.population)
		
		try:
			losses, gradients, confidences = population_gradients(
				spiking, draws, config.target_class, config.sparsity
			)
		except NonFiniteValues as error:
			raise AttackDiverged('BL-v2', iteration) from error
		
		gradient = nes_gradient(losses, gradients).data
		
		decay = config.rms_decay
		mean_square = decay * mean_square + (1.0 - decay) * gradient ** 2
		step = config.learning_rate / (np.sqrt(mean_square) + RMS_EPSILON)
		velocity = config.momentum * velocity + gradient
		probabilities = _clamp_scale(probabilities - step * velocity)
		
		_check_finite('BL-v2', iteration, probabilities)
		
		trace.append(float(losses.mean()))
		best = float(confidences.max())
		peak = max(peak, best)
		streak = streak + 1 if best >= config.confidence_goal else 0
		
		logger.debug(
			'BL-v2 class %d, iteration %d: '
			'mean loss %.5f, best confidence %.4f',
			config.target_class, iteration, trace[-1], best
		)
		
		if streak >= config.patience:
			break
	
	final = BernoulliParams(Tensor(probabilities))
	samples = final.sample(rng, config.samples)
	posteriors = _checked_posteriors(spiking, samples, 'BL-v2', len(trace))
	confidence = float(posteriors[:, config.target_class].mean())
	
	logger.info(
		'BL-v2 class %d: %d iterations, '
		'emitted-sample confidence %.4f (peak %.4f)',
		config.target_class, len(trace), confidence, peak
	)
	
	return AttackResult(
		method = 'blv2',
		target_class = config.target_class,
		reconstruction = final.probabilities,
		loss_trace = tuple(trace),
		confidence = confidence,
		peak_confidence = max(peak, confidence),
		samples = samples,
		frame_shape = spec.input_shape
	)


def _pixel_cost(
	model: ConventionalModel, pixels: FloatArray, target: int
) -> tuple[float, FloatArray]:
	tape = Tape()
	image = tape.watch(pixels.reshape(1, *model.spec.input_shape))
	confidence = total(pick(softmax(model.logits(image)), target))
	
	gradient = tape.gradients(scale(confidence, -1.0)).array(image)
	
	return 1.0 - float(confidence.array), gradient.reshape(-1)


def mi_face(model: Model, config: AttackConfig) -> AttackResult:
	'''
	Gradient descent on ``1 - M_y(x)`` in pixel space from a black
	image, clamping pixels to ``[0, 1]`` after every step. Stops after
	``config.iterations`` steps, when the cost falls to
	``config.cost_goal``, or when it has not improved on the last
	``config.patience`` costs. Returns the lowest-cost image.
	'''
	
	if not isinstance(model, ConventionalModel):
		raise InvalidConfiguration('MI-FACE only attacks conventional models')
	
	_check_target(model, config.target_class)
	
	pixels: FloatArray = np.zeros(model.spec.features)
	trace: list[float] = []
	best_cost, best_pixels = math.inf, pixels
	
	for iteration in range(config.iterations):
		try:
			cost, gradient = _pixel_cost(model, pixels, config.target_class)
		except NonFiniteValues as error:
			raise AttackDiverged('MI-FACE', iteration) from error
		
		if cost < best_cost:
			best_cost, best_pixels = cost, pixels
		
		recent = trace[-config.patience:]
		stalled = len(trace) >= config.patience and cost >= max(recent)
		trace.append(cost)
		
		logger.debug(
			'MI-FACE class %d, iteration %d: cost %.5f',
			config.target_class, iteration, cost
		)
		
		if cost <= config.cost_goal or stalled:
			break
		
		pixels = np.clip(pixels - config.learning_rate * gradient, 0.0, 1.0)
		_check_finite('MI-FACE', iteration, pixels)
	else:
		posteriors = _checked_posteriors(
			model, pixels[np.newaxis], 'MI-FACE', len(trace)
		)
		final_cost = 1.0 - float(posteriors[0, config.target_class])
		
		if final_cost < best_cost:
			best_cost, best_pixels = final_cost, pixels
	
	confidence = 1.0 - best_cost
	
	logger.info(
		'MI-FACE class %d: %d iterations, confidence %.4f',
		config.target_class, len(trace), confidence
	)
	
	return AttackResult(
		method = 'miface',
		target_class = config.target_class,
		reconstruction = Tensor(best_pixels),
		loss_trace = tuple(trace),
		confidence = confidence,
		peak_confidence = confidence,
		samples = best_pixels[np.newaxis].copy(),
		frame_shape = model.spec.input_shape
	)
