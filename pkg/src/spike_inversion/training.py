'''
Mini-batch training with Adam.
'''

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Annotated

import numpy as np
from pydantic import Field, PositiveFloat, PositiveInt

from .config import InvalidConfiguration, Settings
from .encoding import Dataset, rate_encode_batch
from .models import Model, ParameterArrays, Parameters
from .tensors import FloatArray, IntArray, InvalidLabel, NonFiniteValues, Tensor


logger = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
	'''
	Raised when the training loss stops being finite.
	'''
	
	def __init__(self, epoch: int, batch: int) -> None:
		super().__init__(
			f'Training diverged at epoch {epoch}, batch {batch}; '
			f'consider a lower learning rate'
		)
		
		self.epoch = epoch
		self.batch = batch


class TrainingConfig(Settings):

	epochs: PositiveInt = 5
	batch_size: PositiveInt = 64
	learning_rate: PositiveFloat = 1e-3
	beta1: Annotated[float, Field(ge = 0, lt = 1)] = 0.9
	beta2: Annotated[float, Field(ge = 0, lt = 1)] = 0.999
	epsilon: PositiveFloat = 1e-8
	seed: int = 0


@dataclass(slots = True)
class Adam:
	'''
	Adam with bias-corrected moment estimates.
	'''
	
	learning_rate: float = 1e-3
	beta1: float = 0.9
	beta2: float = 0.999
	epsilon: float = 1e-8
	steps: int = 0
	_first: list[FloatArray] = field(default_factory = list)
	_second: list[FloatArray] = field(default_factory = list)
	
	def step(
		self, parameters: Parameters, gradients: ParameterArrays
	) -> Parameters:
		'''
		Return ``parameters`` moved one step against ``gradients``.
		'''
		
		flat_parameters = [array for pair in parameters for array in pair]
		flat_gradients = [array for pair in gradients for array in pair]
		
		if not self._first:
			self._first = [np.zeros(p.shape) for p in flat_parameters]
			self._second = [np.zeros(p.shape) for p in flat_parameters]
		
		self.steps += 1
		first_correction = 1.0 - self.beta1 ** self.steps
		second_correction = 1.0 - self.beta2 ** self.steps
		beta1, beta2 = self.beta1, self.beta2
		updated: list[Tensor] = []
		pairs = zip(flat_parameters, flat_gradients)
		
		for index, (parameter, gradient) in enumerate(pairs):
			first = beta1 * self._first[index] + (1.0 - beta1) * gradient
			second = beta2 * self._second[index] + (1.0 - beta2) * gradient ** 2
			self._first[index], self._second[index] = first, second
			
			scale = np.sqrt(second / second_correction) + self.epsilon
			change = first / first_correction / scale
			updated.append(Tensor(parameter.data - self.learning_rate * change))
		
		return tuple(zip(updated[0::2], updated[1::2]))


@dataclass(frozen = True, slots = True)
class EpochRecord:
	epoch: int
	loss: float
	validation_accuracy: float | None


@dataclass(frozen = True, slots = True)
class TrainingHistory:

	epochs: tuple[EpochRecord, ...]
	
	@property
	def final_accuracy(self) -> float | None:
		return self.epochs[-1].validation_accuracy if self.epochs else None


def model_inputs(
	model: Model, dataset: Dataset, indices: IntArray,
	rng: np.random.Generator
) -> FloatArray:
	'''
	What ``model`` is fed for the samples at ``indices``:
	``[T×B×features]`` spikes for spiking models (images are
	rate-encoded from ``rng``), ``[B×features]`` intensities
	for conventional ones (spike trains are rate-decoded).
	'''
	
	samples = dataset.samples[indices]
	
	if model.spiking:
		if dataset.spiking:
			return samples.transpose(1, 0, 2)
		
		return rate_encode_batch(samples, model.spec.time_steps, rng)
	
	if dataset.spiking:
		decoded: FloatArray = samples.mean(axis = 1)
		return decoded
	
	return samples


def _check_dataset(model: Model, dataset: Dataset) -> None:
	if not len(dataset):
		raise InvalidConfiguration('Cannot train on an empty dataset')
	
	if dataset.classes > model.spec.classes:
		raise InvalidLabel(dataset.classes - 1, model.spec.classes)


def train(
	model: Model, dataset: Dataset,
	config: TrainingConfig = TrainingConfig(),
	validation: Dataset | None = None
) -> tuple[Model, TrainingHistory]:
	'''
	Minimize the mean batch loss of ``model`` on ``dataset``.
	Batches are shuffled and rate-encoded anew every epoch,
	seeded by ``config.seed``, the epoch and the batch, so runs
	are reproducible.
	
	:raise TrainingDiverged: If the loss or a gradient is not finite.
	'''
	
	_check_dataset(model, dataset)
	
	optimizer = Adam(
		config.learning_rate, config.beta1, config.beta2, config.epsilon
	)
	records: list[EpochRecord] = []
	
	for epoch in range(1, config.epochs + 1):
		shuffler = np.random.default_rng([config.seed, epoch])
		order = shuffler.permutation(len(dataset))
		losses: list[float] = []
		
		for batch, start in enumerate(range(0, len(order), config.batch_size)):
			indices = order[start:start + config.batch_size]
			rng = np.random.default_rng([config.seed, epoch, batch])
			inputs = model_inputs(model, dataset, indices, rng)
			
			try:
				loss, gradients = model.loss_and_gradients(
					inputs, dataset.labels[indices]
				)
			except NonFiniteValues as error:
				raise TrainingDiverged(epoch, batch) from error
			
			if not np.isfinite(loss):
				raise TrainingDiverged(epoch, batch)
			
			try:
				stepped = optimizer.step(model.parameters, gradients)
				model = model.with_parameters(stepped)
			except NonFiniteValues as error:
				raise TrainingDiverged(epoch, batch) from error
			
			losses.append(loss)
			logger.debug('Epoch %d, batch %d: loss %.5f', epoch, batch, loss)
		
		accuracy = None
		
		if validation is not None and len(validation):
			accuracy = model.accuracy(
				validation.samples, validation.labels, seed = config.seed
			)
		
		record = EpochRecord(epoch, float(np.mean(losses)), accuracy)
		records.append(record)
		
		logger.info(
			'Epoch %d/%d: mean loss %.4f, validation accuracy %s',
			epoch, config.epochs, record.loss,
			'n/a' if accuracy is None else f'{accuracy:.2%}'
		)
	
	return model, TrainingHistory(tuple(records))
