'''
Scoring reconstructions with an independent evaluation classifier.

All scores are percentages. Samples are either ``[N×features]``
images or ``[N×T×features]`` spike trains, whichever
the evaluator accepts.
'''

from __future__ import annotations

import csv
import io
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Annotated, Protocol

import numpy as np
from pydantic import Field

from .config import InvalidConfiguration, Settings
from .tensors import FloatArray, IntArray


REPORT_FORMAT_VERSION = 1

CONFIDENT = 0.99

Percent = Annotated[float, Field(ge = 0, le = 100)]


class Evaluator(Protocol):

	def posteriors(self, samples: FloatArray) -> FloatArray:
		...


class NoSamples(ValueError):
	'''
	Raised when a score is asked of no samples.
	'''
	
	def __init__(self, what: str = 'samples') -> None:
		super().__init__(f'Cannot score empty {what}')


class MissingClassGroup(LookupError):
	'''
	Raised when an attacked class has no reconstructions.
	'''
	
	def __init__(self, label: int) -> None:
		super().__init__(f'No reconstructions for class {label}')
		
		self.label = label


class DuplicateClassGroup(ValueError):
	'''
	Raised when one attack run holds two groups for the same class.
	'''
	
	def __init__(self, label: int) -> None:
		super().__init__(f'Class {label} appears twice in one run')
		
		self.label = label


@dataclass(frozen = True, slots = True)
class LabeledSamples:

	inputs: FloatArray
	labels: IntArray
	
	def __post_init__(self) -> None:
		if len(self.inputs) != len(self.labels):
			raise InvalidConfiguration(
				f'{len(self.inputs)} samples for {len(self.labels)} labels'
			)
	
	def __len__(self) -> int:
		return len(self.labels)
	
	@classmethod
	def from_groups(cls, groups: Mapping[int, FloatArray]) -> LabeledSamples:
		labels = [label for label, group in groups.items() for _ in group]
		
		if not labels:
			raise NoSamples
		
		inputs = np.concatenate(
			[group for group in groups.values() if len(group)]
		)
		
		return cls(inputs, np.asarray(labels, dtype = np.int64))


def _scored(evaluator: Evaluator, samples: LabeledSamples) -> FloatArray:
	if not len(samples):
		raise NoSamples
	
	return np.asarray(evaluator.posteriors(samples.inputs), dtype = np.float64)


def _hits(posteriors: FloatArray, labels: IntArray, k: int) -> FloatArray:
	classes = posteriors.shape[1]
	
	if not 1 <= k <= classes:
		raise InvalidConfiguration(f'k must be in [1, {classes}], got {k}')
	
	ranking = np.argsort(-posteriors, axis = 1, kind = 'stable')[:, :k]
	hits: FloatArray = (ranking == labels[:, np.newaxis]) \
		.any(axis = 1).astype(np.float64)
	
	return hits


def accuracy_of(posteriors: FloatArray, labels: IntArray, k: int = 1) -> float:
	return 100.0 * float(_hits(posteriors, labels, k).mean())


def confidence_of(posteriors: FloatArray, labels: IntArray) -> float:
	return 100.0 * float(posteriors[np.arange(len(labels)), labels].mean())


def attack_accuracy(evaluator: Evaluator, samples: LabeledSamples) -> float:
	'''
	Percentage of samples the evaluator assigns to their
	attacked class.
	
	:raise NoSamples: If there are no samples.
	'''
	
	return accuracy_of(_scored(evaluator, samples), samples.labels)


def topk_accuracy(
	evaluator: Evaluator, samples: LabeledSamples, k: int = 3
) -> float:
	'''
	Percentage of samples whose attacked class is among the ``k``
	most probable ones. Ties rank the lower class first.
	
	:raise InvalidConfiguration: If ``k`` exceeds the number of classes.
	'''
	
	return accuracy_of(_scored(evaluator, samples), samples.labels, k)


def avg_confidence(evaluator: Evaluator, samples: LabeledSamples) -> float:
	'''
	Mean evaluator posterior of the attacked class, as a percentage.
	'''
	
	return confidence_of(_scored(evaluator, samples), samples.labels)


def _daa_hits(
	groups: Mapping[int, FloatArray],
	posteriors: Mapping[int, FloatArray]
) -> dict[int, bool]:
	hits: dict[int, bool] = {}
	
	for label in groups:
		scores = posteriors[label]
		
		if not len(scores):
			raise MissingClassGroup(label)
		
		best = int(np.argmax(scores[:, label]))
		hits[label] = int(np.argmax(scores[best])) == label
	
	return hits


def daa(
	evaluator: Evaluator, groups: Mapping[int, FloatArray],
	classes: Sequence[int] | None = None
) -> float:
	'''
	Distinctive attack accuracy: for every attacked class take the
	reconstruction the evaluator finds most typical of it (the
	earliest one on ties) and count whether it is classified as
	that class.
	
	:raise MissingClassGroup: \
		If a class of ``classes`` (all keys of ``groups`` by default)
		has no reconstructions.
	'''
	
	labels = list(groups) if classes is None else list(classes)
	
	if not labels:
		raise NoSamples('class groups')
	
	for label in labels:
		if label not in groups or not len(groups[label]):
			raise MissingClassGroup(label)
	
	scored = {label: evaluator.posteriors(groups[label]) for label in labels}
	hits = _daa_hits({label: groups[label] for label in labels}, scored)
	
	return 100.0 * sum(hits.values()) / len(hits)


def gray_levels(spikes: FloatArray) -> int:
	'''
	Distinct intensities of a ``[T×features]`` spike train's
	time-averaged image; at most ``T + 1``.
	'''
	
	return len(np.unique(np.asarray(spikes).mean(axis = 0)))


@dataclass(frozen = True, slots = True)
class AttackedClass:
	'''
	The reconstructions of one class from one attack run, with the
	target model's own confidence in them when known.
	'''
	
	label: int
	samples: FloatArray
	target_confidence: float | None = None
	peak_confidence: float | None = None


class ClassRow(Settings):

	label: int
	samples: int
	accuracy: Percent
	top3_accuracy: Percent
	mean_confidence: Percent
	daa_hit: bool
	target_confidence: float | None = None
	peak_target_confidence: float | None = None
	gray_levels: float | None = None


class Spread(Settings):
	'''
	Mean and standard deviation of the scores over
	``count`` emitted-sample draws or attack runs.
	'''
	
	over: str
	count: int
	attack_accuracy: tuple[float, float]
	top3_accuracy: tuple[float, float]
	avg_confidence: tuple[float, float]
	daa: tuple[float, float]


class MetricsReport(Settings):
	'''
	Scores of a set of attack runs against one evaluator.
	'''
	
	format_version: int = REPORT_FORMAT_VERSION
	method: str | None = None
	evaluator: str
	targets: tuple[str, ...] = ()
	seeds: tuple[int, ...] = ()
	attack_accuracy: Percent
	top3_accuracy: Percent
	avg_confidence: Percent
	daa: Percent
	confident_classes: int | None = None
	rows: tuple[ClassRow, ...]
	draw_spread: Spread | None = None
	run_spread: Spread | None = None
	
	def to_json(self) -> str:
		return self.model_dump_json(indent = 2)
	
	@classmethod
	def from_json(cls, text: str) -> MetricsReport:
		return cls.model_validate_json(text)
	
	def to_csv(self) -> str:
		'''
		One line per attacked class.
		'''
		
		buffer = io.StringIO()
		fields = list(ClassRow.model_fields)
		writer = csv.DictWriter(
			buffer, fieldnames = fields, lineterminator = '\n'
		)
		
		writer.writeheader()
		
		for row in self.rows:
			values = row.model_dump()
			writer.writerow({key: _cell(values[key]) for key in fields})
		
		return buffer.getvalue()
	
	def summary(self) -> str:
		lines = [
			f'Evaluator: {self.evaluator}',
			f'Method: {self.method or "unknown"}',
			f'Attacked classes: {len(self.rows)}',
			f'Attack accuracy: {self.attack_accuracy:.2f}%',
			f'Top-3 accuracy: {self.top3_accuracy:.2f}%',
			f'Average confidence: {self.avg_confidence:.2f}%',
			f'DAA: {self.daa:.2f}%',
		]
		
		if self.confident_classes is not None:
			lines.append(
				f'Classes with target confidence ≥ {CONFIDENT}: '
				f'{self.confident_classes}/{len(self.rows)}'
			)
		
		for spread in (self.draw_spread, self.run_spread):
			if spread is not None:
				lines.append(_describe_spread(spread))
		
		return '\n'.join(lines) + '\n'


def _cell(value: object) -> str:
	if value is None:
		return ''
	
	if isinstance(value, float):
		return f'{value:.4f}'
	
	return str(value)


def _describe_spread(spread: Spread) -> str:
	def pair(values: tuple[float, float]) -> str:
		return f'{values[0]:.2f} ± {values[1]:.2f}'
	
	return (
		f'Across {spread.count} {spread.over}: '
		f'accuracy {pair(spread.attack_accuracy)}, '
		f'top-3 {pair(spread.top3_accuracy)}, '
		f'confidence {pair(spread.avg_confidence)}, '
		f'DAA {pair(spread.daa)}'
	)


@dataclass(frozen = True, slots = True)
class _Scores:
	attack_accuracy: float
	top3_accuracy: float
	avg_confidence: float
	daa: float


def _score(
	groups: Mapping[int, FloatArray],
	posteriors: Mapping[int, FloatArray],
	k: int
) -> _Scores:
	labels = np.concatenate([
		np.full(len(posteriors[label]), label, dtype = np.int64)
		for label in groups
	])
	stacked = np.concatenate([posteriors[label] for label in groups])
	hits = _daa_hits(groups, posteriors)
	
	return _Scores(
		accuracy_of(stacked, labels),
		accuracy_of(stacked, labels, k),
		confidence_of(stacked, labels),
		100.0 * sum(hits.values()) / len(hits)
	)


def _spread(over: str, scores: Sequence[_Scores]) -> Spread:
	def statistics(field: str) -> tuple[float, float]:
		values = [getattr(score, field) for score in scores]
		
		return float(np.mean(values)), float(np.std(values))
	
	return Spread(
		over = over,
		count = len(scores),
		attack_accuracy = statistics('attack_accuracy'),
		top3_accuracy = statistics('top3_accuracy'),
		avg_confidence = statistics('avg_confidence'),
		daa = statistics('daa')
	)


def _draw_scores(
	run: Mapping[int, FloatArray], posteriors: Mapping[int, FloatArray], k: int
) -> list[_Scores]:
	draws = min(len(group) for group in run.values())
	scores = []
	
	for draw in range(draws):
		groups = {label: run[label][draw:draw + 1] for label in run}
		scored = {label: posteriors[label][draw:draw + 1] for label in run}
		scores.append(_score(groups, scored, k))
	
	return scores


def _mean(values: Sequence[float | None]) -> float | None:
	known = [value for value in values if value is not None]
	
	return float(np.mean(known)) if known else None


def build_report(
	evaluator: Evaluator,
	runs: Sequence[Sequence[AttackedClass]], *,
	evaluator_name: str,
	method: str | None = None,
	targets: Sequence[str] = (),
	seeds: Sequence[int] = ()
) -> MetricsReport:
	'''
	Score every run's reconstructions. Headline scores and class rows
	pool the samples of all runs. The draw spread treats the ``j``-th
	sample of every class as one draw; the run spread, reported for
	several runs, treats each run as one draw.
	
	:raise MissingClassGroup: If a class has no reconstructions.
	:raise DuplicateClassGroup: If a run attacks a class twice.
	:raise NoSamples: If there are no runs or attacked classes.
	'''
	
	if not runs or not any(runs):
		raise NoSamples('attack runs')
	
	per_run: list[dict[int, FloatArray]] = []
	per_run_posteriors: list[dict[int, FloatArray]] = []
	
	for run in runs:
		groups: dict[int, FloatArray] = {}
		
		for attacked in run:
			if not len(attacked.samples):
				raise MissingClassGroup(attacked.label)
			
			if attacked.label in groups:
				raise DuplicateClassGroup(attacked.label)
			
			groups[attacked.label] = attacked.samples
		
		per_run.append(groups)
		per_run_posteriors.append({
			label: np.asarray(evaluator.posteriors(group), dtype = np.float64)
			for label, group in groups.items()
		})
	
	labels = sorted({label for groups in per_run for label in groups})
	classes = per_run_posteriors[0][next(iter(per_run_posteriors[0]))].shape[1]
	k = min(3, classes)
	
	for groups in per_run:
		for label in labels:
			if label not in groups:
				raise MissingClassGroup(label)
	
	pooled = {
		label: np.concatenate([groups[label] for groups in per_run])
		for label in labels
	}
	pooled_posteriors = {
		label: np.concatenate([scored[label] for scored in per_run_posteriors])
		for label in labels
	}
	
	headline = _score(pooled, pooled_posteriors, k)
	hits = _daa_hits(pooled, pooled_posteriors)
	attacked: dict[int, list[AttackedClass]] = {label: [] for label in labels}
	
	for run in runs:
		for item in run:
			attacked[item.label].append(item)
	
	rows = []
	
	for label in labels:
		scores = pooled_posteriors[label]
		targets_for_class = np.full(len(scores), label, dtype = np.int64)
		samples = pooled[label]
		items = attacked[label]
		
		rows.append(ClassRow(
			label = label,
			samples = len(samples),
			accuracy = accuracy_of(scores, targets_for_class),
			top3_accuracy = accuracy_of(scores, targets_for_class, k),
			mean_confidence = confidence_of(scores, targets_for_class),
			daa_hit = hits[label],
			target_confidence = _mean(
				[item.target_confidence for item in items]
			),
			peak_target_confidence = _mean(
				[item.peak_confidence for item in items]
			),
			gray_levels = (
				float(np.mean([gray_levels(sample) for sample in samples]))
				if samples.ndim == 3 else None
			)
		))
	
	draws = [
		score for groups, scored in zip(per_run, per_run_posteriors)
		for score in _draw_scores(groups, scored, k)
	]
	
	run_scores = [
		_score(groups, scored, k)
		for groups, scored in zip(per_run, per_run_posteriors)
	]
	
	peaks = [row.peak_target_confidence for row in rows]
	
	return MetricsReport(
		method = method,
		evaluator = evaluator_name,
		targets = tuple(targets),
		seeds = tuple(seeds),
		attack_accuracy = headline.attack_accuracy,
		top3_accuracy = headline.top3_accuracy,
		avg_confidence = headline.avg_confidence,
		daa = headline.daa,
		confident_classes = (
			None if any(peak is None for peak in peaks)
			else sum(
				1 for peak in peaks if peak is not None and peak >= CONFIDENT
			)
		),
		rows = tuple(rows),
		draw_spread = _spread('draws', draws) \
			if len(draws) > 1 else None,
		run_spread = _spread('runs', run_scores) \
			if len(run_scores) > 1 else None
	)

