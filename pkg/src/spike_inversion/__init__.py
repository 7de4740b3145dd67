'''
Model inversion attacks on spiking neural networks:
recover what a classifier thinks a class looks like
from nothing but its gradients.

	>>> spec = preset('snn-mlp', 'desk', (1, 20, 20), classes = 10)
	>>> model = build_model(spec, seed = 0)
	>>> config = AttackConfig.create(target_class = 3, iterations = 50)
	>>> result = blv2_attack(model, config)
	>>> result.samples.shape
	(20, 25, 400)

'''

from .attacks import (
	AttackConfig, AttackDiverged, AttackResult, BernoulliParams,
	blv1_attack, blv2_attack, clamp_scale, identity_loss,
	mi_face, nes_gradient
)
from .config import InvalidConfiguration
from .encoding import (
	bin_events, Dataset, downsample_events, EmptyEventStream, Event,
	EventStream, load_event_csv, load_mnist_idx, MalformedFile, NotBinary,
	PixelOutOfRange, rate_encode, SpikeTrain, StaticImage,
	synth_dataset, synth_event_dataset
)
from .metrics import (
	attack_accuracy, avg_confidence, build_report, daa, DuplicateClassGroup,
	gray_levels, LabeledSamples, MetricsReport, MissingClassGroup, NoSamples,
	topk_accuracy
)
from .models import (
	build_model, load_checkpoint, MalformedCheckpoint, Model,
	ModelSpec, predict, preset, save_checkpoint
)
from .neurons import (
	LifLayer, LifState, lif_step, membrane_ce_loss,
	posterior, snn_backward, snn_forward, SurrogateSpec
)
from .tensors import (
	DimensionMismatch, InvalidLabel, NonFiniteValues,
	Tape, TapeMisuse, Tensor, Variable
)
from .training import train, TrainingConfig, TrainingDiverged


__all__ = [
	'AttackConfig', 'AttackDiverged', 'AttackResult', 'BernoulliParams',
	'blv1_attack', 'blv2_attack', 'clamp_scale', 'identity_loss',
	'mi_face', 'nes_gradient',
	'InvalidConfiguration',
	'bin_events', 'Dataset', 'downsample_events', 'EmptyEventStream',
	'Event', 'EventStream', 'load_event_csv', 'load_mnist_idx',
	'MalformedFile', 'NotBinary',
	'PixelOutOfRange', 'rate_encode', 'SpikeTrain', 'StaticImage',
	'synth_dataset', 'synth_event_dataset',
	'attack_accuracy', 'avg_confidence', 'build_report', 'daa',
	'DuplicateClassGroup', 'gray_levels',
	'LabeledSamples', 'MetricsReport', 'MissingClassGroup', 'NoSamples',
	'topk_accuracy',
	'build_model', 'load_checkpoint', 'MalformedCheckpoint', 'Model',
	'ModelSpec', 'predict', 'preset', 'save_checkpoint',
	'LifLayer', 'LifState', 'lif_step', 'membrane_ce_loss',
	'posterior', 'snn_backward', 'snn_forward', 'SurrogateSpec',
	'DimensionMismatch', 'InvalidLabel', 'NonFiniteValues',
	'Tape', 'TapeMisuse', 'Tensor', 'Variable',
	'train', 'TrainingConfig', 'TrainingDiverged'
]
