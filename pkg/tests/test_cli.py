import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from spike_inversion.artifacts import class_directory, read_image, read_results
from spike_inversion.cli import (
	attacked_classes, build_parser, EXIT_ATTACK_DIVERGED, EXIT_CONFIGURATION,
	EXIT_DATA, EXIT_OK, EXIT_TRAINING_DIVERGED, exit_code, main, settings_from
)
from spike_inversion.attacks import AttackDiverged
from spike_inversion.config import InvalidConfiguration, read_config_file
from spike_inversion.encoding import MalformedFile
from spike_inversion.metrics import MetricsReport
from spike_inversion.models import load_checkpoint, Model, read_checkpoint
from spike_inversion.training import TrainingDiverged


_TINY_TRAINING = [
	'--dataset', 'synth', '--classes', '3', '--samples-per-class', '6',
	'--image-size', '8', '--time-steps', '5', '--hidden', '8',
	'--epochs', '1', '--batch-size', '8', '--validation-fraction', '0.2'
]


def _train(out: Path, preset: str, seed: int = 0) -> Path:
	code = main([
		'-q', 'train', '--preset', preset, '--out', str(out),
		'--seed', str(seed), *_TINY_TRAINING
	])
	
	assert code == EXIT_OK
	
	return out / 'model.blks'


def _attack(target: Path, out: Path, method: str = 'blv2', *extra: str) -> int:
	return main([
		'-q', 'attack', '--method', method, '--target', str(target),
		'--out', str(out), '--iterations', '3', '--K', '2',
		'--samples', '2', *extra
	])


@pytest.fixture(scope = 'module')
def models(tmp_path_factory):
	directory = tmp_path_factory.mktemp('models')
	
	return {
		'snn': _train(directory / 'snn', 'snn-mlp'),
		'ann': _train(directory / 'ann', 'ann-mlp', seed = 1),
	}


def test_training_writes_its_artifacts(models):
	out = models['snn'].parent
	model, metadata = read_checkpoint(models['snn'])
	
	assert model.spec.kind == 'snn-mlp'
	assert model.spec.input_shape == (1, 8, 8)
	assert model.spec.hidden == (8,)
	assert metadata.epochs == 1
	assert metadata.dataset == 'synth'
	assert (out / 'history.csv').read_text().startswith('epoch,loss,validation_accuracy\n')
	assert read_config_file(out / 'effective-config.ini', 'train')['epochs'] == '1'


def test_training_is_reproducible(tmp_path):
	first = _train(tmp_path / 'first', 'snn-mlp', seed = 3)
	second = _train(tmp_path / 'second', 'snn-mlp', seed = 3)
	
	assert first.read_bytes() == second.read_bytes()
	assert (first.parent / 'history.csv').read_bytes() == \
		(second.parent / 'history.csv').read_bytes()


def test_attack_and_evaluate(models, tmp_path, capsys):
	attack_out, report_out = tmp_path / 'attack', tmp_path / 'report'
	
	assert _attack(models['snn'], attack_out, 'blv2', '--classes', '0,2') == EXIT_OK
	
	summary = json.loads((attack_out / 'attack.json').read_text())
	assert summary['classes'] == [0, 2]
	assert (class_directory(attack_out, 2) / 'samples' / 'sample-001.csv').is_file()
	assert not class_directory(attack_out, 1).exists()
	
	code = main([
		'-q', 'evaluate', '--evaluator', str(models['ann']),
		'--results', str(attack_out), '--out', str(report_out)
	])
	
	assert code == EXIT_OK
	
	report = MetricsReport.from_json((report_out / 'report.json').read_text())
	assert [row.label for row in report.rows] == [0, 2]
	assert report.method == 'blv2'
	assert 0.0 <= report.daa <= 100.0
	assert 'DAA:' in capsys.readouterr().out
	assert (report_out / 'report.csv').read_text().count('\n') == 3


def test_mi_face_against_a_conventional_target(models, tmp_path):
	out = tmp_path / 'miface'
	
	assert _attack(models['ann'], out, 'miface', '--classes', '1') == EXIT_OK
	
	(attacked,) = read_results(out).classes
	assert attacked.samples.shape == (1, 64)
	assert ((0.0 <= attacked.samples) & (attacked.samples <= 1.0)).all()


def test_export_writes_a_grid(models, tmp_path):
	attack_out, image = tmp_path / 'attack', tmp_path / 'grid.png'
	_attack(models['snn'], attack_out, 'blv1')
	
	code = main([
		'-q', 'export', '--results', str(attack_out),
		'--out', str(image), '--format', 'png'
	])
	
	assert code == EXIT_OK
	assert read_image(image).shape == (8, 24)
	assert read_config_file(tmp_path / 'grid.ini', 'export')['format'] == 'png'


def test_reports_are_reproducible(models, tmp_path):
	reports = []
	
	for run in ('first', 'second'):
		_attack(models['snn'], tmp_path / run, 'blv2', '--seed', '7')
		main([
			'-q', 'evaluate', '--evaluator', str(models['ann']),
			'--results', str(tmp_path / run), '--out', str(tmp_path / f'{run}-report')
		])
		reports.append((tmp_path / f'{run}-report' / 'report.json').read_bytes())
	
	assert reports[0] == reports[1]


def test_parallel_attacks_match_serial_ones(models, tmp_path):
	_attack(models['snn'], tmp_path / 'serial', 'blv2')
	_attack(models['snn'], tmp_path / 'parallel', 'blv2', '--workers', '2')
	
	serial, parallel = read_results(tmp_path / 'serial'), read_results(tmp_path / 'parallel')
	
	for one, other in zip(serial.classes, parallel.classes):
		np.testing.assert_array_equal(one.samples, other.samples)


def test_config_file_values_are_overridden_by_flags(models, tmp_path):
	config = tmp_path / 'run.ini'
	config.write_text('[attack]\nclasses = 0,1\nsparsity = 0.5\nsamples = 3\n')
	out = tmp_path / 'attack'
	
	code = _attack(models['snn'], out, 'blv2', '--config', str(config), '--classes', '1')
	
	assert code == EXIT_OK
	
	effective = read_config_file(out / 'effective-config.ini', 'attack')
	assert (effective['classes'], effective['sparsity'], effective['samples']) == ('1', '0.5', '2')


@pytest.mark.parametrize('method, model', [
	pytest.param('blv1', 'ann', id = 'blv1 on ann'),
	pytest.param('blv2', 'ann', id = 'blv2 on ann'),
	pytest.param('miface', 'snn', id = 'miface on snn'),
])
def test_methods_must_fit_the_target(models, tmp_path, method, model):
	assert _attack(models[model], tmp_path / 'attack', method) == EXIT_CONFIGURATION


@pytest.mark.parametrize('method, model', [
	pytest.param('blv2', 'snn', id = 'blv2'),
	pytest.param('miface', 'ann', id = 'miface'),
])
def test_non_finite_final_posteriors_are_an_attack_divergence(
	models, tmp_path, monkeypatch, method, model
):
	def non_finite(self, samples, **_):
		return np.full((len(samples), self.spec.classes), np.nan)
	
	monkeypatch.setattr(Model, 'posteriors', non_finite)
	
	code = _attack(models[model], tmp_path / 'attack', method, '--classes', '0')
	
	assert code == EXIT_ATTACK_DIVERGED


@pytest.mark.parametrize('arguments', [
	pytest.param(['train', '--preset', 'snn-mlp', '--bogus', '1'], id = 'unknown flag'),
	pytest.param(['explode'], id = 'unknown command'),
	pytest.param(['train', '--dataset', 'synth', '--out', 'x'], id = 'missing preset'),
	pytest.param(
		['train', '--preset', 'snn-mlp', '--dataset', 'mnist', '--out', 'x'],
		id = 'mnist without data'
	),
	pytest.param(
		['attack', '--method', 'blv3', '--target', 'x', '--out', 'y'],
		id = 'unknown method'
	),
])
def test_invalid_invocations(arguments):
	assert main(['-q', *arguments]) == EXIT_CONFIGURATION


def test_unknown_attacked_class(models, tmp_path):
	code = _attack(models['snn'], tmp_path / 'attack', 'blv2', '--classes', '5')
	
	assert code == EXIT_CONFIGURATION


def test_missing_target_is_a_data_error(tmp_path):
	assert _attack(tmp_path / 'absent.blks', tmp_path / 'attack') == EXIT_DATA


def test_missing_class_directory_is_a_data_error(models, tmp_path):
	attack_out = tmp_path / 'attack'
	_attack(models['snn'], attack_out, 'blv1', '--classes', '0,1')
	shutil.rmtree(class_directory(attack_out, 1))
	
	code = main([
		'-q', 'evaluate', '--evaluator', str(models['ann']),
		'--results', str(attack_out), '--out', str(tmp_path / 'report')
	])
	
	assert code == EXIT_DATA


def test_exporting_an_empty_directory_is_a_data_error(tmp_path):
	(tmp_path / 'empty').mkdir()
	
	code = main([
		'-q', 'export', '--results', str(tmp_path / 'empty'), '--out', str(tmp_path / 'grid.pgm')
	])
	
	assert code == EXIT_DATA


def test_incompatible_evaluator(models, tmp_path):
	other = tmp_path / 'other'
	main([
		'-q', 'train', '--preset', 'ann-mlp', '--out', str(other),
		*_TINY_TRAINING, '--classes', '4'
	])
	attack_out = tmp_path / 'attack'
	_attack(models['snn'], attack_out, 'blv1', '--classes', '0')
	
	code = main([
		'-q', 'evaluate', '--evaluator', str(other / 'model.blks'),
		'--results', str(attack_out), '--out', str(tmp_path / 'report')
	])
	
	assert code == EXIT_CONFIGURATION


def test_events_dataset_from_directories(tmp_path):
	for label in (0, 1):
		directory = tmp_path / 'events' / str(label)
		directory.mkdir(parents = True)
		
		for index in range(3):
			(directory / f'{index}.csv').write_text(
				f'{label},{label},0,1\n{index},{label + 2},500,1\n3,3,1000,1\n'
			)
	
	code = main([
		'-q', 'train', '--preset', 'snn-mlp', '--dataset', 'events',
		'--data-dir', str(tmp_path / 'events'), '--out', str(tmp_path / 'model'),
		'--time-steps', '4', '--hidden', '4', '--epochs', '1', '--validation-fraction', '0.3'
	])
	
	assert code == EXIT_OK
	assert load_checkpoint(tmp_path / 'model' / 'model.blks').spec.input_shape == (1, 4, 4)


def test_settings_from_merges_flags_over_the_file(tmp_path):
	config = tmp_path / 'run.ini'
	config.write_text('[export]\nrows = 2\nformat = png\n')
	
	arguments = build_parser().parse_args([
		'export', '--config', str(config), '--results', 'r', '--out', 'o', '--rows', '3'
	])
	settings = settings_from(arguments)
	
	assert (settings.rows, settings.format) == (3, 'png')


@pytest.mark.parametrize('selection, expected', [
	('all', [0, 1, 2, 3]),
	('2, 0', [0, 2]),
	('1,1', [1]),
])
def test_attacked_classes(selection, expected):
	assert attacked_classes(selection, 4) == expected


@pytest.mark.parametrize('selection', ['', 'one', '4', '-1'])
def test_invalid_attacked_classes(selection):
	with pytest.raises(InvalidConfiguration):
		attacked_classes(selection, 4)


@pytest.mark.parametrize('error, code', [
	(InvalidConfiguration('bad'), EXIT_CONFIGURATION),
	(MalformedFile('x', 'bad'), EXIT_DATA),
	(TrainingDiverged(1, 0), EXIT_TRAINING_DIVERGED),
	(AttackDiverged('BL-v2', 3), EXIT_ATTACK_DIVERGED),
	(RuntimeError('unexpected'), None),
])
def test_exit_codes(error, code):
	assert exit_code(error) == code
