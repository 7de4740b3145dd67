import gzip
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings

from spike_inversion.config import InvalidConfiguration
from spike_inversion.encoding import (
	bin_events, Dataset, downsample_events, EmptyEventStream, Event,
	EventStream, load_event_csv, load_mnist_idx, MalformedFile, NotBinary,
	PixelOutOfRange, rate_encode, rate_encode_batch, shuffle_split,
	SpikeTrain, StaticImage, synth_dataset, synth_event_dataset
)
from spike_inversion.tensors import Tensor
from .strategies import event_streams


def _write_idx(path: Path, magic: int, extents: tuple[int, ...], payload: bytes) -> Path:
	header = struct.pack(f'>{1 + len(extents)}I', magic, *extents)
	path.write_bytes(header + payload)
	
	return path


def _idx_pair(
	directory: Path, pixels: np.ndarray, labels: list[int]
) -> tuple[Path, Path]:
	count, rows, columns = pixels.shape
	images = _write_idx(
		directory / 'images-idx3-ubyte', 0x803, (count, rows, columns),
		pixels.astype(np.uint8).tobytes()
	)
	classes = _write_idx(
		directory / 'labels-idx1-ubyte', 0x801, (len(labels),), bytes(labels)
	)
	
	return images, classes


@pytest.mark.parametrize('intensity, expected', [
	(0.0, 0.0),
	(1.0, 1.0),
])
def test_rate_encode_extremes(intensity, expected):
	image = StaticImage(Tensor(np.full((3, 3), intensity)), 0)
	train = rate_encode(image, 25, seed = 1)
	
	assert train.data == Tensor(np.full((25, 9), expected))
	assert train.frame_shape == (1, 3, 3)


def test_rate_encode_concentrates_on_the_intensity():
	spikes = rate_encode_batch(np.full((10_000, 1), 0.5), 25, np.random.default_rng(2))
	mean_count = spikes.sum(axis = 0).mean()
	
	assert 12.0 <= mean_count <= 13.0


def test_rate_encode_is_deterministic_per_seed():
	image = StaticImage(Tensor(np.random.default_rng(3).uniform(size = (4, 4))), 1)
	
	assert rate_encode(image, 10, seed = 5) == rate_encode(image, 10, seed = 5)
	assert rate_encode(image, 10, seed = 5) != rate_encode(image, 10, seed = 6)


@pytest.mark.parametrize('pixels', [
	np.array([[0.5, 1.2]]),
	np.array([[-0.1, 0.3]]),
])
def test_pixels_must_be_intensities(pixels):
	with pytest.raises(PixelOutOfRange):
		StaticImage(Tensor(pixels), 0)
	
	with pytest.raises(PixelOutOfRange):
		rate_encode_batch(pixels, 5, np.random.default_rng(0))


def test_spike_train_must_be_binary():
	with pytest.raises(NotBinary):
		SpikeTrain(Tensor([[0.0, 0.5]]), (2,))


def test_spike_train_frame_must_hold_features():
	with pytest.raises(InvalidConfiguration):
		SpikeTrain(Tensor([[0.0, 1.0, 1.0]]), (1, 2, 2))


def test_rate_decode_is_the_time_average():
	train = SpikeTrain.from_array(np.array([[1, 0, 1], [1, 0, 0]]))
	
	np.testing.assert_allclose(train.rate_decode(), [1.0, 0.0, 0.5])
	assert train.spike_count == 3


def test_one_event_sets_one_voxel():
	stream = EventStream((Event(1, 2, 100, 1),), 4, 4)
	train = bin_events(stream, 5)
	
	assert train.spike_count == 1
	assert train.frame_shape == (1, 4, 4)
	assert train.data.data[0, 2 * 4 + 1] == 1.0


def test_repeated_events_in_a_voxel_count_once():
	stream = EventStream.sorted([
		Event(0, 0, 0, 1), Event(0, 0, 1, 1), Event(3, 3, 1000, 1),
	], 4, 4)
	
	train = bin_events(stream, 2)
	
	assert train.spike_count == 2


def test_other_polarity_is_dropped():
	stream = EventStream.sorted([Event(0, 0, 0, -1), Event(1, 1, 50, -1)], 2, 2)
	
	assert bin_events(stream, 3).spike_count == 0
	assert bin_events(stream, 3, polarity = -1).spike_count == 2


def test_empty_stream_cannot_be_binned():
	with pytest.raises(EmptyEventStream):
		bin_events(EventStream((), 2, 2), 3)


def test_last_event_falls_in_the_last_window():
	stream = EventStream.sorted([Event(0, 0, 0, 1), Event(1, 0, 1000, 1)], 2, 1)
	train = bin_events(stream, 4)
	
	assert train.data.data[0, 0] == 1.0
	assert train.data.data[3, 1] == 1.0


@settings(max_examples = 60, deadline = None)
@given(event_streams(side = 6))
def test_binning_marks_exactly_the_retained_voxels(stream):
	time_steps = 5
	train = bin_events(stream, time_steps)
	
	start, stop = stream.events[0].t, stream.events[-1].t
	duration = max(stop - start, 1)
	expected = {
		(min((event.t - start) * time_steps // duration, time_steps - 1), event.y * 6 + event.x)
		for event in stream.events if event.polarity == 1
	}
	actual = {(int(t), int(f)) for t, f in zip(*np.nonzero(train.data.data))}
	
	assert actual == expected


def test_downsampling_thresholds_block_occupancy():
	events = [Event(0, 0, 0, 1), Event(1, 0, 0, 1), Event(2, 2, 0, 1)]
	stream = EventStream.sorted(events, 4, 4)
	
	train = downsample_events(stream, 2, time_steps = 1)
	
	assert train.frame_shape == (1, 2, 2)
	np.testing.assert_array_equal(train.data.data, [[1.0, 0.0, 0.0, 0.0]])


def test_downsampling_needs_a_divisible_sensor():
	stream = EventStream((Event(0, 0, 0, 1),), 5, 4)
	
	with pytest.raises(InvalidConfiguration):
		downsample_events(stream, 2, time_steps = 1)


def test_event_stream_must_be_ordered():
	with pytest.raises(InvalidConfiguration):
		EventStream((Event(0, 0, 10, 1), Event(0, 0, 5, 1)), 1, 1)


def test_load_mnist_idx(tmp_path):
	pixels = np.zeros((2, 3, 3), dtype = np.uint8)
	pixels[0, 1, 1] = 255
	pixels[1, 0, 2] = 51
	
	images = load_mnist_idx(*_idx_pair(tmp_path, pixels, [7, 2]))
	
	assert [image.label for image in images] == [7, 2]
	assert images[0].pixels.data[1, 1] == 1.0
	assert images[1].pixels.data[0, 2] == pytest.approx(0.2)
	assert images[0].frame_shape == (1, 3, 3)


def test_load_mnist_idx_reads_gzip(tmp_path):
	images_path, labels_path = _idx_pair(tmp_path, np.full((1, 2, 2), 255), [4])
	compressed = tmp_path / 'images.gz'
	compressed.write_bytes(gzip.compress(images_path.read_bytes()))
	
	(image,) = load_mnist_idx(compressed, labels_path)
	
	assert image.pixels == Tensor(np.ones((2, 2)))


def test_truncated_idx_file_is_rejected(tmp_path):
	images_path, labels_path = _idx_pair(tmp_path, np.zeros((2, 3, 3)), [0, 1])
	images_path.write_bytes(images_path.read_bytes()[:-1])
	
	with pytest.raises(MalformedFile):
		load_mnist_idx(images_path, labels_path)


def test_idx_magic_number_is_checked(tmp_path):
	images_path, labels_path = _idx_pair(tmp_path, np.zeros((1, 2, 2)), [0])
	
	with pytest.raises(MalformedFile):
		load_mnist_idx(labels_path, images_path)


def test_idx_counts_must_agree(tmp_path):
	images_path, labels_path = _idx_pair(tmp_path, np.zeros((2, 2, 2)), [0, 1])
	_write_idx(labels_path, 0x801, (3,), bytes([0, 1, 2]))
	
	with pytest.raises(MalformedFile):
		load_mnist_idx(images_path, labels_path)


def test_missing_idx_file(tmp_path):
	with pytest.raises(MalformedFile):
		load_mnist_idx(tmp_path / 'missing', tmp_path / 'missing-too')


def test_load_event_csv(tmp_path):
	path = tmp_path / 'events.csv'
	path.write_text('x,y,t,polarity\n1,2,100,1\n')
	
	stream = load_event_csv(path)
	
	assert stream.events == (Event(1, 2, 100, 1),)
	assert (stream.width, stream.height) == (2, 3)


def test_load_event_csv_sorts_by_time(tmp_path):
	path = tmp_path / 'events.csv'
	path.write_text('0,0,30,1\n1,1,10,-1\n2,0,20,1\n')
	
	stream = load_event_csv(path, width = 4, height = 4)
	
	assert [event.t for event in stream.events] == [10, 20, 30]


@pytest.mark.parametrize('content, line', [
	('0,0,5,1\n1,1,6,0\n', 2),
	('x,y,t,polarity\n0,0,5\n', 2),
	('0,0,a,1\n', 1),
	('-1,0,5,1\n', 1),
])
def test_malformed_event_lines(tmp_path, content, line):
	path = tmp_path / 'events.csv'
	path.write_text(content)
	
	with pytest.raises(MalformedFile) as caught:
		load_event_csv(path)
	
	assert caught.value.line == line


def test_events_outside_the_sensor(tmp_path):
	path = tmp_path / 'events.csv'
	path.write_text('5,0,1,1\n')
	
	with pytest.raises(MalformedFile):
		load_event_csv(path, width = 4, height = 4)


def test_synth_dataset_is_deterministic():
	first = synth_dataset(3, 4, seed = 9, size = 12)
	second = synth_dataset(3, 4, seed = 9, size = 12)
	
	assert [image.pixels for image in first] == [image.pixels for image in second]
	assert [image.label for image in first] == [0] * 4 + [1] * 4 + [2] * 4


@pytest.mark.parametrize('geometry', ['bars', 'blobs'])
def test_two_synthetic_classes_are_linearly_separable(geometry):
	dataset = Dataset.from_images(synth_dataset(2, 30, seed = 4, size = 12, geometry = geometry))
	
	design = np.hstack([dataset.samples, np.ones((len(dataset), 1))])
	targets = np.eye(2)[dataset.labels]
	weights, *_ = np.linalg.lstsq(design, targets, rcond = None)
	
	predicted = (design @ weights).argmax(axis = 1)
	
	assert (predicted == dataset.labels).all()


@pytest.mark.parametrize('generate', [
	pytest.param(
		lambda classes, size: synth_dataset(classes, 1, seed = 0, size = size),
		id = 'images'
	),
	pytest.param(
		lambda classes, size: synth_event_dataset(
			classes, 1, seed = 0, size = size, windows = 2
		),
		id = 'events'
	),
])
@pytest.mark.parametrize('classes, size', [
	pytest.param(1, 20, id = 'one class'),
	pytest.param(0, 20, id = 'no classes'),
	pytest.param(42, 20, id = 'bars closer than a pixel'),
	pytest.param(9, 4, id = 'small image'),
])
def test_synthetic_layouts_must_fit(generate, classes, size):
	with pytest.raises(InvalidConfiguration):
		generate(classes, size)


def test_densest_bar_layout_keeps_classes_apart():
	images = synth_dataset(40, 1, seed = 2, size = 20)
	bars = {(image.pixels.data > 0.5).tobytes() for image in images}
	
	assert len(bars) == 40


def test_blobs_are_not_limited_by_bar_spacing():
	images = synth_dataset(12, 1, seed = 0, size = 4, geometry = 'blobs')
	
	assert len(images) == 12


@pytest.mark.parametrize('extents', [
	pytest.param({'width': 0}, id = 'zero width'),
	pytest.param({'height': 0}, id = 'zero height'),
	pytest.param({'width': -2, 'height': 4}, id = 'negative width'),
])
def test_explicit_sensor_extents_must_be_positive(tmp_path, extents):
	path = tmp_path / 'events.csv'
	path.write_text('0,0,1,1\n')
	
	with pytest.raises(InvalidConfiguration):
		load_event_csv(path, **extents)


def test_synth_event_dataset_bins_into_spike_trains():
	recordings = synth_event_dataset(4, 2, seed = 3, size = 12, windows = 6)
	trains = [(bin_events(stream, 6), label) for stream, label in recordings]
	dataset = Dataset.from_spike_trains(trains)
	
	assert dataset.samples.shape == (8, 6, 144)
	assert dataset.spiking
	assert dataset.classes == 4
	assert dataset.frame_shape == (1, 12, 12)


def test_synth_event_dataset_is_deterministic():
	first = synth_event_dataset(2, 1, seed = 8, size = 10)
	second = synth_event_dataset(2, 1, seed = 8, size = 10)
	
	assert first == second


def test_shuffle_split_holds_out_a_fraction():
	dataset = Dataset.from_images(synth_dataset(2, 10, seed = 1, size = 8))
	training, validation = shuffle_split(dataset, 0.25, seed = 3)
	
	assert (len(training), len(validation)) == (15, 5)
	assert sorted(training.labels.tolist() + validation.labels.tolist()) == [0] * 10 + [1] * 10


def test_shuffle_split_holds_out_at_least_one_sample():
	dataset = Dataset.from_images(synth_dataset(2, 2, seed = 1, size = 8))
	_, validation = shuffle_split(dataset, 0.01, seed = 0)
	
	assert len(validation) == 1


@pytest.mark.parametrize('fraction', [0.0, 1.0])
def test_shuffle_split_fraction_bounds(fraction):
	dataset = Dataset.from_images(synth_dataset(2, 2, seed = 1, size = 8))
	
	with pytest.raises(InvalidConfiguration):
		shuffle_split(dataset, fraction, seed = 0)
