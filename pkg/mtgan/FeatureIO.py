__author__ = 'frank'

import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import soundfile as sf
import torch
import torchaudio

from .BaseObject import BaseObject
from .Container import read_container, write_container
from .Errors import AudioFormatError, ConfigError, ShapeError

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
SLICE_SECONDS = 2.0
WINDOW_SECONDS = 0.025
N_FFT = 1024
N_MELS = 128
N_FRAMES = 128
LOG_FLOOR = 1e-10
STD_GUARD = 1e-8


class Utterance(object):
    """
    Mono waveform of one recording.

    :param samples: 1-D float array, amplitude in [-1, 1].
    :param sample_rate: Sample rate in Hz.
    :param speaker_id: Speaker identifier.
    :param utterance_id: Utterance identifier.
    """

    def __init__(self, samples, sample_rate, speaker_id, utterance_id):

        if sample_rate <= 0:
            raise ValueError('sample_rate Must Be Positive')

        self.samples = np.asarray(samples, dtype=np.float32).reshape(-1)
        self.sample_rate = sample_rate
        self.speaker_id = speaker_id
        self.utterance_id = utterance_id

    def duration(self):
        return float(len(self.samples)) / self.sample_rate


class FbankSlice(object):
    """
    One normalized log-mel matrix (frames x mels) with its speaker and utterance labels.
    """

    def __init__(self, matrix, speaker_id, utterance_id, slice_index=0):

        matrix = np.asarray(matrix, dtype=np.float32)

        if matrix.ndim != 2:
            raise ShapeError('FbankSlice Matrix Must Be 2-D')

        if not np.all(np.isfinite(matrix)):
            raise ValueError('FbankSlice Matrix Must Be Finite')

        if slice_index < 0:
            raise ValueError('slice_index Must Be Non-Negative')

        self.matrix = matrix
        self.speaker_id = speaker_id
        self.utterance_id = utterance_id
        self.slice_index = slice_index


class FeatureSet(BaseObject):
    """
    Collection of FbankSlices with a contiguous speaker -> class label index.

    :param slices: List of FbankSlice objects, all of the same shape.
    :param speaker_index: Optional mapping speaker_id -> label. Built from the sorted speaker ids when omitted.
    """

    def __init__(self, slices, speaker_index=None):
        super(FeatureSet, self).__init__()

        self.slices = list(slices)
        if speaker_index is None:
            speaker_index = dict((s, i) for i, s in enumerate(sorted(set(x.speaker_id for x in self.slices))))

        self.speaker_index = dict(speaker_index)
        self._matrices = None
        self.validate()

    def validate(self):

        failures = []

        labels = sorted(self.speaker_index.values())
        if labels != list(range(len(labels))):
            failures.append('class labels are not 0..C-1')

        missing = sorted(set(x.speaker_id for x in self.slices if x.speaker_id not in self.speaker_index))
        if missing:
            failures.append('speakers missing from index: %s' % ', '.join(missing))

        shapes = set(x.matrix.shape for x in self.slices)
        if len(shapes) > 1:
            failures.append('mixed slice shapes: %s' % ', '.join(str(s) for s in sorted(shapes)))

        if failures:
            raise ValueError('Invalid FeatureSet [FAILURES: ' + ', '.join(failures) + ']')

    def __len__(self):
        return len(self.slices)

    @property
    def n_classes(self):
        return len(self.speaker_index)

    @property
    def shape(self):
        return self.slices[0].matrix.shape if self.slices else None

    def matrices(self):
        """ Stacked (N, frames, mels) float32 array of every slice, built once. """
        if self._matrices is None:
            if self.slices:
                self._matrices = np.stack([x.matrix for x in self.slices])
            else:
                self._matrices = np.zeros((0, N_FRAMES, N_MELS), dtype=np.float32)
        return self._matrices

    def labels(self):
        return np.array([self.speaker_index[x.speaker_id] for x in self.slices], dtype=np.int64)

    def speakers(self):
        return sorted(self.speaker_index, key=self.speaker_index.get)

    def indices_by_speaker(self):
        """ speaker_id -> list of slice positions, in slice order. """
        groups = dict((s, []) for s in self.speaker_index)
        for i, x in enumerate(self.slices):
            groups[x.speaker_id].append(i)
        return groups

    def indices_by_utterance(self):
        groups = {}
        for i, x in enumerate(self.slices):
            groups.setdefault(x.utterance_id, []).append(i)
        return groups

    def subset(self, speaker_ids):
        """
        Build a new FeatureSet with only the given speakers, relabelled to 0..C'-1.

        :param speaker_ids: Iterable of speaker ids to keep.
        :return: FeatureSet
        """
        keep = set(speaker_ids)
        return FeatureSet([x for x in self.slices if x.speaker_id in keep])

    def select(self, positions):
        """ FeatureSet with the slices at the given positions, keeping this set's speaker index. """
        return FeatureSet([self.slices[i] for i in positions], self.speaker_index)


def slice_utterance(utt, slice_seconds=SLICE_SECONDS, hop_seconds=SLICE_SECONDS):
    """
    Cut an utterance into fixed-length segments. A trailing remainder shorter than one slice is dropped.

    :param utt: Utterance
    :param slice_seconds: Segment duration in seconds.
    :param hop_seconds: Distance between segment starts in seconds.
    :return: List of 1-D float32 arrays, each exactly slice_seconds * sample_rate samples long.
    """

    if slice_seconds <= 0:
        raise ValueError('slice_seconds Must Be Positive')

    if hop_seconds <= 0:
        raise ValueError('hop_seconds Must Be Positive')

    size = int(round(slice_seconds * utt.sample_rate))
    hop = int(round(hop_seconds * utt.sample_rate))
    total = len(utt.samples)

    if total < size:
        return []

    count = (total - size) // hop + 1
    return [utt.samples[i * hop:i * hop + size] for i in range(count)]


def normalize_matrix(matrix):
    """ Per-slice mean/variance normalization; a (near) constant matrix is only mean-shifted. """

    matrix = np.asarray(matrix, dtype=np.float64)
    centred = matrix - matrix.mean()
    std = centred.std()

    if std < STD_GUARD:
        std = 1.0

    return (centred / std).astype(np.float32)


class FbankExtractor(object):
    """
    Log-mel filterbank front end. The frame hop is slice_length / n_frames so every segment yields exactly n_frames
    frames (2 s at 16 kHz -> hop of 250 samples).

    :param sample_rate: Input sample rate in Hz.
    :param slice_seconds: Expected segment duration.
    :param n_mels: Number of mel filters.
    :param n_frames: Number of output frames.
    """

    def __init__(self, sample_rate=SAMPLE_RATE, slice_seconds=SLICE_SECONDS, n_mels=N_MELS, n_frames=N_FRAMES):

        self.sample_rate = sample_rate
        self.n_mels = n_mels
        self.n_frames = n_frames
        self.segment_length = int(round(slice_seconds * sample_rate))
        self.hop_length = self.segment_length // n_frames
        self.win_length = int(round(WINDOW_SECONDS * sample_rate))
        self.n_fft = max(N_FFT, self.win_length)

        self.mel = torchaudio.transforms.MelSpectrogram(
            sample_rate=sample_rate,
            n_fft=self.n_fft,
            win_length=self.win_length,
            hop_length=self.hop_length,
            f_min=0.0,
            f_max=sample_rate / 2.0,
            n_mels=n_mels,
            power=2.0,
            center=False,
            mel_scale='htk',
        )

    def __call__(self, segment):

        segment = np.asarray(segment, dtype=np.float32).reshape(-1)
        if len(segment) != self.segment_length:
            raise ShapeError('Segment Length %d Does Not Match Slice Length %d' % (len(segment), self.segment_length))

        needed = self.n_fft + (self.n_frames - 1) * self.hop_length
        wave = torch.from_numpy(np.pad(segment, (0, max(0, needed - len(segment)))))

        with torch.no_grad():
            energies = self.mel(wave)[:, :self.n_frames]

        log_mel = torch.log(torch.clamp(energies, min=LOG_FLOOR)).t().numpy()
        return normalize_matrix(log_mel)


def compute_fbank(segment, n_mels=N_MELS, n_frames=N_FRAMES, sample_rate=SAMPLE_RATE, slice_seconds=SLICE_SECONDS):
    """
    Normalized log-mel matrix of one segment, shape (n_frames, n_mels).
    """
    return FbankExtractor(sample_rate, slice_seconds, n_mels, n_frames)(segment)


def read_wav(path, speaker_id, utterance_id):
    """
    Load a 16-bit PCM mono WAV file.

    :return: Utterance. AudioFormatError for stereo or non-16-bit files.
    """

    info = sf.info(path)

    if info.channels != 1:
        raise AudioFormatError('Stereo Audio Not Supported: %s has %d channels' % (path, info.channels))

    if info.subtype != 'PCM_16':
        raise AudioFormatError('16-bit PCM Required: %s is %s' % (path, info.subtype))

    samples, sample_rate = sf.read(path, dtype='float32')
    return Utterance(samples, sample_rate, speaker_id, utterance_id)


def scan_wav_directory(root):
    """
    Find ``<root>/<speaker_id>/<utterance_id>.wav`` files.

    :return: List of (path, speaker_id, utterance_id) tuples in sorted order.
    """

    found = []
    for speaker_id in sorted(os.listdir(root)):
        speaker_dir = os.path.join(root, speaker_id)
        if not os.path.isdir(speaker_dir):
            continue

        for name in sorted(os.listdir(speaker_dir)):
            if name.lower().endswith('.wav'):
                found.append((os.path.join(speaker_dir, name), speaker_id, '%s/%s' % (speaker_id, name[:-4])))

    return found


def extract_features(utterances, slice_seconds=SLICE_SECONDS, hop_seconds=SLICE_SECONDS, n_mels=N_MELS,
                     n_frames=N_FRAMES, workers=1):
    """
    Slice and featurize utterances. Extraction is independent per utterance and runs on a thread pool when
    workers > 1; slices keep the input order either way.

    :param utterances: Iterable of Utterance objects, all at the same sample rate.
    :return: FeatureSet
    """

    utterances = list(utterances)
    if not utterances:
        return FeatureSet([])

    rates = set(u.sample_rate for u in utterances)
    if len(rates) > 1:
        raise AudioFormatError('Mixed Sample Rates: %s' % ', '.join(str(r) for r in sorted(rates)))

    extractor = FbankExtractor(rates.pop(), slice_seconds, n_mels, n_frames)

    def featurize(utt):
        return [
            FbankSlice(extractor(segment), utt.speaker_id, utt.utterance_id, i)
            for i, segment in enumerate(slice_utterance(utt, slice_seconds, hop_seconds))
        ]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_utt = list(pool.map(featurize, utterances))
    else:
        per_utt = [featurize(u) for u in utterances]

    slices = []
    for utt, utt_slices in zip(utterances, per_utt):
        if not utt_slices:
            log.warning('utterance %s shorter than one slice, skipped', utt.utterance_id)
        slices.extend(utt_slices)

    log.info('extracted %d slices from %d utterances', len(slices), len(utterances))
    return FeatureSet(slices)


def _population(rng, n_mels, n_bands=5):

    centres = np.sort(rng.uniform(0.06, 0.94, size=n_bands)) * n_mels
    widths = rng.uniform(0.03, 0.07, size=n_bands) * n_mels
    heights = rng.uniform(1.0, 3.0, size=n_bands)

    return centres, widths, heights


def _speaker_template(rng, population, n_mels, spread):

    centres, widths, heights = population
    centres = centres + rng.normal(0.0, spread * 0.03 * n_mels, size=centres.shape)
    widths = widths * np.exp(rng.normal(0.0, spread * 0.15, size=widths.shape))
    heights = heights * np.exp(rng.normal(0.0, spread * 0.25, size=heights.shape))

    return centres, widths, heights


def _channel(rng, bins, n_mels, strength):
    """ Smooth per-utterance spectral colouring: a random tilt plus low-order cosine ripples. """

    orders = np.arange(1, 4)
    gains = rng.normal(0.0, strength, size=orders.shape) / orders
    return (gains[:, None] * np.cos(np.pi * orders[:, None] * bins[None, :] / n_mels)).sum(axis=0)


def _render_profile(bins, centres, widths, heights):
    bands = heights[:, None] * np.exp(-0.5 * ((bins[None, :] - centres[:, None]) / widths[:, None]) ** 2)
    return bands.sum(axis=0)


def make_synthetic_corpus(n_speakers, utts_per_speaker, seed, n_frames=N_FRAMES, n_mels=N_MELS,
                          slices_per_utterance=1, noise=0.8, spread=0.6, channel=0.4):
    """
    Deterministic desk-scale corpus rendered directly as log-mel matrices.

    Every speaker perturbs one shared population of formant-like bands (positions, widths and heights), so speakers
    overlap and differ only in the details. Each utterance jitters its speaker's bands, passes them through a random
    smooth channel, modulates them with a temporal envelope and adds white noise.

    :param n_speakers: Number of speakers, at least 2.
    :param utts_per_speaker: Utterances per speaker.
    :param seed: Random seed; equal seeds give bit-identical corpora.
    :param slices_per_utterance: Slices rendered per utterance.
    :param noise: Standard deviation of the additive noise, relative to band heights of 1-3.
    :param spread: How far speakers move away from the shared population; larger is easier.
    :param channel: Strength of the per-utterance channel colouring; 0 disables it.
    :return: FeatureSet
    """

    if n_speakers < 2:
        raise ConfigError('n_speakers Must Be At Least 2')

    if utts_per_speaker < 1:
        raise ConfigError('utts_per_speaker Must Be At Least 1')

    rng = np.random.default_rng(seed)
    bins = np.arange(n_mels, dtype=np.float64)
    frames = np.arange(n_frames, dtype=np.float64)
    population = _population(rng, n_mels)

    slices = []
    for s in range(n_speakers):
        speaker_id = 'spk%03d' % s
        centres, widths, heights = _speaker_template(rng, population, n_mels, spread)

        for u in range(utts_per_speaker):
            utterance_id = '%s_utt%03d' % (speaker_id, u)
            jittered = centres + rng.normal(0.0, 0.01 * n_mels, size=centres.shape)
            scaled = heights * rng.uniform(0.9, 1.1, size=heights.shape)
            profile = _render_profile(bins, jittered, widths, scaled) + _channel(rng, bins, n_mels, channel)

            for k in range(slices_per_utterance):
                phase = rng.uniform(0.0, 2 * np.pi, size=3)
                rate = rng.uniform(1.0, 4.0, size=3) * 2 * np.pi / n_frames
                envelope = 1.0 + 0.25 * np.sin(rate[:, None] * frames[None, :] + phase[:, None]).mean(axis=0)

                matrix = envelope[:, None] * profile[None, :]
                matrix = matrix + rng.normal(0.0, noise, size=(n_frames, n_mels))
                slices.append(FbankSlice(normalize_matrix(matrix), speaker_id, utterance_id, k))

    log.info('synthesized %d slices for %d speakers (seed %d)', len(slices), n_speakers, seed)
    return FeatureSet(slices)


def save_features(features, path, tag='features', extra=None):
    """
    Persist a FeatureSet as an MTGF container. Matrices are stored as float32, so the round trip is bit-exact.

    :param features: FeatureSet
    :param path: Destination path.
    :param tag: ``features`` or ``fake``.
    :param extra: Optional dict merged into the index under ``meta``.
    """

    index = {
        'speaker_index': features.speaker_index,
        'slices': [[x.speaker_id, x.utterance_id, x.slice_index] for x in features.slices],
        'meta': extra or {},
    }

    write_container(path, tag, features.matrices(), index)


def load_features(path):
    """
    Load a FeatureSet written by save_features().

    :return: FeatureSet. ContainerError for corrupt or truncated files.
    """

    container = read_container(path)
    index = container['index']
    matrices = container.matrices

    entries = index.get('slices', [])
    if len(entries) != matrices.shape[0]:
        raise ValueError('Feature Index Lists %d Slices But File Holds %d' % (len(entries), matrices.shape[0]))

    slices = [
        FbankSlice(matrices[i], speaker_id, utterance_id, slice_index)
        for i, (speaker_id, utterance_id, slice_index) in enumerate(entries)
    ]

    features = FeatureSet(slices, index.get('speaker_index'))
    features.tag = container.tag
    return features
