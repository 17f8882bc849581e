"""
WAV ingestion and the 13-coefficient MFCC stream at 100 frames per second.
"""
import collections
import csv
import math

import numpy as np
import scipy.fft
from scipy.io import wavfile

import chorus.atomic
import chorus.exceptions
from chorus import SAMPLE_RATE, get_logger

logger = get_logger(__name__)

PCM_SCALE = 32768.0


class AudioTrack(object):
    """
    Mono audio with samples in [-1, 1].
    """

    def __init__(self, samples, sample_rate=SAMPLE_RATE):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 1:
            raise chorus.exceptions.ShapeError("audio must be mono, got samples of shape {}".format(samples.shape))
        if not np.all(np.isfinite(samples)):
            raise chorus.exceptions.ArgumentError("audio samples must be finite")
        if sample_rate <= 0:
            raise chorus.exceptions.ArgumentError("sample rate must be positive, got {}".format(sample_rate))
        self.samples = samples
        self.sample_rate = int(sample_rate)

    @property
    def duration(self):
        return len(self.samples) / float(self.sample_rate)

    def __len__(self):
        return len(self.samples)


def _check_header(path):
    with open(path, 'rb') as f:
        header = f.read(12)
    if len(header) < 12 or header[0:4] != b'RIFF':
        raise chorus.exceptions.FormatError(
            "{}: bad chunk id {!r}, expected 'RIFF'".format(path, header[0:4]), field="ChunkID")
    if header[8:12] != b'WAVE':
        raise chorus.exceptions.FormatError(
            "{}: bad format {!r}, expected 'WAVE'".format(path, header[8:12]), field="Format")


def load_wav(path, resample=False):
    """
    Reads a 16-bit PCM mono WAV file.

    :param str path:
    :param bool resample: convert other sample rates to 16 kHz instead of failing.
    :rtype: AudioTrack
    :raises FormatError: naming the header field that is not RIFF/WAVE, PCM16, mono, 16 kHz.
    """
    _check_header(path)
    try:
        rate, data = wavfile.read(path)
    except ValueError as e:
        raise chorus.exceptions.FormatError("{}: {}".format(path, e), field="fmt")
    if data.ndim != 1:
        raise chorus.exceptions.FormatError(
            "{}: {} channels, expected mono".format(path, data.shape[1]), field="NumChannels")
    if data.dtype != np.int16:
        raise chorus.exceptions.FormatError(
            "{}: sample type {}, expected 16-bit PCM".format(path, data.dtype), field="BitsPerSample")
    track = AudioTrack(data.astype(np.float64) / PCM_SCALE, rate)
    if rate != SAMPLE_RATE:
        if not resample:
            raise chorus.exceptions.FormatError(
                "sample rate {} ≠ {}".format(rate, SAMPLE_RATE), field="SampleRate")
        track = resample_linear(track, SAMPLE_RATE)
    return track


def write_wav(path, track):
    pcm = np.clip(np.round(track.samples * PCM_SCALE), -PCM_SCALE, PCM_SCALE - 1).astype(np.int16)
    with chorus.atomic.AtomicFile(path, mode='wb') as f:
        wavfile.write(f, track.sample_rate, pcm)


def resample_linear(track, target_rate):
    """
    Linear interpolation onto the target grid; output length is round(n * target / source).
    """
    if target_rate <= 0:
        raise chorus.exceptions.ArgumentError("target rate must be positive, got {}".format(target_rate))
    if target_rate == track.sample_rate:
        return AudioTrack(track.samples.copy(), track.sample_rate)
    n = len(track.samples)
    n_out = int(math.floor(n * float(target_rate) / track.sample_rate + 0.5))
    positions = np.arange(n_out) * (float(track.sample_rate) / target_rate)
    samples = np.interp(positions, np.arange(n), track.samples) if n else np.zeros(0)
    return AudioTrack(samples, target_rate)


class MfccConfig(object):

    def __init__(self, preemphasis=0.97, window=0.025, hop=0.010, n_fft=512, n_mels=40, fmin=0.0,
                 fmax=8000.0, log_floor=1e-10, n_coefficients=13, include_c0=True):
        if not 0 <= fmin < fmax:
            raise chorus.exceptions.ArgumentError("mel range must satisfy 0 <= fmin < fmax")
        self.preemphasis = float(preemphasis)
        self.window = float(window)
        self.hop = float(hop)
        self.n_fft = int(n_fft)
        self.n_mels = int(n_mels)
        self.fmin = float(fmin)
        self.fmax = float(fmax)
        self.log_floor = float(log_floor)
        self.n_coefficients = int(n_coefficients)
        self.include_c0 = bool(include_c0)


MfccFrame = collections.namedtuple('MfccFrame', ['coefficients', 'timestamp'])


class MfccStream(object):
    """
    A sequence of MfccFrames stored as one (T, 13) array plus frame-center timestamps.
    """

    def __init__(self, coefficients, timestamps):
        self.coefficients = np.asarray(coefficients, dtype=np.float64).reshape(len(timestamps), -1)
        self.timestamps = np.asarray(timestamps, dtype=np.float64)

    def __len__(self):
        return len(self.timestamps)

    def __getitem__(self, i):
        return MfccFrame(self.coefficients[i], float(self.timestamps[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(config):
    """
    :returns: the center frequency in Hz of every mel filter.
    """
    mels = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2)
    return mel_to_hz(mels)[1:-1]


def mel_filterbank(sample_rate, config):
    """
    (n_mels, n_fft // 2 + 1) triangular filters, evaluated at the FFT bin frequencies.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2))
    freqs = np.arange(config.n_fft // 2 + 1) * float(sample_rate) / config.n_fft
    bank = np.zeros((config.n_mels, len(freqs)))
    for m in range(config.n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        bank[m] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def dct_matrix(n):
    """
    The orthonormal DCT-II as an (n, n) matrix D, so that D @ x == dct(x, norm='ortho').
    """
    return scipy.fft.dct(np.eye(n), type=2, norm='ortho', axis=0)


def mfcc_extract(track, config=None):
    """
    Pre-emphasis, 25 ms Hamming frames every 10 ms centered on the hop grid (reflect padding),
    512-point power spectrum, 40 mel filters, log with a floor, orthonormal DCT-II.

    Frame k is centered at (k + 0.5) * hop, so a track of duration d yields round(d / hop)
    frames: 200 ms gives exactly 20. Tracks shorter than one hop give an empty stream.

    :rtype: MfccStream
    """
    config = config or MfccConfig()
    sr = track.sample_rate
    hop = int(round(config.hop * sr))
    win = int(round(config.window * sr))
    n = len(track.samples)
    width = config.n_coefficients
    if n < hop:
        return MfccStream(np.zeros((0, width)), np.zeros(0))

    count = int(math.floor(n / float(hop) + 0.5))
    x = track.samples
    emphasized = np.append(x[0], x[1:] - config.preemphasis * x[:-1])
    pad = win
    padded = np.pad(emphasized, (pad, pad + hop), mode='reflect')

    starts = pad + np.arange(count) * hop + hop // 2 - win // 2
    frames = padded[starts[:, None] + np.arange(win)[None, :]] * np.hamming(win)
    power = np.abs(np.fft.rfft(frames, config.n_fft)) ** 2 / config.n_fft
    energies = power @ mel_filterbank(sr, config).T
    log_mel = np.log(np.maximum(energies, config.log_floor))
    cepstra = scipy.fft.dct(log_mel, type=2, norm='ortho', axis=1)
    first = 0 if config.include_c0 else 1
    coefficients = cepstra[:, first:first + width]
    timestamps = (np.arange(count) + 0.5) * hop / float(sr)
    return MfccStream(coefficients, timestamps)


def write_mfcc_csv(path, stream):
    """
    One row per frame: timestamp, c0..c12, 9 significant digits.
    """
    with chorus.atomic.AtomicFile(path) as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['timestamp'] + ['c{}'.format(i) for i in range(stream.coefficients.shape[1])])
        for frame in stream:
            writer.writerow(['{:.9g}'.format(frame.timestamp)] + ['{:.9g}'.format(c) for c in frame.coefficients])
