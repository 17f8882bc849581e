"""
Speaker / listener identification from lip motion and audio.

Every run of 5 consecutive visible frames (200 ms) of a person gives a lip window, paired
with the 20 MFCC frames of the same span. Two small networks embed both onto the unit sphere,
trained with a contrastive loss so that synchronized pairs land close together. Per frame,
the person whose lips are closest to the audio is the speaker, unless even that distance
exceeds the threshold tau, in which case the voice belongs to nobody in view.
"""
import collections

import numpy as np
from scipy.ndimage import map_coordinates

import chorus.event
import chorus.exceptions
from chorus import AUDIO_WINDOW, EMBED_DIM, LIP_WINDOW, VIDEO_FPS, frames_per_hop, get_logger
from chorus.data.fields import LISTENER, SPEAKER
from chorus.data.jsonl import IDENTITY_KEYS, row, write_jsonl
from chorus.nn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from chorus.nn.layers import Conv2d, Flatten, L2Normalize, Linear, ReLU, Sequential
from chorus.nn.losses import contrastive_with_grad
from chorus.nn.optim import Sgd, SgdConfig

logger = get_logger(__name__)

PATCH_HEIGHT = 48
PATCH_WIDTH = 96
MFCC_COEFFICIENTS = 13
MIN_FACE_SIZE = 4
MIN_SHIFT = 10  # video frames between a lip window and the audio of a shifted negative
AUDIO_SCALE = 10.0
TIE_EPSILON = 1e-9
EMBED_BATCH = 64

SyncPair = collections.namedtuple('SyncPair', ['lip', 'audio', 'label'])


class FaceTrack(object):
    """
    :ivar int person_id:
    :ivar list entries: (frame index, face box) with strictly increasing frame indices.
    """

    def __init__(self, person_id, entries):
        self.person_id = int(person_id)
        self.entries = [(int(f), tuple(b)) for f, b in entries]
        for (a, _), (b, _) in zip(self.entries, self.entries[1:]):
            if b <= a:
                raise chorus.exceptions.ArgumentError(
                    "face track {}: frame {} follows frame {}".format(self.person_id, b, a))

    def frames(self):
        return [f for f, _ in self.entries]

    def box_at(self, frame):
        for f, b in self.entries:
            if f == frame:
                return b
        return None

    def __len__(self):
        return len(self.entries)


class LipWindow(object):

    def __init__(self, person_id, start, patches):
        patches = np.asarray(patches, dtype=np.float64)
        if patches.shape != (LIP_WINDOW, PATCH_HEIGHT, PATCH_WIDTH):
            raise chorus.exceptions.ShapeError("a lip window is {}x{}x{}, got {}".format(
                LIP_WINDOW, PATCH_HEIGHT, PATCH_WIDTH, patches.shape))
        self.person_id = person_id
        self.start = start
        self.patches = patches

    @property
    def frames(self):
        return range(self.start, self.start + LIP_WINDOW)

    @property
    def center_time(self):
        return (self.start + LIP_WINDOW / 2.0) / float(VIDEO_FPS)


class AudioWindow(object):
    """
    The 20 MFCC frames starting at MFCC index 4 * `start`, where `start` is the video frame the
    paired lip window starts at.
    """

    def __init__(self, start, coefficients, timestamps=None):
        coefficients = np.asarray(coefficients, dtype=np.float64)
        if coefficients.shape != (AUDIO_WINDOW, MFCC_COEFFICIENTS):
            raise chorus.exceptions.ShapeError("an audio window is {}x{} MFCC frames, got {}".format(
                AUDIO_WINDOW, MFCC_COEFFICIENTS, coefficients.shape))
        self.start = start
        self.coefficients = coefficients
        self.timestamps = timestamps

    @property
    def center_time(self):
        return float(np.mean(self.timestamps)) if self.timestamps is not None else None


class IdentityLabel(object):
    """
    :ivar int person_id:
    :ivar str label: `speaker` or `listener`.
    :ivar float score: median distance of the windows covering the frame (inf when none does).
    :ivar list window_scores: those distances.
    """

    def __init__(self, person_id, label, score, window_scores=()):
        self.person_id = person_id
        self.label = label
        self.score = score
        self.window_scores = list(window_scores)

    def __repr__(self):
        return "IdentityLabel({}, {}, {:.4f})".format(self.person_id, self.label, self.score)


def luminance(frame):
    """
    (H, W, 3) uint8 -> (H, W) in [0, 1].
    """
    rgb = np.asarray(frame, dtype=np.float64) / 255.0
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def mouth_box(face_box):
    """
    The central half horizontally and the lower 45% vertically of a face box.
    """
    x, y, w, h = face_box
    return (x + 0.25 * w, y + 0.55 * h, 0.5 * w, 0.45 * h)


def crop_mouth(frame, face_box):
    """
    :param numpy.ndarray frame: (H, W, 3) uint8.
    :returns: (48, 96) grayscale patch in [0, 1], bilinearly resampled from the mouth box.
    :raises SkipPerson: when the face box is narrower or shorter than 4 px.
    """
    x, y, w, h = face_box
    if w < MIN_FACE_SIZE or h < MIN_FACE_SIZE:
        raise chorus.exceptions.SkipPerson("face box {} is smaller than {} px".format(face_box, MIN_FACE_SIZE))
    mx, my, mw, mh = mouth_box(face_box)
    rows = my + (np.arange(PATCH_HEIGHT) + 0.5) * mh / PATCH_HEIGHT - 0.5
    cols = mx + (np.arange(PATCH_WIDTH) + 0.5) * mw / PATCH_WIDTH - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing='ij')
    patch = map_coordinates(luminance(frame), [rr, cc], order=1, mode='nearest')
    return np.clip(patch, 0.0, 1.0)


def _runs(frames):
    """
    Start indices of every run of LIP_WINDOW consecutive frames, stride 1.
    """
    visible = set(frames)
    return [f for f in sorted(visible) if all(f + k in visible for k in range(LIP_WINDOW))]


def make_windows(track, frames, stream):
    """
    :param FaceTrack track:
    :param frames: the clip's (H, W, 3) frames, indexable by frame index.
    :param chorus.audio.MfccStream stream: MFCC frames at 100 Hz.
    :returns: (LipWindow, AudioWindow) pairs, one per run of 5 consecutive visible frames whose
        audio span lies inside the stream.
    """
    patches = {}
    for f, box in track.entries:
        if f >= len(frames):
            continue
        try:
            patches[f] = crop_mouth(frames[f], box)
        except chorus.exceptions.SkipPerson as e:
            logger.warning("person {} frame {}: {}".format(track.person_id, f, e))

    hop = frames_per_hop()
    pairs = []
    for start in _runs(patches):
        a0 = hop * start
        if a0 + AUDIO_WINDOW > len(stream):
            continue
        lip = LipWindow(track.person_id, start, np.stack([patches[start + k] for k in range(LIP_WINDOW)]))
        audio = AudioWindow(start, stream.coefficients[a0:a0 + AUDIO_WINDOW], stream.timestamps[a0:a0 + AUDIO_WINDOW])
        pairs.append((lip, audio))
    return pairs


def audio_window_at(stream, start):
    a0 = frames_per_hop() * start
    if a0 < 0 or a0 + AUDIO_WINDOW > len(stream):
        return None
    return AudioWindow(start, stream.coefficients[a0:a0 + AUDIO_WINDOW], stream.timestamps[a0:a0 + AUDIO_WINDOW])


def build_visual_net(rng):
    return Sequential([
        Conv2d(LIP_WINDOW, 8, 3, stride=2, padding=1, rng=rng), ReLU(),
        Conv2d(8, 16, 3, stride=2, padding=1, rng=rng), ReLU(),
        Conv2d(16, 32, 3, stride=2, padding=1, rng=rng), ReLU(),
        Flatten(),
        Linear(32 * (PATCH_HEIGHT // 8) * (PATCH_WIDTH // 8), EMBED_DIM, rng=rng),
        L2Normalize(),
    ])


def build_audio_net(rng):
    return Sequential([
        Conv2d(1, 16, 3, stride=2, padding=1, rng=rng), ReLU(),
        Conv2d(16, 32, 3, stride=2, padding=1, rng=rng), ReLU(),
        Flatten(),
        Linear(32 * 4 * 5, EMBED_DIM, rng=rng),
        L2Normalize(),
    ])


class SyncModel(object):
    """
    The lip and audio embedders plus the calibrated speaker threshold tau (None until
    calibrated).
    """

    def __init__(self, seed=0, tau=None):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.visual = build_visual_net(rng)
        self.audio = build_audio_net(rng)
        self.tau = tau

    def networks(self):
        return collections.OrderedDict([("visual", self.visual), ("audio", self.audio)])

    def params(self):
        out = collections.OrderedDict()
        for net_name, net in self.networks().items():
            for name, p in net.params().items():
                out["{}.{}".format(net_name, name)] = p
        return out

    def save(self, path, config=None):
        save_checkpoint(path, self.networks(), meta={"stage": "sync", "tau": self.tau}, seed=self.seed, config=config)

    @classmethod
    def load(cls, path):
        checkpoint = path if isinstance(path, Checkpoint) else load_checkpoint(path)
        model = cls.__new__(cls)
        model.seed = checkpoint.seed
        model.visual = checkpoint["visual"]
        model.audio = checkpoint["audio"]
        model.tau = checkpoint.meta.get("tau")
        return model


def visual_input(windows):
    """
    Lip windows as a (N, 5, 48, 96) batch with the temporal mean of every pixel removed.
    """
    x = np.stack([w.patches for w in windows])
    return x - x.mean(axis=1, keepdims=True)


def audio_input(windows):
    """
    Audio windows as a (N, 1, 13, 20) batch, per-coefficient mean removed and scaled.
    """
    x = np.stack([w.coefficients.T for w in windows])
    return ((x - x.mean(axis=2, keepdims=True)) / AUDIO_SCALE)[:, None]


def _embed(net, x):
    out = [net.forward(x[i:i + EMBED_BATCH]) for i in range(0, len(x), EMBED_BATCH)]
    return np.concatenate(out) if out else np.zeros((0, EMBED_DIM))


def embed_visual(windows, model):
    """
    :param windows: a LipWindow or a list of them.
    :returns: unit-norm (64,) embedding, or (N, 64) for a list.
    """
    single = isinstance(windows, LipWindow)
    out = _embed(model.visual, visual_input([windows] if single else windows))
    return out[0] if single else out


def embed_audio(windows, model):
    single = isinstance(windows, AudioWindow)
    out = _embed(model.audio, audio_input([windows] if single else windows))
    return out[0] if single else out


def sync_distance(v, a):
    """
    Euclidean distance of two embeddings; in [0, 2] for unit vectors.
    """
    v = np.asarray(v, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if v.shape != a.shape:
        raise chorus.exceptions.ShapeError("embeddings differ in shape: {} vs {}".format(v.shape, a.shape))
    d = np.sqrt(np.sum((v - a) ** 2, axis=-1))
    return float(d) if d.ndim == 0 else d


def build_sync_corpus(clips, streams, seed=0):
    """
    Labelled lip/audio pairs from clips with identity ground truth. Positives pair a speaker's
    lip window with the audio of the same span. Negatives pair a listener's lip window with
    that audio, or a speaker's lip window with audio shifted by at least 10 frames.
    Negatives are subsampled to the number of positives when there are more of them.

    :param clips: chorus.data.media.Clip objects whose `identity` rows carry the labels.
    :param streams: the MFCC stream of every clip.
    :rtype: list of SyncPair
    """
    rng = np.random.default_rng(seed)
    positives, negatives = [], []
    for clip, stream in zip(clips, streams):
        speaking = set((r["frame"], r["person_id"]) for r in clip.identity if r["label"] == SPEAKER)
        for track in clip.face_tracks():
            for lip, audio in make_windows(track, clip.frames, stream):
                if all((f, track.person_id) in speaking for f in lip.frames):
                    positives.append(SyncPair(lip, audio, 1))
                    shifted = _shifted_audio(stream, lip.start, rng)
                    if shifted is not None:
                        negatives.append(SyncPair(lip, shifted, 0))
                elif not any((f, track.person_id) in speaking for f in lip.frames):
                    negatives.append(SyncPair(lip, audio, 0))
    if len(negatives) > len(positives) > 0:
        keep = np.sort(rng.choice(len(negatives), size=len(positives), replace=False))
        negatives = [negatives[i] for i in keep]
    logger.info("sync corpus: {} positive, {} negative pairs".format(len(positives), len(negatives)))
    return positives + negatives


def _shifted_audio(stream, start, rng):
    n_starts = len(stream) // frames_per_hop() - LIP_WINDOW + 1
    choices = [s for s in range(n_starts) if abs(s - start) >= MIN_SHIFT]
    if not choices:
        return None
    return audio_window_at(stream, int(choices[rng.integers(len(choices))]))


def sync_loss(model, pairs, backward=True):
    """
    Mean contrastive loss of a batch of pairs; accumulates gradients when `backward` is set.
    """
    v = model.visual.forward(visual_input([p.lip for p in pairs]))
    a = model.audio.forward(audio_input([p.audio for p in pairs]))
    y = np.array([p.label for p in pairs], dtype=np.float64)
    diff = v - a
    d = np.sqrt(np.sum(diff * diff, axis=1))
    loss, dd = contrastive_with_grad(d, y)
    n = float(len(pairs))
    if backward:
        safe = np.where(d > 0, d, 1.0)
        dv = np.where(d[:, None] > 0, diff / safe[:, None], 0.0) * (dd / n)[:, None]
        model.visual.backward(dv)
        model.audio.backward(-dv)
    return loss / n


def train_sync(pairs, config=None, model=None, run=None):
    """
    :param list pairs: SyncPairs holding both labels.
    :param SgdConfig config:
    :rtype: chorus.event.TrainingResult
    :raises InvalidCorpusError: when the corpus lacks either label.
    """
    config = config or SgdConfig()
    pairs = list(pairs)
    labels = set(p.label for p in pairs)
    if labels != {0, 1}:
        raise chorus.exceptions.InvalidCorpusError(
            "sync corpus needs matched and mismatched pairs, got labels {}".format(sorted(labels)))
    model = model or SyncModel(seed=config.seed)
    run = run or chorus.event.TrainingRun("sync")
    optimizer = Sgd(model.params(), config)
    rng = np.random.default_rng(config.seed)

    for epoch in range(1, config.epochs + 1):
        run.start_epoch(epoch)
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), config.batch_size):
            batch = [pairs[i] for i in order[start:start + config.batch_size]]
            optimizer.zero_grad()
            run.record_step(sync_loss(model, batch))
            optimizer.step()
        mean = run.end_epoch(epoch)
        logger.info("sync epoch {}/{}: mean loss {:.5f}".format(epoch, config.epochs, mean))
    return chorus.event.TrainingResult(model, run.history)


def pair_distances(model, pairs):
    """
    :returns: (distances, labels) arrays.
    """
    pairs = list(pairs)
    if not pairs:
        return np.zeros(0), np.zeros(0, dtype=int)
    v = embed_visual([p.lip for p in pairs], model)
    a = embed_audio([p.audio for p in pairs], model)
    return np.sqrt(np.sum((v - a) ** 2, axis=1)), np.array([p.label for p in pairs], dtype=int)


def calibrate_threshold(matched, mismatched):
    """
    Midpoint between the mean matched and the mean mismatched distance.
    """
    matched = np.asarray(matched, dtype=np.float64)
    mismatched = np.asarray(mismatched, dtype=np.float64)
    if matched.size == 0 or mismatched.size == 0:
        raise chorus.exceptions.InvalidCorpusError("calibration needs matched and mismatched distances")
    return float((matched.mean() + mismatched.mean()) / 2.0)


def pair_accuracy(distances, labels, tau):
    """
    Fraction of pairs classified correctly by `distance < tau` meaning matched.
    """
    distances = np.asarray(distances)
    labels = np.asarray(labels)
    if distances.size == 0:
        return 0.0
    return float(np.mean((distances < tau) == (labels == 1)))


def classify_speakers(tracks, frames, stream, model, tau=None):
    """
    :param list tracks: FaceTracks of the people in view.
    :param frames: the clip's frames.
    :param chorus.audio.MfccStream stream:
    :param SyncModel model:
    :param float tau: defaults to the model's calibrated threshold.
    :returns: OrderedDict frame index -> IdentityLabels (by person id) of everyone visible.
    """
    tau = model.tau if tau is None else tau
    if tau is None:
        raise chorus.exceptions.ArgumentError("no speaker threshold: calibrate the model or pass tau")
    if not tracks:
        raise chorus.exceptions.ArgumentError("classify_speakers needs at least one face track")

    covering = collections.defaultdict(list)
    for track in tracks:
        pairs = make_windows(track, frames, stream)
        if not pairs:
            continue
        v = embed_visual([lip for lip, _ in pairs], model)
        a = embed_audio([audio for _, audio in pairs], model)
        distances = np.sqrt(np.sum((v - a) ** 2, axis=1))
        for (lip, _), d in zip(pairs, distances):
            for f in lip.frames:
                covering[(f, track.person_id)].append(float(d))

    visible = collections.defaultdict(list)
    for track in tracks:
        for f, _ in track.entries:
            visible[f].append(track.person_id)

    out = collections.OrderedDict()
    for f in sorted(visible):
        people = sorted(visible[f])
        scores = {}
        for pid in people:
            ds = covering.get((f, pid))
            scores[pid] = float(np.median(ds)) if ds else float('inf')
        best = min(scores.values())
        speaker = None
        if best < tau:
            speaker = min(pid for pid in people if scores[pid] <= best + TIE_EPSILON)
        else:
            logger.debug("frame {}: no distance below tau {:.4f}, voice is out of frame".format(f, tau))
        out[f] = [IdentityLabel(pid, SPEAKER if pid == speaker else LISTENER, scores[pid],
                                covering.get((f, pid), ())) for pid in people]
    return out


def identity_rows(video, labels):
    """
    :param labels: the output of `classify_speakers`.
    :returns: ordered dict rows {video, frame, person_id, label, score}; an infinite score is
        written as null.
    """
    return [row(IDENTITY_KEYS, video, f, lab.person_id, lab.label, lab.score)
            for f, frame_labels in labels.items() for lab in frame_labels]


def write_identity_jsonl(path, video, labels):
    write_jsonl(path, identity_rows(video, labels))
