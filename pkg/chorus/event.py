"""
Progress events of the training loops (chorus.speaker, chorus.detector.train, chorus.matcher).
Listeners receive the stage name first, then the event's own arguments.
"""
import collections

EPOCH_START = 1   # (stage, epoch)
EPOCH_END = 2     # (stage, epoch, mean loss)
STEP = 3          # (stage, step within the epoch, batch loss)


class ProgressEvents(object):

    def __init__(self):
        self.__listeners = collections.defaultdict(list)

    def on(self, event, callback):
        assert callback not in self.__listeners[event], "listener already registered"
        self.__listeners[event].append(callback)

    def emit(self, event, *args):
        for callback in self.__listeners[event]:
            callback(*args)


class TrainingRun(ProgressEvents):
    """
    The per-epoch mean loss history of one stage. Every loop owns one; the CLI hooks EPOCH_END to
    log progress.
    """

    def __init__(self, stage):
        super(TrainingRun, self).__init__()
        self.stage = stage
        self.history = []
        self._epoch_losses = []

    def start_epoch(self, epoch):
        self._epoch_losses = []
        self.emit(EPOCH_START, self.stage, epoch)

    def record_step(self, loss):
        self._epoch_losses.append(float(loss))
        self.emit(STEP, self.stage, len(self._epoch_losses), float(loss))

    def end_epoch(self, epoch):
        mean = sum(self._epoch_losses) / len(self._epoch_losses) if self._epoch_losses else 0.0
        self.history.append(mean)
        self.emit(EPOCH_END, self.stage, epoch, mean)
        return mean


TrainingResult = collections.namedtuple('TrainingResult', ['model', 'history'])
