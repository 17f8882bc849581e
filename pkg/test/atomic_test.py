import os
import shutil
import tempfile
import unittest

import mock

from chorus import event
from chorus.atomic import AtomicFile, write_bytes, write_text


class AtomicFileTest(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.mkdtemp()
        self.path = os.path.join(self.directory, "out", "a.txt")

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_write(self):
        write_text(self.path, "one\n")
        write_text(self.path, "two\n")
        with open(self.path) as f:
            assert f.read() == "two\n"
        assert os.listdir(os.path.dirname(self.path)) == ["a.txt"]

    def test_bytes(self):
        write_bytes(self.path, b"\x00\x01")
        with open(self.path, "rb") as f:
            assert f.read() == b"\x00\x01"

    def test_failure_keeps_previous_content(self):
        write_text(self.path, "kept\n")
        with self.assertRaises(RuntimeError):
            with AtomicFile(self.path) as f:
                f.write("partial")
                raise RuntimeError("interrupted")
        with open(self.path) as f:
            assert f.read() == "kept\n"
        assert os.listdir(os.path.dirname(self.path)) == ["a.txt"]


class TrainingRunTest(unittest.TestCase):

    def test_history(self):
        run = event.TrainingRun("sync")
        run.start_epoch(1)
        run.record_step(1.0)
        run.record_step(3.0)
        assert run.end_epoch(1) == 2.0
        run.start_epoch(2)
        assert run.end_epoch(2) == 0.0
        assert run.history == [2.0, 0.0]

    def test_events(self):
        run = event.TrainingRun("matcher")
        start, step, end = mock.Mock(), mock.Mock(), mock.Mock()
        run.on(event.EPOCH_START, start)
        run.on(event.STEP, step)
        run.on(event.EPOCH_END, end)
        run.start_epoch(1)
        run.record_step(0.5)
        run.end_epoch(1)
        start.assert_called_once_with("matcher", 1)
        step.assert_called_once_with("matcher", 1, 0.5)
        end.assert_called_once_with("matcher", 1, 0.5)

        other = mock.Mock()
        run.on(event.STEP, other)
        run.start_epoch(2)
        run.record_step(0.1)
        assert step.call_count == 2
        other.assert_called_once_with("matcher", 1, 0.1)

    def test_duplicate_listener(self):
        run = event.TrainingRun("detector")
        callback = mock.Mock()
        run.on(event.STEP, callback)
        with self.assertRaises(AssertionError):
            run.on(event.STEP, callback)
