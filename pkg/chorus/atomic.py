import os
import tempfile

from chorus import get_logger

logger = get_logger(__name__)


class AtomicFile(object):
    """
    Writes a file so that readers see either the previous content or the complete new content,
    never a partial write. Content goes to a temporary file in the target's directory and is
    renamed over the target on a clean exit; on an exception the temporary file is removed and
    the target is left untouched.

    ```python
    with AtomicFile('out/matches.jsonl') as f:
        f.write(line)
    ```
    """

    def __init__(self, path, mode='w'):
        self.path = path
        self.mode = mode
        self._tmp = None
        self._handle = None

    def __enter__(self):
        directory = os.path.dirname(os.path.abspath(self.path))
        if not os.path.isdir(directory):
            os.makedirs(directory)
        fd, self._tmp = tempfile.mkstemp(prefix='.' + os.path.basename(self.path) + '.', dir=directory)
        kwargs = {} if 'b' in self.mode else {'encoding': 'utf-8', 'newline': ''}
        self._handle = os.fdopen(fd, self.mode, **kwargs)
        return self._handle

    def __exit__(self, exc_type, exc_val, exc_tb):
        self._handle.close()
        if exc_type is None:
            os.replace(self._tmp, self.path)
        else:
            logger.warning("discarding partial write of {}".format(self.path))
            os.remove(self._tmp)


def write_text(path, text):
    with AtomicFile(path) as f:
        f.write(text)


def write_bytes(path, data):
    with AtomicFile(path, mode='wb') as f:
        f.write(data)
