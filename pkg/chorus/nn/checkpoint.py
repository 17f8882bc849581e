"""
Model checkpoints: a JSON manifest (layer kinds and shapes, seed, training config, byte offset
and length of every parameter block) next to a contiguous little-endian float32 blob.
"""
import collections
import json
import os

import numpy as np

import chorus.atomic
import chorus.exceptions
from chorus import get_logger
from chorus.nn.layers import Sequential

logger = get_logger(__name__)

FORMAT = "chorus-checkpoint"
VERSION = 1
DTYPE = np.dtype('<f4')


def blob_path(manifest_path):
    return os.path.splitext(manifest_path)[0] + ".bin"


class Checkpoint(object):
    """
    The networks and metadata read back from a checkpoint.
    """

    def __init__(self, networks, meta=None, seed=None, config=None):
        self.networks = networks
        self.meta = meta or {}
        self.seed = seed
        self.config = config or {}

    def __getitem__(self, name):
        return self.networks[name]


def save_checkpoint(path, networks, meta=None, seed=None, config=None):
    """
    :param str path: manifest path; the blob goes to the same name with a `.bin` extension.
    :param collections.OrderedDict networks: name -> Sequential
    :param dict meta: free-form JSON-serialisable metadata (thresholds, presets, arm flags...).
    :param int seed: the seed the networks were initialised from.
    :param dict config: training configuration, e.g. SgdConfig.to_dict().
    """
    blocks = []
    chunks = []
    offset = 0
    for net_name, net in networks.items():
        for param_name, tensor in net.params().items():
            raw = np.ascontiguousarray(tensor.data, dtype=DTYPE).tobytes()
            blocks.append(collections.OrderedDict([
                ("name", "{}.{}".format(net_name, param_name)),
                ("shape", list(tensor.shape)),
                ("offset", offset),
                ("length", len(raw)),
            ]))
            chunks.append(raw)
            offset += len(raw)

    manifest = collections.OrderedDict([
        ("format", FORMAT),
        ("version", VERSION),
        ("seed", seed),
        ("config", config or {}),
        ("meta", meta or {}),
        ("networks", collections.OrderedDict((n, net.describe()) for n, net in networks.items())),
        ("blob", os.path.basename(blob_path(path))),
        ("blocks", blocks),
    ])
    chorus.atomic.write_bytes(blob_path(path), b"".join(chunks))
    chorus.atomic.write_text(path, json.dumps(manifest, indent=2) + "\n")
    logger.info("wrote checkpoint {} ({} blocks, {} bytes)".format(path, len(blocks), offset))


def load_checkpoint(path):
    """
    :rtype: Checkpoint
    :raises MissingCheckpointError: when the manifest or blob does not exist.
    :raises FormatError: when the manifest is not a checkpoint or a block does not fit the blob.
    """
    import chorus.registry

    if not os.path.exists(path) or not os.path.exists(blob_path(path)):
        raise chorus.exceptions.MissingCheckpointError(os.path.basename(path), path)
    with open(path, encoding='utf-8') as f:
        try:
            manifest = json.load(f, object_pairs_hook=collections.OrderedDict)
        except ValueError as e:
            raise chorus.exceptions.FormatError("unreadable manifest {}: {}".format(path, e), field="manifest")
    if manifest.get("format") != FORMAT:
        raise chorus.exceptions.FormatError("{} is not a checkpoint manifest".format(path), field="format")
    with open(blob_path(path), 'rb') as f:
        blob = f.read()

    networks = collections.OrderedDict()
    for net_name, layers in manifest["networks"].items():
        networks[net_name] = Sequential([chorus.registry.build(desc) for desc in layers])

    by_name = {}
    for net_name, net in networks.items():
        for param_name, tensor in net.params().items():
            by_name["{}.{}".format(net_name, param_name)] = tensor

    for block in manifest["blocks"]:
        tensor = by_name.get(block["name"])
        if tensor is None:
            raise chorus.exceptions.FormatError("unknown parameter block {}".format(block["name"]), field="blocks")
        end = block["offset"] + block["length"]
        if end > len(blob) or block["length"] != int(np.prod(block["shape"])) * DTYPE.itemsize:
            raise chorus.exceptions.FormatError("block {} does not fit the blob".format(block["name"]), field="blocks")
        values = np.frombuffer(blob[block["offset"]:end], dtype=DTYPE).astype(np.float64)
        if tuple(block["shape"]) != tensor.shape:
            raise chorus.exceptions.ShapeError(
                "block {} has shape {}, layer expects {}".format(block["name"], block["shape"], tensor.shape))
        tensor.data = values.reshape(tensor.shape)

    return Checkpoint(networks, meta=manifest.get("meta"), seed=manifest.get("seed"), config=manifest.get("config"))
