from chorus.data.fields import SPEAKER, LISTENER, LABELS
from chorus.data.records import VgsDataset, VgsRecord, VideoHeader, read_vgs, write_vgs
from chorus.data.split import DatasetSplit, split_dataset, split_keys
