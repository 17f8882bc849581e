from chorus.detector.anchors import AnchorConfig, generate_anchors, assign_anchors
from chorus.detector.roi import roi_align, RoiAlign
from chorus.detector.network import (
    BackboneConfig, DetectConfig, Detector, GazeCandidate, FrameDetections,
    backbone_forward, rpn_forward, fcn_mask, detect,
)
from chorus.detector.train import train_detector, detector_loss, build_targets
