"""Automated prompt proposal: targets, losses, decoding and the head network."""
from .decode import Proposal, point_nms, topn_decode
from .head import AutoPPN
from .losses import hard_mining_mse, ppn_loss, smooth_l1_box
from .targets import PpnTargets, TargetError, build_point_targets, distance_transform

__all__ = [
    "AutoPPN", "PpnTargets", "Proposal", "TargetError", "build_point_targets",
    "distance_transform", "hard_mining_mse", "point_nms", "ppn_loss", "smooth_l1_box",
    "topn_decode",
]
