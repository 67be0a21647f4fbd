"""Prompt encoder, mask decoder, mask losses and the SegAny/SegEvery pipelines."""
from .decoder import MaskDecoder, MaskPrediction
from .losses import binary_iou, combine_mask, dice_loss, focal_loss, iou_mse, mask_loss, total_loss
from .metrics import average_recall, dataset_average_recall, miou_at_prompt
from .model import LiteSAM, Predictor, build_model
from .pipeline import (SegEveryResult, dedup_masks, grid_prompts, mask_iou_matrix, random_prompts,
                       seg_any, seg_every)
from .prompt import Box, Point, PointBox, PromptEncoder, PromptError, as_prompt, encode_prompt

__all__ = [
    "Box", "LiteSAM", "MaskDecoder", "MaskPrediction", "Point", "PointBox", "Predictor",
    "PromptEncoder", "PromptError", "SegEveryResult", "as_prompt", "average_recall", "binary_iou",
    "build_model", "combine_mask", "dataset_average_recall", "dedup_masks", "dice_loss",
    "encode_prompt", "focal_loss", "grid_prompts", "iou_mse", "mask_iou_matrix", "mask_loss",
    "miou_at_prompt", "random_prompts", "seg_any", "seg_every", "total_loss",
]
