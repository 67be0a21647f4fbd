"""HTTP service around the inference engine. Importing this package does not import FastAPI."""
from .engine import Engine
from .schemas import (MaskOut, PromptIn, SegAnyRequest, SegAnyResponse, SegEveryRequest,
                      SegEveryResponse)

__all__ = ["Engine", "MaskOut", "PromptIn", "SegAnyRequest", "SegAnyResponse", "SegEveryRequest",
           "SegEveryResponse"]
