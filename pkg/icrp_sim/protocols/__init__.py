"""Protocol layers: CSMA-Aloha MAC and the ICRP router."""

from .base import BaseLayer

__all__ = ["BaseLayer"]
