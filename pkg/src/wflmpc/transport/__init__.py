"""Framing plus the simulated and TCP channel backends."""

from .base import AGGREGATOR, DEALER, SERVERS, Channel, Selector, Tap
from .frame import Frame, MsgType, decode_frame, encode_frame
from .sim import SimNetwork

__all__ = ["AGGREGATOR", "DEALER", "SERVERS", "Channel", "Frame", "MsgType", "Selector", "SimNetwork",
           "Tap", "decode_frame", "encode_frame"]
