from .encoder import (ConvHead, Encoder, EncoderConfig, attention, conv_softmax_head,
                      encoder_forward, encoder_layer, init_layer, multi_head,
                      positional_encoding)
from .tensor import Tensor

__all__ = [
    "ConvHead", "Encoder", "EncoderConfig", "Tensor", "attention", "conv_softmax_head",
    "encoder_forward", "encoder_layer", "init_layer", "multi_head", "positional_encoding",
]
