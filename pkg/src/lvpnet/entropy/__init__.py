from .bitstream import BitStream
from .freq import FREQ_BITS, FREQ_TOTAL, attach_frequencies, quantize_probs
from .huffman import HuffmanTable, huffman_build, huffman_decode, huffman_encode
from .rangecoder import RangeDecoder, RangeEncoder, arith_decode, arith_encode

__all__ = [
    "BitStream", "FREQ_BITS", "FREQ_TOTAL", "attach_frequencies", "quantize_probs",
    "HuffmanTable", "huffman_build", "huffman_encode", "huffman_decode",
    "RangeEncoder", "RangeDecoder", "arith_encode", "arith_decode",
]
