"""protoconv - dynamic prototype convolution for few-shot segmentation"""

__version__ = "0.1.0"
