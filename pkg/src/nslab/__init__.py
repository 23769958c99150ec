"""nslab: generate smooth synthetic videos, train small convolutional
autoencoders, detect the nonsmoothness they introduce, and fit statistical
channel models that predict how nonsmoothness events propagate through
conv, ReLU, max-pool, and transpose-conv blocks."""

__version__ = "0.1.0"
