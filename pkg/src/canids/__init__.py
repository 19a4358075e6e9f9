"""CAN-bus intrusion detection: convolutional autoencoder over CAN-ID blocks.

Train on benign traffic only, flag frames whose reconstruction disagrees
with the input beyond a calibrated hamming-distance threshold.  Includes
an int8 integer inference path and a streaming replay harness.
"""

from .blocks import BLOCK_SIZE, MessageBlock, blocks_to_batch, build_blocks
from .datasets import AttackKind, Dataset, DatasetSource, SplitSpec, TrafficProfile
from .errors import CanIdsError
from .frames import CanFrame, Label, LogSchema, SCHEMAS

__version__ = "0.1.0"

__all__ = [
    "AttackKind",
    "BLOCK_SIZE",
    "CanFrame",
    "CanIdsError",
    "Dataset",
    "DatasetSource",
    "Label",
    "LogSchema",
    "MessageBlock",
    "SCHEMAS",
    "SplitSpec",
    "TrafficProfile",
    "__version__",
    "blocks_to_batch",
    "build_blocks",
]
