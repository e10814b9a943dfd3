"""Spatially coupled turbo-like codes on the binary erasure channel.

Library + CLI covering exact density evolution, BP-threshold and
repetition-ratio optimization, potential-function / area-theorem MAP
thresholds, and finite-length Monte Carlo simulation.
"""

from .trellis import (
    GEN_2STATE,
    GEN_4STATE,
    GEN_8STATE,
    GENERATORS_BY_STATES,
    GeneratorSpec,
    Trellis,
    build_trellis,
    encode,
    parse_generator,
)
from .bcjr import ERASED, ExtrinsicBlock, InconsistentObservations, ObservedBlock, aposteriori, decode_block
from .transfer import (
    MCEstimate,
    SubsetChain,
    TransferFn,
    eval_fp,
    eval_fs,
    forward_chain,
    mc_estimate,
    transfer_for,
)

__version__ = "0.1.0"
