"""Spiking inference accelerator simulator and conversion toolkit."""

from .config import MemoryMap, SiaConfig, peak_throughput
from .convert import (
    AnnLayerParams,
    BatchNormStats,
    ConversionError,
    QuantizedLayer,
    ThresholdUnderflowError,
    assign_threshold,
    convert_network,
    fold_batchnorm,
    quantize_weights,
    to_fixed_point,
)
from .engine import (
    DimensionError,
    LayerStats,
    RunReport,
    aggregate,
    run_layer,
    run_network,
)
from .frames import SpikeFrame
from .memory import (
    CapacityError,
    PingPongBank,
    ProtocolViolation,
    load_layer_weights,
    pingpong_tick,
)
from .neurons import (
    NeuronMode,
    OracleSaturationError,
    QuantActParams,
    heaviside_spike,
    if_step,
    lif_step,
    quantized_relu,
    sat16,
    spike_count_oracle,
)
from .pe import PeState, cycles_per_window, pe_convolve_window, pe_row_accumulate

__version__ = "0.1.0"
