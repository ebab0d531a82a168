"""Compressed-weight linear algebra in the Kronecker-CP format.

A weight tensor whose modes factor as input x output pairs is stored as K
branches of per-mode CP factor matrices.  The package provides the dense
reconstruction oracles, four input-times-weight multiplication routes with
exact operation counting, closed-form complexity comparisons against other
tensor formats, an LSTM cell built on the compressed weights, and the
``kcp-bench`` command-line driver.
"""

from .complexity import (
    ComplexityReport,
    FormatSpec,
    benchmark_rows,
    bt_rank_parity,
    compression_ratio,
    figure4_curves,
    kcp_param_count,
    table1_flops,
    table1_space,
)
from .lstm import (
    GATE_ORDER,
    LSTMCellWeights,
    LSTMState,
    cell_kcp_scalar_count,
    forward_sequence,
    lstm_step,
    make_cell_weights,
    make_shared_weights,
    train_toy,
)
from .multiply import (
    IntermediateSizeError,
    MultiplyResult,
    count_flops_relaxed,
    count_flops_strict,
    multiply_backward,
    multiply_dense_oracle,
    multiply_naive,
    multiply_parallel,
    multiply_relaxed,
    multiply_strict,
    strict_multiply_bound,
)
from .weights import (
    KCPConfig,
    KCPWeight,
    KTWeight,
    WeightFormatError,
    assemble_factor,
    deserialize,
    kcp_to_kt,
    kt_rank_lower_bound,
    kt_to_kcp,
    load,
    matricize_rank_k,
    random_init,
    reconstruct_dense,
    reconstruct_kt_dense,
    save,
    serialize,
)

__version__ = "0.1.0"
