"""gcnsim: software model of a lightweight sparse-GCN accelerator.

Submodules:
    matrix     exact fixed-point types and reference matrix kernels
    costmodel  analytic op/storage cost estimates
    pcoo       packet-level sparse compression codec
    schedule   row assignment, tiling, and collision stalling
    simulator  cycle-level unified PE array
    report     counter aggregation and formatting
    runtime    quantized GCN / GraphSAGE layer execution
    graphs     synthetic graph generators
    formats    on-disk stream and weight containers
"""

__version__ = "0.1.0"
