# DCT Attention - compressed self-attention kernels and benchmarks
