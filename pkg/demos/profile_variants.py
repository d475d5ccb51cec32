"""
Parameter and FLOP accounting across the configuration grid
===========================================================

The profiler walks the architecture analytically, so sweeping every
variant costs milliseconds. Compute is reported as multiply-accumulates
times two, for a 512x512 input unless stated otherwise.
"""

from weedmtl.model import ModelConfig, parse_kernel_config
from weedmtl.profile import profile

# Size variants share the kernel config and differ in channel widths.
print(f"{'variant':<10} {'params':>12} {'gflops @512':>12}")
for size in ("small", "medium", "large"):
    rep = profile(ModelConfig(size=size))
    print(f"{size:<10} {rep.total_params:>12,} {rep.total_flops/1e9:>12.2f}")

# The kernel triple names the depthwise convolutions inside each
# inverted-bottleneck block; 0 skips that position entirely.
print()
print(f"{'kernels':<10} {'params':>12} {'gflops @512':>12}")
for kernel in ("s0m3e0", "s1m3e0", "s0m3e1", "s1m3e1",
               "s5m3e0", "s0m3e5", "s5m3e5"):
    ks, km, ke = parse_kernel_config(kernel)
    rep = profile(ModelConfig(kernel_start=ks, kernel_mid=km, kernel_end=ke))
    print(f"{kernel:<10} {rep.total_params:>12,} {rep.total_flops/1e9:>12.2f}")

# Squeeze-excitation adds about a million parameters but costs almost
# nothing at inference: it works on globally pooled 1x1 maps.
with_se = profile(ModelConfig())
without = profile(ModelConfig(use_se=False))
print()
print(f"SE params  +{with_se.total_params - without.total_params:,}")
print(f"SE gflops  +{(with_se.total_flops - without.total_flops)/1e9:.4f}")

# Auxiliary segmentation heads exist only during training, so they show
# up in the parameter table and never in the compute table.
rep = profile(ModelConfig())
print()
print("per-module breakdown:")
for name, params in rep.params_by_module.items():
    flops = rep.to_dict()["flops_by_module"].get(name, 0)
    print(f"  {name:<16} {params:>12,} params {flops/1e9:>8.2f} gflops")

# One multitask network against the sum of three single-task ones.
multi = profile(ModelConfig()).total_params
singles = sum(profile(ModelConfig(tasks=(t,))).total_params
              for t in ("seg", "height", "week"))
print()
print(f"multitask {multi/1e6:.2f}M vs single-task sum {singles/1e6:.2f}M "
      f"({1 - multi/singles:.0%} smaller)")
