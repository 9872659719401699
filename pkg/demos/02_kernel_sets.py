"""Print the kernel sizes, dilations and channel counts of the feature learner."""

from itsc import MsflSpec, kernel_set

for N, K in ((2, 6), (3, 2), (1, 4)):
    print(f"N={N} layers, K={K} scales")
    for i in range(1, N + 1):
        print(f"  layer {i}: kernels {kernel_set(i, K, N)}")

spec = MsflSpec(input_channels=1, num_classes=3)
print("\ndefault network on univariate input:")
for i in range(1, spec.num_layers + 1):
    print(f"  layer {i}: in={spec.layer_in_channels(i):>3} dilation={spec.layer_dilation(i)} "
          f"branches={len(spec.layer_kernels(i))} x {spec.branch_channels} channels")
print(f"  pooled feature dimension: {spec.feature_dim}")
