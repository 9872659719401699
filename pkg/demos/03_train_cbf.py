"""Train the full model on synthetic CBF with 20% of values missing.

Writes the data under ./demo_data and reports test metrics. Takes about
fifteen seconds at the default 100 epochs.
"""

import sys

import numpy as np

from itsc import Arch, ItscModel, LossWeights, apply_mcar, evaluate, load_ucr, train, znormalize
from itsc.synthetic import write_dataset

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 100

bundle = znormalize(apply_mcar(load_ucr(write_dataset("demo_data", "CBF")), ratio=0.2, seed=0))
print(f"{bundle.name}: {len(bundle.train)} train / {len(bundle.test)} test, length {bundle.length}, "
      f"{bundle.train.missing_fraction():.1%} missing")

model = ItscModel(Arch(input_size=bundle.dims, num_classes=bundle.num_classes), seed=0)
history = train(model, bundle.train, LossWeights(alpha=1.0, beta=1.0), epochs=epochs, batch_size=16)
for rec in history[:: max(1, epochs // 10)]:
    print(f"epoch {rec.epoch:>3}  l_imp {rec.l_imp:.4f}  l_cls {rec.l_cls:.4f}  train acc {rec.train_acc:.3f}")

print()
print(evaluate(model, bundle.test).table())
