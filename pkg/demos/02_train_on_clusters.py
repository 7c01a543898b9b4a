"""Train a linear hash encoder on Gaussian clusters and measure retrieval MAP.

A scaled-down version of the acceptance benchmark, so it runs in seconds.
"""

from tlhash import encoder as enc
from tlhash.datasets import make_synthetic
from tlhash.experiment import EncoderSpec, Split, evaluate_params, run_cycle
from tlhash.trainer import TrainConfig

print("Five clusters in R^16, means 6 sigma apart.")
data = make_synthetic(n_classes=5, dim=16, n_query=100, n_database=1000, n_train=500,
                      separation=6.0, seed=0)
split = Split.of(data)
print("features:", data.features.shape, " query/database/train:",
      len(split.query_idx), len(split.database_idx), len(split.train_idx))

spec = EncoderSpec("linear", code_length=8, init_seed=0)
before = evaluate_params(spec.init(16), data.features, data.store, split)
print("\nMAP with the untrained encoder:", round(before.map, 4))

# Each epoch samples fresh (query, positive, negative) triplets.
cfg = TrainConfig(triplets_per_epoch=20_000, batch_size=5_000, epochs=30, alpha=4.0, lam=100.0)
result = run_cycle(data.features, data.store, split, cfg, spec)
print("MAP after training:           ", round(result.evaluation.map, 4))

print("\nepoch   nll_mean   qerr_mean   lr")
for r in result.report.records[::5]:
    print(f"{r.epoch:5d}   {r.nll_mean:8.4f}   {r.qerr_mean:9.4f}   {r.lr:g}")

print("\nThe encoder is a plain value; save it and load it back.")
enc.save(result.params, "/tmp/demo_encoder.enc")
print("round trip equal:", enc.load("/tmp/demo_encoder.enc") == result.params)
