# %% [markdown]
# # Cora: federated structure learning against its baselines
#
# One seed of every method on Cora split over ten clients at random, then a
# short label-ratio sweep. Expect a few minutes on one core. Needs
# ``data/cora`` (see the README for rebuilding the datasets).

# %%
import time

from fedstruct.xp import make_config, run_single

DATA = "data/cora"
runs = [
    ("central DGCN", dict(method="central-dgcn")),
    ("FedStruct (Hop2Vec)", dict(nsf="hop2vec")),
    ("FedStruct (Fed*)", dict(nsf="fedstar")),
    ("FedStruct (Deg)", dict(nsf="deg")),
    ("FedSGD MLP", dict(method="fedsgd-mlp")),
    ("local DGCN", dict(method="local-dgcn")),
]
for label, kw in runs:
    t = time.perf_counter()
    rep = run_single(make_config(dataset=DATA, clients=10, **kw), seed=0)
    print(f"{label:<22} test acc {100 * rep.best_val_test_acc:6.2f}  (best epoch {rep.best_epoch:>2}, "
          f"{time.perf_counter() - t:5.1f}s)")

# %% [markdown]
# The structure path carries most of the accuracy once clients have few
# labels; the local baseline, which loses every cross-client edge, does not.

# %%
for ratio in (0.05, 0.2, 0.5):
    row = []
    for kw in (dict(nsf="hop2vec"), dict(method="local-dgcn")):
        rep = run_single(make_config(dataset=DATA, clients=10, train_ratio=ratio, **kw), seed=0)
        row.append(100 * rep.best_val_test_acc)
    print(f"train ratio {ratio:4.2f}: hop2vec {row[0]:6.2f}  local {row[1]:6.2f}")

# %% [markdown]
# Communication: the offline phase dominates; per-epoch traffic is the model
# size per client plus, for Hop2Vec, the NSF matrix.

# %%
rep = run_single(make_config(dataset=DATA, clients=10, nsf="hop2vec", epochs=1), seed=0)
print(rep.comm.to_json())
