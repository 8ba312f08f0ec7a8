"""Train the U-Net on labelled DG solutions and evaluate on held-out inputs.

A small run: 30 random source functions at N=8, 40 epochs.  The trained
network is saved to a checkpoint, loaded back, and the reloaded copy is
checked to reproduce the same predictions bit for bit.
"""

import os
import tempfile

import numpy as np

import dgnet.dg as dg
import dgnet.io as io
import dgnet.nn as nn
import dgnet.train as train
from dgnet.mesh import build_mesh

n = 8

train_ds = io.generate_dataset(n, 30, "train", epsilon=-1, sigma=1.0, seed=1)
test_ds = io.generate_dataset(n, 8, "test", epsilon=-1, sigma=1.0, seed=2)

cfg = train.SupervisedConfig(epochs=40, seed=0)
net, history = train.train_supervised(train_ds, cfg,
                                      nn.UNetConfig(input_side=2 * n))
print(f"epoch loss: first {history[0]:.4e}, last {history[-1]:.4e}")

ops = dg.assemble(build_mesh(n), dg.DgConfig(-1, 1.0, n), np.zeros(n * n))
table = train.evaluate(net, test_ds, ops)
print(f"{len(test_ds)} held-out functions:")
for field in table.fields:
    mean, std, median = table.aggregate(field)
    print(f"  {field:<12} median {median:.4e}   mean {mean:.4e}")

path = os.path.join(tempfile.mkdtemp(), "model.dgcn")
io.save_checkpoint(path, net)
reloaded = io.load_checkpoint(path)
sample = test_ds.samples[0]
same = np.array_equal(train.predict(net, sample.pi_f_image),
                      train.predict(reloaded, sample.pi_f_image))
print(f"checkpoint round trip reproduces predictions: {same}")
