"""Train the full pipeline on synthetic pairs and watch the held-out error.

A short run (default 60 iterations) shows the machinery end to end: the loss
drops and the held-out endpoint error starts falling within a few dozen
steps. Full convergence to sub-pixel error takes on the order of a thousand
iterations; pass a larger count for that.

Run: python3 demos/03_train_toy.py [iters] [out_dir]
"""

import sys

from diclflow.training import RunConfig, train

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 60
out_dir = sys.argv[2] if len(sys.argv) > 2 else "demo_run"

config = RunConfig(seed=0, head="dicl", iters=iters, eval_every=20,
                   batch_size=2, pool_size=64, heldout_size=4,
                   out_dir=out_dir)
print("training %d iterations of the '%s' head (dap=%s, context=%s)"
      % (config.iters, config.head, config.dap, config.context))
result = train(config, log=print)
if result["diverged"]:
    print("diverged:", result["diverged"])
else:
    print("best held-out EPE: %.3f px" % result["best_epe"])
    print("loss curve: %s" % result["curve"])
    print("checkpoints: %s / %s" % (result["best_checkpoint"],
                                    result["final_checkpoint"]))
