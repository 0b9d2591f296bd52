"""Time the compiled and pure-numpy kernel paths side by side.

Each backend runs in its own subprocess because the choice is made once at
import time from ADVAM_NO_NUMBA.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit


def _cases():
    import numpy as np

    from advam import _accel, data, models, trainer
    from advam.config import ModelConfig, TrainConfig

    rng = np.random.default_rng(0)
    # first encoder layer of the desk model on a 32-frame batch
    x = np.pad(rng.normal(size=(32, 16, 32, 15)), ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho, wo = 16, 15
    cols = rng.normal(size=(16 * 9, 32 * ho * wo))
    theta, grad = rng.normal(size=200_000), rng.normal(size=200_000)
    m, v = np.zeros_like(theta), np.zeros_like(theta)

    nets = models.build_networks(rng, ModelConfig(base_channels=8), 32, 15, 10)
    opt = trainer.OptimizerStates.fresh(nets)
    batch = data.Batch(rng.normal(size=(32, 1, 32, 15)), rng.integers(0, 10, 32),
                       rng.normal(size=(32, 1, 32, 15)), None, None)
    tc = TrainConfig()
    drop = np.random.default_rng(1)

    return {
        "im2col": lambda: _accel.im2col(x, 3, 3, 2, 1, ho, wo),
        "col2im": lambda: _accel.col2im(cols, 32, 16, 34, 17, 3, 3, 2, 1, ho, wo),
        "adam_update": lambda: _accel.adam_update(theta, grad, m, v, 1e-4, 0.9, 0.999, 1e-8, 0.1, 0.001),
        "da_minibatch": lambda: trainer.train_minibatch(nets, opt, batch, tc, drop),
    }


def _child(repeat):
    from advam import BACKEND

    out = {"backend": BACKEND}
    for name, fn in _cases().items():
        fn()  # warm-up, includes any compilation
        number = 3 if name == "da_minibatch" else 20
        best = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
        out[name] = best * 1e3
    print(json.dumps(out))


def _run(disable, repeat):
    env = dict(os.environ)
    env.pop("ADVAM_NO_NUMBA", None)
    if disable:
        env["ADVAM_NO_NUMBA"] = "1"
    proc = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(repeat)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        _child(args.repeat)
        return
    fast, slow = _run(False, args.repeat), _run(True, args.repeat)
    print(f"{'kernel':<14}{fast['backend'] + ' ms':>12}{slow['backend'] + ' ms':>12}{'speedup':>10}")
    for name in ("im2col", "col2im", "adam_update", "da_minibatch"):
        print(f"{name:<14}{fast[name]:>12.3f}{slow[name]:>12.3f}{slow[name] / fast[name]:>9.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"compiled": fast, "fallback": slow}, fh, indent=2)


if __name__ == "__main__":
    main()
