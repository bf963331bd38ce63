"""Benchmark the compiled kernels against the NumPy fallback.

Runs every kernel on training-realistic shapes under both backends and
then times a full forward+backward training step of a small model with
each backend active.

    python3 benchmarks/bench_kernels.py [--repeat 2000]
"""

import argparse
import time

import numpy as np

from more_lab import _kernels as K


def timeit(fn, args, repeat):
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best


def kernel_cases(rng):
    x96 = rng.normal(size=(96, 96))
    y96 = K.get_backend("python").softmax_fwd(x96)
    h = rng.normal(size=(96, 64))
    gamma, beta = np.ones(64), np.zeros(64)
    _, xhat, inv = K.get_backend("python").layernorm_fwd(h, gamma, beta, 1e-5)
    act = rng.normal(size=(96, 256))
    logits = rng.normal(size=(32, 22))
    targets = rng.integers(0, 22, size=32)
    p = rng.normal(size=50_000)
    g = rng.normal(size=50_000)
    img = rng.random((3, 96, 96))
    return [
        ("softmax_fwd 96x96", "softmax_fwd", (x96,)),
        ("softmax_bwd 96x96", "softmax_bwd", (y96, x96)),
        ("layernorm_fwd 96x64", "layernorm_fwd", (h, gamma, beta, 1e-5)),
        ("layernorm_bwd 96x64", "layernorm_bwd", (h, xhat, inv, gamma)),
        ("gelu_fwd 96x256", "gelu_fwd", (act,)),
        ("gelu_bwd 96x256", "gelu_bwd", (act, act)),
        ("xent_fwd 32x22", "softmax_xent_fwd", (logits, targets)),
        ("adamw 50k params", "adamw_update",
         (p.copy(), g, np.zeros(50_000), np.zeros(50_000), 1, 1e-3, 0.9,
          0.999, 1e-8, 0.01)),
        ("bilinear 96->64", "resize_bilinear", (img, 64, 64)),
        ("nearest 96->64", "resize_nearest", (img, 64, 64)),
    ]


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    backends = K.available_backends()
    print(f"{'kernel':<24}" + "".join(f"{b:>12}" for b in backends)
          + (f"{'speedup':>10}" if len(backends) > 1 else ""))
    for label, name, args in kernel_cases(rng):
        times = {}
        for b in backends:
            fn = getattr(K.get_backend(b), name)
            times[b] = timeit(fn, args, repeat)
        row = f"{label:<24}" + "".join(f"{1e6 * times[b]:>10.1f}us"
                                       for b in backends)
        if len(backends) > 1:
            row += f"{times['python'] / times['c']:>9.2f}x"
        print(row)


def bench_train_step():
    from more_lab.datagen import build_vocabulary
    from more_lab.model import ModelConfig, RelationModel
    from more_lab.purity import probe_instance
    from more_lab.optim import AdamWConfig, AdamWState, adamw_step
    from more_lab.tensor import Tape
    from more_lab import tensor as T
    from more_lab.training import instance_input

    vocab = build_vocabulary()
    cfg = ModelConfig.toy(vocab_size=len(vocab))
    inst = probe_instance(seed=0, image_size=cfg.crop_size)
    inp = instance_input(inst, vocab, cfg)
    targets = list(range(len(inp.pairs)))
    print(f"\ntrain step: toy model, {len(inp.pairs)} pairs/step")
    for backend in K.available_backends():
        K.use(backend)
        model = RelationModel(cfg, seed=0)
        state = AdamWState()
        opt = AdamWConfig(lr=1e-4)

        def step():
            with Tape() as tape:
                h_v0 = model.visual_base(inp)
                rows = [T.reshape(model.forward_pair(p, h_v0),
                                  [1, cfg.n_relations]) for p in inp.pairs]
                loss = T.cross_entropy(
                    T.concat(rows, axis=0),
                    [t % cfg.n_relations for t in targets])
                tape.backward(loss)
            grads = {n: p.grad for n, p in model.params.items()
                     if p.grad is not None}
            adamw_step(model.params, grads, state, opt)
            for p in model.params.values():
                p.zero_grad()

        best = timeit(lambda: step(), (), repeat=20)
        print(f"  {backend:<8} {1e3 * best:8.2f} ms/step")
    K.use("auto")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=2000)
    args = parser.parse_args()
    print(f"backends available: {', '.join(K.available_backends())}\n")
    bench_kernels(args.repeat)
    bench_train_step()
