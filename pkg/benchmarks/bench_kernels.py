"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Times each kernel on encoder-sized inputs and one full training step of a
small model, once per available backend, and prints a table.
"""
import argparse
import timeit

import numpy as np

from mtdnn import _kernels
from mtdnn.data import make_synthetic, synthetic_spec_labels, synthetic_vocab
from mtdnn.encoder import EncoderConfig
from mtdnn.model import MTDNN, ModelConfig
from mtdnn.rng import stream
from mtdnn.tasks import TaskRegistry, TaskSpec
from mtdnn.trainer import TrainConfig, TrainerState, pack_epoch, train_step


def kernel_cases(rng):
    scores = rng.normal(size=(16 * 4 * 64, 64))
    hidden = rng.normal(size=(16 * 64, 128))
    gain, bias = rng.normal(size=128), rng.normal(size=128)
    flat = hidden.ravel()
    p = rng.normal(size=128 * 512)
    return {
        "softmax (4096x64)": lambda: _kernels.softmax_forward(scores),
        "log_softmax (4096x64)": lambda: _kernels.log_softmax_forward(scores),
        "layer_norm fwd (1024x128)": lambda: _kernels.layer_norm_forward(hidden, gain, bias, 1e-5),
        "gelu fwd (131072)": lambda: _kernels.gelu_forward(flat),
        "gelu bwd (131072)": lambda: _kernels.gelu_backward(flat, flat),
        "adamax (65536)": lambda: _kernels.adamax_update(
            p.copy(), p, np.zeros_like(p), np.zeros_like(p), 1e-3, 0.9, 0.999, 1e-8, 1),
    }


def train_step_case():
    vocab_size = 100
    spec = TaskSpec("single", "single", synthetic_spec_labels("single"))
    data = make_synthetic("single", 16, vocab_size, stream(0, "data"), "single")
    reg = TaskRegistry.build([(spec, data)], synthetic_vocab(vocab_size), 64)
    mc = ModelConfig(EncoderConfig(vocab_size, d=64, n_layers=2, n_heads=4, max_len=64), 5)
    model = MTDNN.create(mc, [spec], 0)
    cfg = TrainConfig(lr_peak=1e-3, batch_size=16, epochs=1, warmup_fraction=0.0)
    state = TrainerState.fresh(cfg)
    batch = pack_epoch(reg, 16, stream(0, "shuffle", 1)).batches[0]
    return lambda: train_step(batch, model, reg, state, cfg, 10**6, 1)


def best_of(fn, repeat):
    fn()  # warm-up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)

    backends = _kernels.available_backends()
    results = {}
    for backend in backends:
        _kernels.use_backend(backend)
        cases = kernel_cases(np.random.default_rng(0))
        cases["train step (d=64, 2 layers, batch 16)"] = train_step_case()
        for name, fn in cases.items():
            results.setdefault(name, {})[backend] = best_of(fn, args.repeat)

    width = max(map(len, results))
    header = f"{'case':<{width}}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, row in results.items():
        line = f"{name:<{width}}" + "".join(f"{row[b] * 1e3:>10.3f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{row['python'] / row['cython']:>9.2f}x"
        print(line)
    if "cython" not in backends:
        print("compiled backend not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
