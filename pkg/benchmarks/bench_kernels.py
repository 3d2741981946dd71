"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Shapes follow the default VAE layers (batch 32) and a filtfilt pass over a
training split (1000 beats, order-5 bandpass).
"""

import argparse
import timeit

import numpy as np

from mapdenoise import _core, irfilter


def cases(r):
    out = []
    for cin, cout, length, stride in ((1, 16, 370, 2), (32, 32, 185, 1), (64, 128, 93, 2)):
        x, w = r.normal(size=(32, cin, length)), r.normal(size=(cout, cin, 5))
        gy = r.normal(size=(32, cout, (length + 4 - 5) // stride + 1))
        tag = f"{cin}->{cout} L={length} s={stride}"
        out.append((f"conv fwd   {tag}", lambda k, x=x, w=w, s=stride: k.conv1d_forward(x, w, s, 2)))
        out.append((f"conv bwd x {tag}",
                    lambda k, gy=gy, w=w, s=stride, n=length: k.conv1d_backward_input(gy, w, s, 2, n)))
        out.append((f"conv bwd w {tag}", lambda k, x=x, gy=gy, s=stride: k.conv1d_backward_weight(x, gy, s, 2, 5)))
    sos = irfilter.design_butterworth(5, irfilter.BASELINE_BAND_HZ, "bandpass").sos
    rows = r.normal(size=(1000, 370))
    out.append(("sosfilt   1000x370 bandpass",
                lambda k: k.sosfilt(sos, rows, np.zeros((rows.shape[0], sos.shape[0], 2)))))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    names = sorted(_core.BACKENDS)
    print(f"{'kernel':36s}" + "".join(f"{n:>12s}" for n in names) + ("   speedup" if len(names) > 1 else ""))
    for label, fn in cases(np.random.default_rng(0)):
        best = {}
        for n in names:
            k = _core.BACKENDS[n]
            fn(k)
            best[n] = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
        line = f"{label:36s}" + "".join(f"{best[n] * 1e3:10.2f}ms" for n in names)
        if "cython" in best:
            line += f"   {best['numpy'] / best['cython']:6.2f}x"
        print(line)


if __name__ == "__main__":
    main()
