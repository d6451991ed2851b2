"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py            # per-kernel timings
    python3 benchmarks/bench_kernels.py --e2e      # plus a short EM run per backend

Shapes follow the desk profile: hidden width 128 (so 256-wide hidden
layers), batches of 256 rows, E-step blocks of 512 rows.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from diffem.ndcore import _numpy_kernels

try:
    from diffem.ndcore import _kernels as _compiled
except ImportError:
    _compiled = None


def cases(rng):
    act = rng.normal(size=(256, 256))
    _, sig = _numpy_kernels.silu_forward(act)
    grad_out = rng.normal(size=act.shape)
    p = rng.normal(size=(256, 256))
    g = rng.normal(size=p.shape)
    m = rng.normal(size=p.shape)
    v = np.abs(rng.normal(size=p.shape))
    blk = [rng.normal(size=(512, 16)) for _ in range(5)]
    mask = (rng.random((512, 16)) < 0.3).astype(np.float64)
    big = rng.normal(size=(256, 256))
    return {
        "silu_forward 256x256": lambda k: k.silu_forward(act),
        "silu_backward 256x256": lambda k: k.silu_backward(act, sig, grad_out),
        "adam_step 256x256": lambda k: k.adam_step(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001),
        "inpaint_update 512x16": lambda k: k.inpaint_update(*blk, mask, 2.0, 1.5),
        "all_finite 256x256": lambda k: k.all_finite(big),
    }


def bench_kernels(repeat):
    rows = []
    for name, fn in cases(np.random.default_rng(0)).items():
        row = {"kernel": name}
        for label, mod in (("numpy", _numpy_kernels), ("cython", _compiled)):
            if mod is None:
                row[label] = None
                continue
            number = 20
            best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=repeat)) / number
            row[label] = best * 1e6
        rows.append(row)
    return rows


E2E_SCRIPT = """
import json, time
from diffem.diffusion import SamplerConfig
from diffem.emloop import EmConfig, run_em
from diffem.evalkit import SyntheticSpec, synth_generate
from diffem.missingness import MaskSpec, generate_mask
from diffem.ndcore import kernels
from diffem.tabular import encode, numeric_matrix
ds, _ = synth_generate(SyntheticSpec(rows=1000, seed=0))
mask = generate_mask(numeric_matrix(ds), MaskSpec("MCAR", 0.3, seed=0))
enc = encode(ds.with_missing(mask))
cfg = EmConfig(K=1, epochs=10, lr=1e-3, hidden_dim=128, sampler=SamplerConfig(repeats=2))
t = time.perf_counter()
res = run_em(enc, cfg)
print(json.dumps({"backend": kernels.BACKEND, "seconds": time.perf_counter() - t,
                  "m_step_s": res.timings[0]["m_step_s"], "e_step_s": res.timings[0]["e_step_s"],
                  "digest": res.params.digest()}))
"""


def bench_e2e():
    out = []
    for pure in ("1", ""):
        env = dict(os.environ, DIFFEM_PURE_PYTHON=pure)
        if not pure:
            env.pop("DIFFEM_PURE_PYTHON")
        proc = subprocess.run([sys.executable, "-c", E2E_SCRIPT], env=env, capture_output=True, text=True, check=True)
        out.append(json.loads(proc.stdout))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--e2e", action="store_true", help="also time one short EM iteration per backend")
    args = ap.parse_args()

    if _compiled is None:
        print("compiled extension not built; only the numpy backend is timed")
    print(f"{'kernel':<26}{'numpy us':>12}{'cython us':>12}{'speedup':>10}")
    for row in bench_kernels(args.repeat):
        cy = row["cython"]
        speed = f"{row['numpy'] / cy:.2f}x" if cy else "n/a"
        cy_text = f"{cy:12.1f}" if cy else f"{'n/a':>12}"
        print(f"{row['kernel']:<26}{row['numpy']:12.1f}{cy_text}{speed:>10}")

    if args.e2e:
        print()
        results = bench_e2e()
        for r in results:
            print(f"EM K=1 (1000 rows, 10 epochs, N=2) backend={r['backend']:<7} total {r['seconds']:.2f}s "
                  f"(M-step {r['m_step_s']:.2f}s, E-step {r['e_step_s']:.2f}s)")
        if len({r["digest"] for r in results}) == 1:
            print("both backends produced identical parameters")
        else:
            print("backends differ in the last bits of the parameters (floating-point order)")


if __name__ == "__main__":
    main()
