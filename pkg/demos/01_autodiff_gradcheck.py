"""Tour of the autodiff core: build a graph, backpropagate, verify numerically.

Run: python3 demos/01_autodiff_gradcheck.py
"""

import numpy as np

from kuda import tensor as T
from kuda.gradcheck import run_all


def main():
    # A tiny regression: w, b fit y = 2x - 1 on four points.
    rng = np.random.default_rng(0)
    x = T.constant(rng.uniform(-1, 1, size=(4, 1)))
    y = T.constant(2.0 * x.data - 1.0)
    w = T.param(np.zeros((1, 1)), "w")
    b = T.param(np.zeros(1), "b")

    for step in range(200):
        pred = T.add(T.matmul(x, w), b)
        loss = T.mean(T.square(T.sub(pred, y)))
        w.zero_grad()
        b.zero_grad()
        loss.backward()
        w.data -= 0.5 * w.grad
        b.data -= 0.5 * b.grad
        if step % 50 == 0:
            print(f"step {step:3d}  loss {loss.item():.6f}  w {w.data[0, 0]:+.3f}  b {b.data[0]:+.3f}")
    print(f"fitted  w {w.data[0, 0]:+.4f} (want +2)  b {b.data[0]:+.4f} (want -1)\n")

    # Finite-difference verification of every operation plus the full
    # two-block fusion graph, exactly as the `kuda gradcheck` verb runs it.
    print("finite-difference checks (rel err vs central differences):")
    for r in run_all():
        status = "pass" if r["passed"] else "FAIL"
        print(f"  {r['op']:<28} {status}  rel_err={r['rel_err']:.2e}")


if __name__ == "__main__":
    main()
