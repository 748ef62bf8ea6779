#!/usr/bin/env python3
"""Post-training gate for a candidate spiral checkpoint: held-out MSE and
the radial-monotonicity rate, printed for the two acceptance thresholds."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from odecast.checkpoint import load_checkpoint  # noqa: E402
from odecast.model import decode_build, evolve_batch, params_to_tensors  # noqa: E402
from odecast.series import load_collection_jsonl  # noqa: E402
from odecast.tensor import Tape  # noqa: E402
from odecast.training import evaluate, posterior_batch  # noqa: E402


def radial_pass_rate(params, test, fraction=0.6, lo=0.65, hi=1.0, knots=8) -> float:
    from odecast.data import SPIRAL_RADIAL_SPEED

    extrap = np.linspace(lo, hi, knots)
    stats = params.norm_stats
    min_slope = 0.2 * SPIRAL_RADIAL_SPEED
    means, _ = posterior_batch(test, params, fraction)
    states = evolve_batch(means, np.zeros((len(test), params.arch.noise_dim)), extrap, params)
    tape = Tape()
    pt = params_to_tensors(tape, params)
    decoded = decode_build(tape, pt, tape.constant(states.reshape(-1, params.arch.latent_dim))) \
        .data.reshape(extrap.size, len(test), 2)
    passes = 0
    for i, series in enumerate(test):
        raw = decoded[:, i, :] * stats.std + stats.mean
        radii = np.linalg.norm(raw, axis=1)
        slope = float(np.polyfit(extrap, radii, 1)[0])
        passes += bool(slope >= min_slope if series.label == 0 else slope <= -min_slope)
    return passes / len(test)


def main() -> int:
    ckpt = sys.argv[1] if len(sys.argv) > 1 else str(ROOT / "artifacts" / "spiral.ckpt")
    data = sys.argv[2] if len(sys.argv) > 2 else "/tmp/data_spiral3/spiral_test.jsonl"
    params = load_checkpoint(ckpt)
    test = load_collection_jsonl(data)
    metrics = evaluate(params, test, fractions=(1.0,))
    mse = metrics["recon_mse"]["1"]
    rate = radial_pass_rate(params, test)
    print(f"held-out recon MSE (fraction 1.0): {mse:.4f}  (criterion <= 0.05)")
    print(f"radial monotonicity pass rate:     {rate:.2f}  (criterion >= 0.90)")
    return 0 if mse <= 0.05 and rate >= 0.9 else 1


if __name__ == "__main__":
    sys.exit(main())
