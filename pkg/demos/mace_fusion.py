"""Fusing 2-D smoothers into a 3-D prior with MACE.

A noisy 32^3 volume is reconstructed by consensus between a data agent and
Gaussian smoothers that act slice by slice along chosen axes. Smoothing
along two axes beats smoothing along one: the missing direction keeps its
noise.

    python3 demos/mace_fusion.py
"""

from pnpkit.experiment import load_demo, run_experiment

base = load_demo("fusion3d")
for axes in ([0], [0, 1], [0, 1, 2]):
    cfg = dict(base, problem=dict(base["problem"], axes=axes), write_images=False,
               output_dir=f"pnpkit_out/fusion_axes_{''.join(map(str, axes))}")
    m = run_experiment(cfg)["metrics"]
    print(f"axes {str(axes):10s} agents {len(axes) + 1}: {m['psnr']:6.2f} dB after "
          f"{m['iterations']} iters, consensus {m['equilibrium']['consensus_residual']:.1e}")
