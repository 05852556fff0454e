"""4x super-resolution with a TV denoiser as the PnP agent.

Runs the packaged ``superres4x`` demo: blur, decimate by 4, add noise with
sigma 0.02, then 12 PnP-ADMM iterations with penalty 0.034 and a 10-step CG
data update, started from the denoised pseudo-inverse. Images land in
``pnpkit_out/superres4x`` as RAWF64 and PGM.

    python3 demos/superres_listing.py
"""

from pnpkit.experiment import load_demo, run_experiment

manifest = run_experiment(load_demo("superres4x"), quiet=False)
m = manifest["metrics"]
print(f"pseudo-inverse        {m['psnr_pinv']:6.2f} dB")
print(f"denoised pseudo-inv.  {m['psnr_denoised_pinv']:6.2f} dB")
print(f"PnP-ADMM ({m['iterations']} iters)  {m['psnr']:6.2f} dB")
