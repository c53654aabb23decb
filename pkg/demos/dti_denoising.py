# %% [markdown]
# # Diffusion tensor denoising
#
# Diffusion-weighted signals follow the Stejskal-Tanner model
# `s_j = s0 exp(<b_j, v b_j>)` for a symmetric (negative-definite) tensor
# field `v`.  We simulate noisy signals for 12 gradient directions on a
# synthetic 32x32x4 volume and compare the voxelwise log-linear fit with the
# TGV²-regularised non-linear fit.

# %%
from nlsaddle.cli import RunConfig, dti_experiment

cfg = RunConfig(max_iters=1500)
res, problem, v_true, scores = dti_experiment(cfg)
print(f"{res.status} after {res.iters} iterations in {res.wall_s:.1f} s")
print(f"log-linear fit PSNR {scores['psnr_input']:.2f} dB -> TGV² fit {scores['psnr']:.2f} dB")

# %% [markdown]
# Eigenvalues of the reconstruction should stay negative (the model's
# exponent is a decay).

# %%
import numpy as np

ev = np.linalg.eigvalsh(res.x["v"].to_matrix())
print("eigenvalue range:", ev.min().round(3), ev.max().round(3))
