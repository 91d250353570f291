"""Phantom motion and the dual-density spiral acquisition.

Run with ``python demos/01_phantom_and_trajectory.py [outdir]``. Writes a few
PGM frames, the temporal profile through the heart and a k-space scatter
plot, and prints what each of them shows.
"""
# %% setup
import os
import sys

import numpy as np
from scipy.spatial import cKDTree

from spiralstorm.cli import scatter_image, write_pgm
from spiralstorm.phantom import PhantomSpec, generate_phantom, phase_distance
from spiralstorm.trajectory import make_acquisition

out = sys.argv[1] if len(sys.argv) > 1 else "demo_output/01"
os.makedirs(out, exist_ok=True)

# %% the phantom
# 200 frames of a 64x64 chest: the heart contracts with a period of about
# 20 frames (with a little beat-to-beat jitter) and the whole heart moves
# vertically with a 75-frame breathing cycle.
spec = PhantomSpec()
gt = generate_phantom(spec)
print(f"{gt.n_frames} frames of {spec.grid_size}x{spec.grid_size}")
print("cardiac phase, first 6 frames:", np.round(gt.cardiac_phase[:6], 3))
print("respiratory phase, first 6 frames:", np.round(gt.respiratory_phase[:6], 3))

for i in (0, 5, 10, 40):
    img = np.abs(gt.frames[i])
    write_pgm(os.path.join(out, f"truth_{i:03d}.pgm"), np.round(255 * img / img.max()))

# Frames far apart in time can be close in motion state. That is the
# structure the manifold Laplacian is meant to find.
d = [phase_distance(gt, 0, j) for j in range(gt.n_frames)]
near = np.argsort(d)[1:6]
print("frames closest to frame 0 in (cardiac, respiratory) phase:", near)

# %% temporal profile
# A vertical cut through the left ventricle. Its DFT over frames peaks at
# the cardiac and breathing frequencies.
col = 35
profile = np.abs(gt.frames[:, :, col])
spec_power = (np.abs(np.fft.rfft(profile - profile.mean(0), axis=0)) ** 2).sum(1)
peaks = np.argsort(spec_power)[::-1][:2]
print(f"profile peaks at DFT bins {sorted(int(k) for k in peaks)}; expected about "
      f"{gt.n_frames / spec.respiratory_period_frames:.1f} and "
      f"{gt.n_frames / spec.cardiac_period_frames:.1f}")
write_pgm(os.path.join(out, "profile.pgm"),
          np.round(255 * profile.T / profile.max()))

# %% the acquisition
# 1000 golden-angle interleaves binned five per frame. The spiral is dense
# inside |k| <= 0.1 and sparse outside, so each frame's centre is close to
# Nyquist while the outer k-space is heavily undersampled.
acq = make_acquisition()
print(f"{len(acq.interleaves)} interleaves -> {acq.n_frames} frames of "
      f"{len(acq.frames[0])} spirals, {acq.samples_per_readout} samples each")
g = np.linspace(-0.1, 0.1, 81)
probes = np.array([(x, y) for x in g for y in g if np.hypot(x, y) <= 0.1])
gap = cKDTree(acq.frame_coordinates(0)).query(probes)[0].max()
print(f"largest nearest-neighbour gap in the central disk of frame 0: "
      f"{gap * spec.grid_size:.2f} / grid_size")
write_pgm(os.path.join(out, "kspace_frame0.pgm"), scatter_image(acq, [0]))
print(f"images written to {out}")
