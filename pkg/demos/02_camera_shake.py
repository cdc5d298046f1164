"""Why the background is re-aligned every frame.

With a shaking camera the running background drifts against each new frame
and the mismatch leaks into the rain and object layers.  Running the same
clip with alignment frozen at the identity shows how much the affine update
buys.

Run:  python3 demos/02_camera_shake.py  (about 50 s)
"""

import warnings

import numpy as np

from streamderain import Derainer, EngineConfig, make_sequence, psnr

warnings.simplefilter("ignore")

seq = make_sequence(20, (48, 64), jitter=1.5)
print(f"largest shift this clip: {max(max(abs(a), abs(b)) for a, b in seq.shifts):.2f} px")

for frozen in (False, True):
    res = Derainer(EngineConfig(), freeze_alignment=frozen).run(seq.rainy)
    score = np.mean([psnr(r.recovered, c) for r, c in zip(res, seq.clean)])
    label = "frozen " if frozen else "aligned"
    print(f"{label}: mean PSNR {score:.2f} dB")
