"""Train on room 0 only, evaluate in every room: co-trained CARL against the raw-input baseline.

Run: python3 demos/room_transfer.py [steps]
Takes about a minute per method at the default 3000 steps on one core.
"""

import sys

from carl_lab.evalkit import ExperimentConfig, room_generalization

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
base = ExperimentConfig(env="rooms5", steps=steps, hrl={"state_input": False})
out = room_generalization(base, train_rooms=[0], test_rooms=[1, 2, 3, 4], seeds=[0])
for method, res in out.items():
    rep = res["reports"][0]
    rooms = ", ".join(f"{r}: {100 * p:.0f}%" for r, p in rep.room_success.items())
    print(f"{method:<9} held-out rooms solved {res['solved'][0]}/4  ({rooms})")
