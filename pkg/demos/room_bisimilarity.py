"""k-balls and dynamics bisimilarity in the five-rooms world.

Run: python3 demos/room_bisimilarity.py
"""

import numpy as np

from carl_lab.envs import make_rooms, to_tabular
from carl_lab.mdp import build_k_ball_mdp, check_dynamics_bisimilar, compute_k_ball

env = make_rooms(5, 5)
mdp = to_tabular(env)


def cell_id(cell):
    return int(env.cell_id[cell[1], cell[0]])


centre = np.array(env.room_origin(0)) + 2
ball = compute_k_ball(mdp, cell_id(centre), 2)
marks = {tuple(env.cells[s]): "o" for s in ball}
marks[tuple(centre)] = "@"
print("2-ball around the centre of room 0:")
print(env.render(marks))

ref = build_k_ball_mdp(mdp, cell_id(centre), 2)
for room in range(1, env.num_rooms):
    other = env.translate(centre[None], 0, room)[0]
    ok, _ = check_dynamics_bisimilar(ref, build_k_ball_mdp(mdp, cell_id(other), 2))
    print(f"centre of room 0 ~ centre of room {room}: {ok}")

corner = np.array(env.room_origin(3))
ok, _ = check_dynamics_bisimilar(ref, build_k_ball_mdp(mdp, cell_id(corner), 2))
print(f"centre of room 0 ~ corner of room 3: {ok}")
