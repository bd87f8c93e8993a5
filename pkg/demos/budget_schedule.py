# cubic budget decay and top-k triplet allocation
import numpy as np

from snrlora.budget import BudgetSchedule, allocate, budget_at
from snrlora.importance import TripletScore
from snrlora.numerics import Rng

s = BudgetSchedule(b_init=108, b_target=72, t_warmup=100, t_final=200, t_total=1000)
for t in (0, 100, 200, 450, 700, 800, 1000):
    print(t, budget_at(s, t))

# 3 layers x 4 triplets with random scores, keep the best 5
scores = Rng(3).uniform(12)
triplets = [TripletScore(k // 4, k % 4, float(v)) for k, v in enumerate(scores)]
d = allocate(triplets, 5)
print("kept", sorted(d.kept))
print("per layer", np.bincount([l for l, _ in d.kept], minlength=3))
