# the planted task: which layers does each scorer give rank to?
# layer ranks of the hidden delta are (0, 1, 3, 0); the final budget is 4
import numpy as np

from snrlora.harness import planted_config, run_experiment, score_trace_report
from snrlora.importance import SCORER_NAMES

for name in SCORER_NAMES:
    runs = [run_experiment(planted_config(scorer=name), seed=s) for s in range(3)]
    ranks = [[r[2] for r in run.final_ranks] for run in runs]
    print(f"{name:12s}", ranks, "val RMSE", np.mean([r.best_val for r in runs]).round(4))

lora = [run_experiment(planted_config(method="lora", optimizer="adam"), seed=s) for s in range(3)]
print(f"{'lora r=1':12s}", "val RMSE", np.mean([r.best_val for r in lora]).round(4))

# sensitivity and snr_mean traced side by side on one run
run = run_experiment(planted_config(trace_scorers=("sensitivity", "snr_mean")), seed=0)
rho = [r["spearman"] for r in score_trace_report(run)]
print("spearman(sensitivity, snr_mean) first/last:", rho[0], rho[-1])
