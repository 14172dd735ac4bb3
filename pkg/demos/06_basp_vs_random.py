"""Paired-seed comparison of placements on skewed synthetic meshes."""
# %%
from meshchain.experiment import compare_placements, parse_config

hlf = parse_config("""
[experiment]
pipeline = hlf
seed = 1
[topology]
file =
synth_nodes = 85
[workload]
mode = sequential
n = 100
""")
cmp = compare_placements(hlf, seeds=10)
for row in cmp.rows:
    print(row["seed"], f"basp {row['latency_a_ms']:.0f} ms", f"random {row['latency_b_ms']:.0f} ms",
          f"gain {row['gain_pct']:+.1f}%")
print(f"mean gain {cmp.mean_gain:.1f}%, BASP ahead in {cmp.win_rate:.0%} of seeds")
