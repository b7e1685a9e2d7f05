# # Experiments from the command line
#
# The same runs are available through the `litdistill` command. This script
# writes small configs, trains a teacher and three students, sweeps beta and
# merges the run summaries into one table. Artifacts go to ./demo_runs.

import csv
import os

from litdistill.cli import main

out = os.path.abspath("demo_runs")
os.makedirs(out, exist_ok=True)

base = """\
dataset.train = 2000
dataset.val = 300
dataset.test = 1000
student.blocks = 1,1,1
student.channels = 8,16,32
teacher.blocks = 3,3,3
teacher.channels = 8,16,32
"""
student = "train.scale = 0.05\nteacher.checkpoint = teacher/model.litm\n"

# ## Teacher, then one run per procedure
#
# The teacher is an ordinary scratch run with the teacher's block counts;
# its checkpoint is shared by the distillation runs.

teacher_cfg = os.path.join(out, "teacher.cfg")
with open(teacher_cfg, "w") as fh:
    fh.write(base.replace("student.blocks = 1,1,1", "student.blocks = 3,3,3")
             + "train.variant = scratch\ntrain.scale = 0.075\ntrain.lr0 = 0.05\n")
print("teacher exit", main(["train", "--config", teacher_cfg, "--out", os.path.join(out, "teacher")]))

dirs = []
for variant in ("scratch", "kd", "lit"):
    path = os.path.join(out, f"{variant}.cfg")
    with open(path, "w") as fh:
        fh.write(base + student + f"train.variant = {variant}\n")
    run_dir = os.path.join(out, variant)
    print(variant, "exit", main(["train", "--config", path, "--out", run_dir]))
    dirs.append(run_dir)

# ## A beta sweep

sweep_cfg = os.path.join(out, "sweep.cfg")
with open(sweep_cfg, "w") as fh:
    fh.write(base + student + "train.variant = lit\nsweep.param = beta\nsweep.values = 0,0.5,1\nsweep.seeds = 0\n")
main(["sweep", "--config", sweep_cfg, "--out", os.path.join(out, "sweep")])
with open(os.path.join(out, "sweep", "sweep.csv")) as fh:
    for row in csv.DictReader(fh):
        print(f"beta {row['value']:4s} seed {row['seed']}: test {float(row['test']):.3f}")

# ## The comparison table

main(["compare", *dirs, "--out", os.path.join(out, "table")])
with open(os.path.join(out, "table", "table.csv")) as fh:
    print(fh.read())
