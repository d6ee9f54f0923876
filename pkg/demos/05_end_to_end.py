"""The whole pipeline at toy scale: meta-train, search, retrain, report.

Full desk-scale settings (10k samples, 64 meta-epochs, 20x50 search) take
tens of minutes on a small CPU; this demo shrinks every phase so the whole
thing finishes in a few minutes while exercising every stage: the
hypernetwork learns to dress random slices, the search ranks slices by
reward, and the winner retrains from scratch.

Artifacts land in ./demo_run/ and are resumable: run the script twice and
the completed phases load from disk.
"""

import json

from metaprune import PhaseEpochs, builtin_template, ingest, run_all

template = builtin_template("mininet")
dataset = ingest(None, "synthetic", n_train=2500, n_val=500, noise=3.0, seed=7)
print(f"dataset: {len(dataset.train_images)} train / {len(dataset.val_images)} val, "
      f"{dataset.classes} classes")

report = run_all(
    template,
    dataset,
    "demo_run",
    epochs=PhaseEpochs(max_training=12, max_iter=6, max_tuning=12),
    seed=42,
)

print("\nrun report")
print(json.dumps(report.to_dict(), indent=1))
print(f"\nwinner uses {report.flops / report.baseline_flops:.1%} of baseline FLOPs "
      f"and {report.param_ratio:.1f}% of baseline parameters "
      f"at {report.accuracy:.1%} validation accuracy")
print("artifacts in ./demo_run (hypernet.ckpt, best_gene.json, model.ckpt, report.json)")
