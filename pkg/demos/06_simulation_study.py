"""
A small simulation study
========================

Replicates of a bivariate Matern field on a (16, 16) grid, scored with the
spectral-norm criterion: the periodic-imputation estimator at two expansion
factors against exact-likelihood maximum likelihood stopped after 300
evaluations.  Run ``mvspectra study`` for the full version.
"""

from mvspectra import StudyConfig, run_study

cfg = StudyConfig(p=2, grid=(16, 16), replicates=4, taus=(1.0, 1.25), bandwidths=(0.30,),
                  ml_checkpoints=(300,), seed=0)
res = run_study(cfg)
print(f"{'method':>9} {'tau':>5} {'ML evals':>8} {'q25':>7} {'median':>7} {'q75':>7} {'sec':>6}")
for row in res.summary():
    print(f"{row['method']:>9} {row['tau'] or '':>5} {row['checkpoint'] or '':>8} "
          f"{row['q25']:7.3f} {row['q50']:7.3f} {row['q75']:7.3f} {row['seconds']:6.1f}")
if res.failures:
    print("failures:", res.failures)
