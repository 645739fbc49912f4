"""The closed-form posterior, its oracles, and the classic shrinkage limits.

Three views of the same object: the production path (Cholesky solve), the
conditional-mean algebra, and a Monte Carlo least-squares fit. In the diagonal
case the denoising matrix collapses to the scalar reliability coefficient
var_z / (var_z + var_noise).
"""

import numpy as np

from reccbm import LatentHeadParams, mmse_oracle, mmse_oracle_monte_carlo, posterior

K = 3
rng = np.random.default_rng(0)
a = rng.normal(size=(K, K))
omega = a @ a.T + 0.5 * np.eye(K)
noise_vars = np.array([0.4, 1.0, 0.15])
s = np.array([0.3, 0.8, 0.5])

params = LatentHeadParams(
    chol=np.linalg.cholesky(omega - 1e-4 * np.eye(K)),
    log_var=np.log(noise_vars),
    task_w=np.zeros((2, K)),
    task_b=np.zeros(2),
)
res = posterior(s, params)
alg = mmse_oracle(params.omega(), noise_vars, s)
mc_pred, mc_fit = mmse_oracle_monte_carlo(params.omega(), noise_vars, s,
                                          n_samples=400_000, seed=1)

print("observation s~          ", np.round(s, 4))
print("posterior mean (solve)  ", np.round(res.mu_post, 6))
print("conditional-mean algebra", np.round(alg, 6))
print("Monte Carlo fit         ", np.round(mc_pred, 4))
print("max |solve - algebra|   ", float(np.max(np.abs(res.mu_post - alg))))

print("\ndenoising matrix A (noisier coordinates shrink harder):")
for row in res.denoise:
    print("   " + "  ".join(f"{v:+.3f}" for v in row))

print("\ndiagonal-prior limit: A_kk vs reliability var_z/(var_z+var_n)")
for var_z, var_n in [(1.0, 1.0), (2.0, 0.5), (0.5, 2.0)]:
    p = LatentHeadParams(
        chol=np.linalg.cholesky(np.diag([1.0 / var_z]) - 1e-4 * np.eye(1)),
        log_var=np.array([np.log(var_n)]),
        task_w=np.zeros((2, 1)),
        task_b=np.zeros(2),
    )
    a_kk = posterior(np.array([0.7]), p).denoise[0, 0]
    print(f"  var_z={var_z:4.1f} var_n={var_n:4.1f}: "
          f"A={a_kk:.6f}  reliability={var_z / (var_z + var_n):.6f}")

print("\nfresh Stage-II parameters shrink every coordinate by ~0.5:")
init = LatentHeadParams.init(K=4, S=4)
obs = np.array([0.954, 0.5, 0.25, 0.8])
print("  s~     ", obs)
print("  mu_post", np.round(posterior(obs, init).mu_post, 4))
