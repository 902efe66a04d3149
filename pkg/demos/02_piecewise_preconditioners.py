# %% [markdown]
# # Choosing a piecewise-constant preconditioner
#
# On two subdomains the coefficient oscillates between different levels.
# The best piecewise-constant a0 is known in closed form; the homogenized
# choice (harmonic mean per subdomain) is natural but not always optimal.

# %%
from qpkron.operator_bounds import (CONTAINMENT_INSTANCE, NON_CONTAINMENT_INSTANCE,
                                    compare_homogenized_vs_optimal, find_non_containment)

for name, inst in (("balanced", CONTAINMENT_INSTANCE), ("skewed", NON_CONTAINMENT_INSTANCE)):
    rep = compare_homogenized_vs_optimal(**inst)
    print(f"{name}: kappa = {rep.kappa}")
    print(f"  optimal ratio interval xi   = ({rep.xi[0]:.4f}, {rep.xi[1]:.4f})")
    print(f"  homogenized ratio           = {rep.hat_ratio:.4f}")
    print(f"  admissible interval zeta    = ({rep.zeta[0]:.4f}, {rep.zeta[1]:.4f})")
    print(f"  q homogenized / q optimal   = {rep.q_homogenized:.4f} / {rep.q_optimal:.4f}")

# %% [markdown]
# When the volume fractions differ between the subdomains, the ratio of the
# harmonic means leaves the optimal interval and the contraction factor
# gets worse.  A small parameter scan shows how common that is.

# %%
worse = find_non_containment()
print(len(worse), "scanned instances where homogenization loses")
gap = max(worse, key=lambda r: r.q_homogenized - r.q_optimal)
print(f"largest loss: beta={gap.beta}, kappa={gap.kappa}, "
      f"q_hom={gap.q_homogenized:.3f} vs q_opt={gap.q_optimal:.3f}")
