import numpy as np

from mgrafa.mg import Aggregator, Variant

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def randomize_bn(module, rng):
    for bn in module.batch_norms():
        c = bn.gamma.shape[0]
        bn.gamma.data[:] = rng.uniform(0.5, 1.5, c)
        bn.beta.data[:] = rng.uniform(-0.2, 0.5, c)
        bn.running_mean[:] = rng.uniform(-0.3, 0.3, c)
        bn.running_var[:] = rng.uniform(0.5, 2.0, c)
    return module


def toy_aggregator(variant, C=8, H=4, W=2, T=3, s=2, s_r=2, seed=0, strategy=None):
    rng = np.random.default_rng(seed)
    kw = {} if strategy is None else {"strategy": strategy}
    agg = Aggregator(Variant.parse(variant), C, H, W, T, s, s_r, rng=rng, dtype=np.float64, **kw)
    randomize_bn(agg, rng)
    return agg.eval()
