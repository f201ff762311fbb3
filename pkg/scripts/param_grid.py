"""Learnable-parameter grid of the seizure model over dim_ff x num_layers (closed form, no allocation)."""
from eegunet.model import analytic_param_count, seizure_config
from eegunet.nn import TransformerEncoderLayer

FF = (1024, 2048, 4096)
LAYERS = (4, 8, 12)


def total(ff, n):
    return sum(analytic_param_count(seizure_config(dim_ff=ff, num_tx_layers=n)).values())


if __name__ == "__main__":
    print("dim_ff \\ layers" + "".join(f"{n:>14}" for n in LAYERS))
    for ff in FF:
        print(f"{ff:<15}" + "".join(f"{total(ff, n):>14,}" for n in LAYERS))
    print()
    print("per-layer size:", ", ".join(f"ff={ff}: {TransformerEncoderLayer.param_count(512, ff):,}" for ff in FF))
    print(f"non-transformer base: {total(1024, 0):,}")
