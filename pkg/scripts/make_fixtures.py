"""Regenerate the additive-price fixtures in data/."""

from pathlib import Path

from pricelab.afd_fit import synthetic_table, write_table

DATA = Path(__file__).resolve().parents[1] / "data"
ATTRS = ["a0", "a1", "a2", "a3"]

if __name__ == "__main__":
    records, _ = synthetic_table(n_records=1000, seed=0)
    write_table(records, DATA / "synthetic_products.csv", ATTRS)
    noisy, _ = synthetic_table(n_records=1000, noise_frac=0.2, seed=0)
    write_table(noisy, DATA / "synthetic_products_noisy.csv", ATTRS)
    print(f"wrote {len(records)} + {len(noisy)} rows to {DATA}")
