"""
Where the communication savings come from
=========================================

Evaluate the ablation ladder at a 32000 x 4096 table: start from a
Cheetah-style baseline and switch on one optimization at a time.
"""

from fastquery import method_report
from fastquery.costmodel import input_comm_bits, output_comm_bits

# %%
report = method_report(32000, 4096)
print(report.to_csv())
print(f"overall reduction {report.final_ratio:.1f}x")

# %%
# Quantization alone does not help: the baseline ciphertext modulus stays
# at 109 bits. Shrinking the accumulation to 13 bits lets the modulus drop
# to 48 bits, packing three channels per coefficient divides the output
# rows by three, and repacking the extracted values removes the per-value
# term altogether.
for n_eff in (4096, 1366):
    bits = output_comm_bits(n_eff, 32000, 4096, 48, packlwes=False)
    print(f"output bits with {n_eff} rows: {bits:,d}")
print(f"query bits at q=109: {input_comm_bits(32000, 4096, 109):,d}")

# %%
for note in report.footnotes:
    print("note:", note)
