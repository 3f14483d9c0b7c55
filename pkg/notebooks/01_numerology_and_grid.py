# %% [markdown]
# # Numerology, resolution and the positioning resource grid
#
# The subcarrier spacing fixes the symbol duration and, through the FFT size,
# the sampling time that bounds timing resolution.  The comb patterns of PRS
# and SRS let several cells share a slot without touching each other's REs.

# %%
from nrloc.grid5g import PrsConfig, find_collisions, map_to_grid, numerology_params, sampling_resolution

for mu in range(7):
    n = numerology_params(mu)
    ranging = "  -  " if n.ranging_m is None else f"{n.ranging_accuracy:5.2f}"
    print(f"mu={mu}  scs={n.scs_khz:>4} kHz  BW={n.max_bw_mhz:>5} MHz  "
          f"T_symb={n.symbol_duration * 1e6:6.2f} us  c/BW={ranging} m")

# %% [markdown]
# Sampling time and the matching range granularity for three FFT sizes.

# %%
for mu, nf in [(0, 2048), (3, 4096), (6, 4096)]:
    ts, dr = sampling_resolution(mu, nf)
    print(f"mu={mu} N_f={nf}: T_s = {ts * 1e9:.2f} ns, c*T_s = {dr:.3f} m")

# %% [markdown]
# Four PRS cells on a comb-4 pattern with staggered RE offsets fill every
# subcarrier of the four PRS symbols exactly once.

# %%
cells = [PrsConfig(cell_id=i + 1, comb_size=4, n_symbols=4, n_rb=2, re_offset=i, periodicity=4, mu=0)
         for i in range(4)]
occupied = map_to_grid(cells, 1).dense() != 0
rows = occupied.any(axis=1).nonzero()[0]
owner = sum((map_to_grid([c], 1).dense() != 0) * c.cell_id for c in cells)
print("PRS symbols:", rows.tolist())
print(owner[rows, :12])
print("collisions:", len(find_collisions(cells, 1)))

# %%
# shifting one cell onto another's offset produces RE collisions
cells[3] = PrsConfig(cell_id=4, comb_size=4, n_symbols=4, n_rb=2, re_offset=0, periodicity=4, mu=0)
print("collisions after overlap:", len(find_collisions(cells, 1)))
