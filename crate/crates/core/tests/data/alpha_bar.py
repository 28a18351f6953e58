# Writes the reference cumulative products for the default 20-step linear schedule.
T = 20
start, end = 1e-4, 0.02
acc = 1.0
lines = []
for i in range(T):
    beta = start + (end - start) * i / (T - 1)
    acc *= 1.0 - beta
    lines.append(f"{i + 1} {acc!r} {acc.hex()}")
with open("alpha_bar_t20.txt", "w") as f:
    f.write("# t alpha_bar alpha_bar_hex\n")
    f.write("\n".join(lines) + "\n")
