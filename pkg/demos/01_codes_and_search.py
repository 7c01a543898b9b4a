"""Binary codes, Hamming distance and ranked retrieval in a few lines."""

import numpy as np

from tlhash import codes, index

spacer = "-" * 60

print("A code is a vector of +1/-1 packed into 64-bit words, lowest bit first.")
a = codes.pack([1, -1, 1, 1, -1, -1, 1, -1])
b = codes.pack([1, 1, 1, -1, -1, -1, 1, 1])
print("a =", a)
print("b =", b)
print("a.words =", a.words, " (binary", bin(int(a.words[0])), ")")

print("\nHamming distance counts differing bits.")
print("hamming(a, b) =", codes.hamming(a, b))

print("\nHalf the inner product relates to it by 2 * theta = L - 2 * hamming:")
theta = codes.theta_binary(a, b)
print("theta_binary(a, b) =", theta, "  L - 2 * hamming =", a.length - 2 * codes.hamming(a, b))

print("\nRelaxed codes are quantized by sign; zero maps to -1.")
print("sign_quantize([0.3, -2.0, 0.0]) =", codes.unpack(codes.sign_quantize([0.3, -2.0, 0.0])))

print(spacer)
print("A database is a word matrix plus ids. Build one from 2000 random 32-bit codes.")
rng = np.random.default_rng(0)
signs = rng.choice([-1, 1], size=(2000, 32))
db = index.build(codes.pack_rows(signs), [f"img{i}" for i in range(2000)], 32)
print("len(db) =", len(db))

query = signs[7].copy()
query[:3] *= -1  # flip three bits
print("\nQuery: image 7 with three bits flipped. Top 5:")
for item, dist in index.search(db, codes.pack(query), 5):
    print(f"  {item:>8}  distance {dist}")

print("\nEqual distances keep insertion order, so rankings are reproducible.")
dup = index.build([codes.pack([1, -1])] * 3, ["first", "second", "third"])
print(index.search(dup, codes.pack([1, 1]), 3))
