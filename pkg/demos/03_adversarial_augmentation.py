#!/usr/bin/env python3
"""Character-level adversarial copies: one substitution per chosen word,
1/2/3 words per sentence depending on its length.

Run:  python3 demos/03_adversarial_augmentation.py
"""

from textcaps.adversarial import PerturbationPolicy, augment_dataset
from textcaps.text import Document, tokenize

policy = PerturbationPolicy()
print(f"alphabet ({len(policy.alphabet)} letters):", "".join(policy.alphabet))

texts = [
    ("un produs bun. recomand tuturor!", 1),
    ("calitate slaba, nu cumparati; ambalajul a sosit deteriorat si zgariat", 0),
]
docs = [Document(t, tokenize(t), label) for t, label in texts]

for epoch in range(3):
    print(f"\nepoch {epoch} (same seed, fresh perturbations):")
    for original, copy in zip(docs, augment_dataset(docs, policy, base_seed=99,
                                                    epoch=epoch)):
        print("  original :", " | ".join(" ".join(s) for s in original.sentences))
        print("  perturbed:", " | ".join(" ".join(s) for s in copy.sentences))

# Word lengths and labels never change; each perturbed word differs from its
# original in exactly one character position.
again = augment_dataset(docs, policy, base_seed=99, epoch=0)
same = augment_dataset(docs, policy, base_seed=99, epoch=0)
print("\nepoch 0 regenerated identically:",
      [d.raw_text for d in again] == [d.raw_text for d in same])
