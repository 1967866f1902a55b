"""Train one BPE vocabulary across three languages.

Each language contributes the same number of characters, so a larger corpus
cannot crowd the others out of the merge table. Labels of a code-switched
utterance are just the concatenated labels of its segments; no language tags
are inserted.

    python3 demos/03_bpe.py
"""

from csaug.tokenizer import concat_labels, decode, encode, token_language_attribution, train_bpe

corpora = {
    "de": "wir haben das meeting heute verschoben und morgen haben wir wieder zeit " * 40,
    "en": "the meeting with the team was moved to the next release window " * 40,
    "ar": "مرحبا بكم في الاجتماع اليوم شكرا لكم على الوقت " * 40,
}
model = train_bpe(corpora, vocab_size=120)
print(f"vocabulary: {len(model)} entries, {len(model.merges)} merges, {len(model.base)} base symbols")
print("first merges:", ["".join(m) for m in model.merges[:8]])
print("token attribution:", token_language_attribution(model, corpora))

de, en = "wir haben das", "meeting with the team"
ids = concat_labels([encode(model, de), encode(model, en)])
assert ids == encode(model, f"{de} {en}")
print("\ncode-switched labels:", ids)
print("decoded:", decode(model, ids))
print("pieces:", [model.id_to_token[i] for i in ids])
