"""Word error rate and embedded-language accuracy on a Denglish sentence.

The reference tags English words with ``|en``; untagged words count as
German. One English word is misrecognized, so WER is one error out of
thirteen words while English word accuracy drops to three out of four.

    python3 demos/04_scoring.py
"""

from csaug.scoring import TaggedReference, align, embedded_accuracy, wer

ref = TaggedReference.parse(
    "wir haben das meeting|en mit dem team|en wegen dem feedback|en zum release|en verschoben",
    default_lang="de",
)
hyp = "wir haben das meeting mit dem tim wegen dem feedback zum release verschoben"

report = wer(ref.plain, hyp)
print(f"WER {report.wer_percent:.2f}%  ({report.substitutions} sub, {report.deletions} del, "
      f"{report.insertions} ins over {report.ref_words} words)")
print(f"English word accuracy {embedded_accuracy(ref, hyp, 'en'):.2f}%")

print("\nalignment")
hyp_words = hyp.split()
for op, ri, hi in align(ref.plain, hyp_words):
    r = ref.plain[ri] if ri is not None else "-"
    h = hyp_words[hi] if hi is not None else "-"
    lang = ref.words[ri][1] if ri is not None else ""
    print(f"  {op} {r:>12} {h:<12} {lang}")
