"""Train one variant on the context-trigger task and show where it attends.

Prints each of a few test passages with the attention weight of every
token, marking the gold answer and the prediction.
"""

import argparse

import numpy as np

from seqattn.data import TRIGGER
from seqattn.experiments import SyntheticRegime, run_variant, synthetic_data
from seqattn.reader import VARIANTS
from seqattn.training import attention_record


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--variant", choices=list(VARIANTS), default="sa-elementwise")
    ap.add_argument("--epochs", type=int, default=25)
    ap.add_argument("--examples", type=int, default=3)
    a = ap.parse_args()

    regime = SyntheticRegime(rule=TRIGGER, epochs=a.epochs, patience=None)
    data = synthetic_data(regime)
    models = {}
    result = run_variant(regime, a.variant, data, model_out=models)
    print(f"{a.variant}: test accuracy {result.test_accuracy:.3f} (best epoch {result.best_epoch})\n")
    for ex, raw in list(zip(data.test, data.raw_test))[: a.examples]:
        rec = attention_record(models[a.variant], ex, data.vocab)
        print("question:", " ".join(raw.question))
        top = int(np.argmax(rec["alpha"]))
        for i, (tok, w) in enumerate(zip(raw.passage, rec["alpha"])):
            tags = []
            if tok == raw.answer:
                tags.append("answer")
            if tok == f"@entity{rec['prediction']}":
                tags.append("predicted")
            if i == top:
                tags.append("max")
            print(f"  {tok:<10}{w:8.3f}  {'#' * int(round(40 * w)):<40} {' '.join(tags)}")
        print()


if __name__ == "__main__":
    main()
