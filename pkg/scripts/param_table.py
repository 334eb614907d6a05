"""Trainable-parameter counts of the six variants next to the published figures."""

import argparse

from seqattn.reader import PAPER_MAX_ENTITIES, TABLE2_PARAMS, VARIANTS, ReaderConfig, count_parameters


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-entities", type=int, default=PAPER_MAX_ENTITIES)
    ap.add_argument("--attn-hidden", type=int, default=128)
    a = ap.parse_args()
    print(f"{'model':<22}{'counted':>12}{'millions':>10}{'published':>11}{'diff':>10}")
    for v in VARIANTS:
        n = count_parameters(ReaderConfig.paper(v, max_entities=a.max_entities, attn_hidden=a.attn_hidden)).total
        pub = TABLE2_PARAMS[v]
        print(f"{v:<22}{n:>12,}{n / 1e6:>10.2f}{pub:>11.2f}{n / 1e6 - pub:>+10.2f}")


if __name__ == "__main__":
    main()
