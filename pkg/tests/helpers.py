import numpy as np

from qdtradeoff.core import SolutionRecord


def make_record(f, r, features=(0.5, 0.5), genotype=None, samples=1):
    """Record with given estimates and a constant placeholder sample history."""
    d = np.asarray(features, dtype=np.float64)
    g = np.zeros(3) if genotype is None else np.asarray(genotype, dtype=np.float64)
    return SolutionRecord(g, np.full(samples, float(f)), np.repeat(d[:, None], samples, axis=1), f, d, r)


# acceptance verdict lines, echoed again in the terminal summary
VERDICTS = []


def verdict(number: int, ok: bool, detail: str) -> str:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    print(line)
    VERDICTS.append(line)
    return line
