"""Prepare Kannisto-Thatcher cohort extracts for the conditional acceptance checks.

The database (Max Planck Institute for Demographic Research) requires a
registered account and its terms forbid redistribution, so nothing is
downloaded here. After obtaining the cohort death and population tables,
convert each cohort to the ingestion format

    age,survivors,deaths
    80,<N_80>,<D_80>
    ...

with one row per single year of age from 80 to 104, and save it as
``{country}_{sex}_{cohort}.csv``. The tests look in ``$MORTSEL_KT_DIR``,
then ``tests/data/kt``, for:

    DNK_male_1895.csv
    FRA_female_1872.csv

Run this script with a directory argument to check a prepared directory.
"""

import sys
from pathlib import Path

from mortsel.cohort import CohortDataError, read_cohort_file

NEEDED = ("DNK_male_1895.csv", "FRA_female_1872.csv")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        print(__doc__)
        return 1
    root = Path(argv[0])
    status = 0
    for name in NEEDED:
        path = root / name
        if not path.is_file():
            print(f"missing  {path}")
            status = 1
            continue
        try:
            ds = read_cohort_file(path)
        except CohortDataError as exc:
            print(f"invalid  {path}: {exc}")
            status = 1
            continue
        print(f"ok       {path}: ages {ds.ages[0]}-{ds.ages[-1]}, N = {ds.size}")
    return status


if __name__ == "__main__":
    sys.exit(main())
