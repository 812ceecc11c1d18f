#!/usr/bin/env python3
"""Convert the raw UCI Adult / German Credit files into headered CSVs.

Usage: prepare_data.py <raw_dir> <out_dir>

<raw_dir> must contain adult.data, adult.test and german.data exactly as
distributed by the UCI repository. Values are copied verbatim apart from
whitespace trimming and the trailing '.' on adult.test income labels.
"""
import csv
import os
import sys

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num",
    "marital_status", "occupation", "relationship", "race", "sex",
    "capital_gain", "capital_loss", "hours_per_week", "native_country",
    "income",
]

GERMAN_COLUMNS = [
    "status", "duration", "credit_history", "purpose", "credit_amount",
    "savings", "present_employment", "installment_rate", "status_sex",
    "other_debtors", "present_residence_since", "property", "age",
    "installment_plans", "housing", "number_of_existing_credits", "job",
    "number_of_people_liable_for", "telephone", "foreign_worker",
    "credit_risk",
]


def convert_adult(src, dst):
    with open(src) as fin, open(dst, "w", newline="") as fout:
        w = csv.writer(fout)
        w.writerow(ADULT_COLUMNS)
        for line in fin:
            line = line.strip()
            if not line or line.startswith("|"):
                continue
            fields = [f.strip() for f in line.split(",")]
            fields[-1] = fields[-1].rstrip(".")
            assert len(fields) == len(ADULT_COLUMNS), line
            w.writerow(fields)


def convert_german(src, dst):
    with open(src) as fin, open(dst, "w", newline="") as fout:
        w = csv.writer(fout)
        w.writerow(GERMAN_COLUMNS)
        for line in fin:
            fields = line.split()
            if not fields:
                continue
            assert len(fields) == len(GERMAN_COLUMNS), line
            w.writerow(fields)


def main():
    raw, out = sys.argv[1], sys.argv[2]
    os.makedirs(os.path.join(out, "adult"), exist_ok=True)
    os.makedirs(os.path.join(out, "german"), exist_ok=True)
    convert_adult(os.path.join(raw, "adult.data"), os.path.join(out, "adult", "adult_train.csv"))
    convert_adult(os.path.join(raw, "adult.test"), os.path.join(out, "adult", "adult_test.csv"))
    convert_german(os.path.join(raw, "german.data"), os.path.join(out, "german", "german.csv"))


if __name__ == "__main__":
    main()
