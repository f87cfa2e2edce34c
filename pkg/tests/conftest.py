import json

import pytest

from contextlab.corpus import load_bank
from contextlab.gateway import Gateway, MockProvider, ProviderSpec


def bank_records(n):
    records = []
    for i in range(1, n + 1):
        records.append(
            {
                "id": f"q{i:02d}",
                "question": f"Question {i}: why does effect number {i} occur?",
                "answer": f"Because of mechanism number {i}.",
                "insightful_hint": f"Mechanism number {i} is the actual driver here.",
                "vague_hint": f"Consider what could drive effect number {i}.",
                "unrelated_hint": f"An unrelated historical aside, number {i}.",
            }
        )
    return records


@pytest.fixture
def make_bank(tmp_path):
    """Build a small synthetic bank on disk and load it."""

    counter = {"n": 0}

    def build(n=3, records=None):
        counter["n"] += 1
        path = tmp_path / f"bank{counter['n']}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records if records is not None else bank_records(n):
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return load_bank(path)

    return build


@pytest.fixture
def make_gateway(tmp_path):
    """Build mock gateways that share tmp_path for their ledgers; closed on teardown."""

    built = []
    counter = {"n": 0}

    def build(provider=None, mode="mock", ledger_in=None, ledger_out=None, **spec_kw):
        counter["n"] += 1
        if ledger_out is None:
            ledger_out = tmp_path / f"gw{counter['n']}.jsonl"
        spec = ProviderSpec(mode=mode, **spec_kw)
        g = Gateway(
            spec,
            provider=provider if provider is not None else MockProvider(),
            ledger_in=ledger_in,
            ledger_out=ledger_out,
        )
        built.append(g)
        return g

    yield build
    for g in built:
        g.close()
