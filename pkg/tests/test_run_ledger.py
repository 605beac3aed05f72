import json

import pytest

from merkle_tree import MerkleTree, file_digest
from run_ledger import GENESIS_HASH, RunLedger


def test_ledger_chain_and_reload(tmp_path):
    path = str(tmp_path / "ledger.json")
    ledger = RunLedger(path)
    assert ledger.head == GENESIS_HASH
    first = ledger.append("estimate", {"cache_key": "abc"}, timestamp="2024-01-01T00:00:00")
    second = ledger.append("train", {"algorithm": "cpg", "seed": 0})
    assert second["prev_hash"] == first["hash"]
    assert ledger.validate_chain() == {"is_valid": True, "length": 2, "errors": []}

    reloaded = RunLedger(path)
    assert reloaded.head == second["hash"]
    assert reloaded.latest("train", algorithm="cpg")["index"] == 2
    assert reloaded.latest("train", algorithm="pg") is None
    with pytest.raises(ValueError):
        reloaded.append("deploy", {})


def test_ledger_detects_tampering(tmp_path):
    path = tmp_path / "ledger.json"
    ledger = RunLedger(str(path))
    ledger.append("estimate", {"episodes": 100})
    ledger.append("train", {"seed": 0})
    entries = json.loads(path.read_text())
    entries[0]["data"]["episodes"] = 5
    path.write_text(json.dumps(entries))
    report = RunLedger(str(path)).validate_chain()
    assert not report["is_valid"]
    assert "Entry 1: Hash mismatch" in report["errors"]

    entries = json.loads(path.read_text())
    del entries[0]
    path.write_text(json.dumps(entries))
    errors = RunLedger(str(path)).validate_chain()["errors"]
    assert "Entry 2: index out of sequence" in errors
    assert "Entry 2: Invalid prev_hash" in errors


def test_merkle_proofs(tmp_path):
    artifacts = {}
    for i in range(5):
        path = tmp_path / f"artifact{i}.csv"
        path.write_text(f"value,{i}\n")
        artifacts[path.name] = file_digest(str(path))
    tree = MerkleTree(artifacts)
    root = tree.get_root()
    for name, digest in artifacts.items():
        proof = tree.get_proof(name)
        assert MerkleTree.verify_proof(name, digest, proof, root)
        assert not MerkleTree.verify_proof(name, "0" * 64, proof, root)
    # leaf order is by path, not insertion order
    assert MerkleTree(dict(reversed(list(artifacts.items())))).get_root() == root
    with pytest.raises(ValueError):
        tree.get_proof("missing.csv")
    assert MerkleTree({}).get_root() == ""
