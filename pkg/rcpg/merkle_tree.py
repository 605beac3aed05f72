import hashlib
from typing import Dict, List, Mapping


def file_digest(path: str, chunk_size: int = 1 << 16) -> str:
    """sha256 hex digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _leaf_hash(path: str, digest: str) -> str:
    return hashlib.sha256(f"{path}:{digest}".encode()).hexdigest()


class MerkleTree:
    """
    Merkle tree over run artifacts; leaves are (relative path, sha256) pairs sorted by path.
    """
    def __init__(self, artifacts: Mapping[str, str]):
        self.paths = sorted(artifacts)
        self.leaves = [_leaf_hash(p, artifacts[p]) for p in self.paths]
        self.tree: List[List[str]] = []
        self.root = ""
        if self.leaves:
            self.build_tree()

    def build_tree(self):
        current_level = self.leaves
        self.tree.append(current_level)

        while len(current_level) > 1:
            next_level = []
            for i in range(0, len(current_level), 2):
                left = current_level[i]
                # odd level: the last node is paired with itself
                right = current_level[i + 1] if i + 1 < len(current_level) else left
                next_level.append(hashlib.sha256((left + right).encode()).hexdigest())
            self.tree.append(next_level)
            current_level = next_level

        self.root = current_level[0]

    def get_root(self) -> str:
        return self.root

    def get_proof(self, path: str) -> List[Dict[str, str]]:
        """Sibling hashes with their side, from the artifact's leaf up to the root."""
        if path not in self.paths:
            raise ValueError(f"Artifact {path} is not part of the tree")

        proof = []
        current_index = self.paths.index(path)
        for level in self.tree[:-1]:
            is_left_node = current_index % 2 == 0
            sibling_index = current_index + 1 if is_left_node else current_index - 1
            if sibling_index >= len(level):
                proof.append({"hash": level[current_index], "direction": "right"})
            else:
                proof.append({"hash": level[sibling_index], "direction": "right" if is_left_node else "left"})
            current_index //= 2
        return proof

    @staticmethod
    def verify_proof(path: str, digest: str, proof: List[Dict[str, str]], root: str) -> bool:
        current_hash = _leaf_hash(path, digest)
        for node in proof:
            if node["direction"] == "right":
                combined = current_hash + node["hash"]
            else:
                combined = node["hash"] + current_hash
            current_hash = hashlib.sha256(combined.encode()).hexdigest()
        return current_hash == root
