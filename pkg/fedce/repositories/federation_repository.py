"""
Versioned line-delimited record files for generated federations.
"""
import json
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from fedce.exceptions.errors import CheckpointFormatError
from fedce.models.federation import ClientDataset, SampleSet

FORMAT = "fedce-federation"
VERSION = 1
SPLITS = ("train", "val", "test")


class FileFederationRepository:
    """Federation export/import as JSON lines: header, one record per client, one per sample."""

    def __init__(self, file_path: Union[str, Path]):
        self.file_path = Path(file_path)

    def save(self, clients: Sequence[ClientDataset], task: str) -> Path:
        self.file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.file_path, "w", encoding="utf-8", newline="\n") as f:
            header = {"format": FORMAT, "version": VERSION, "task": task, "n_clients": len(clients)}
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for client in clients:
                record = {
                    "kind": "client",
                    "client_id": client.client_id,
                    "p": client.p,
                    "is_free_rider": client.is_free_rider,
                }
                f.write(json.dumps(record, sort_keys=True) + "\n")
            for client in clients:
                for split in SPLITS:
                    samples: SampleSet = getattr(client, split)
                    for features, label in zip(samples.features, samples.labels):
                        record = {
                            "kind": "sample",
                            "client_id": client.client_id,
                            "split": split,
                            "features": features.tolist(),
                            "label": label.tolist() if np.ndim(label) else int(label),
                        }
                        f.write(json.dumps(record, sort_keys=True) + "\n")
        return self.file_path

    def load(self) -> List[ClientDataset]:
        if not self.file_path.exists():
            raise CheckpointFormatError(f"federation file not found at {self.file_path}")
        with open(self.file_path, "r", encoding="utf-8") as f:
            lines = [line for line in f if line.strip()]
        if not lines:
            raise CheckpointFormatError(f"{self.file_path} is empty")
        try:
            header = json.loads(lines[0])
            records = [json.loads(line) for line in lines[1:]]
        except json.JSONDecodeError as e:
            raise CheckpointFormatError(f"{self.file_path}: malformed record: {e}") from e
        if header.get("format") != FORMAT or header.get("version") != VERSION:
            raise CheckpointFormatError(
                f"{self.file_path}: unsupported format {header.get('format')!r} version {header.get('version')!r}"
            )
        segmentation = header.get("task") == "segmentation"

        meta: Dict[int, dict] = {}
        samples: Dict[int, Dict[str, list]] = {}
        for record in records:
            cid = int(record["client_id"])
            if record.get("kind") == "client":
                meta[cid] = record
                continue
            samples.setdefault(cid, {s: [] for s in SPLITS})[record["split"]].append(record)

        clients = []
        for cid in range(int(header["n_clients"])):
            if cid not in meta:
                raise CheckpointFormatError(f"{self.file_path}: client {cid} has no client record")
            splits = {}
            for split in SPLITS:
                rows = samples.get(cid, {}).get(split, [])
                splits[split] = _sample_set(rows, segmentation)
            clients.append(
                ClientDataset(
                    client_id=cid,
                    p=float(meta[cid]["p"]),
                    is_free_rider=bool(meta[cid].get("is_free_rider", False)),
                    **splits,
                )
            )
        return clients


def _sample_set(rows: list, segmentation: bool) -> SampleSet:
    if not rows:
        raise CheckpointFormatError("federation file holds a client split with no samples")
    features = np.array([r["features"] for r in rows], dtype=np.float64)
    if segmentation:
        labels = np.array([r["label"] for r in rows], dtype=np.float64)
    else:
        labels = np.array([r["label"] for r in rows], dtype=np.int64)
    return SampleSet(features=features, labels=labels)
