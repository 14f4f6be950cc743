"""
Line-delimited JSON records
"""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

import aiofiles


def dumps(record: Dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True)


def read_jsonl(path: Union[str, Path]) -> List[Dict[str, Any]]:
    """Records of a .jsonl file; blank lines and lines starting with '#' are skipped"""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{number}: invalid JSON: {e}")
    return records


async def write_jsonl(path: Union[str, Path], records: Iterable[Dict[str, Any]]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    async with aiofiles.open(path, "w", encoding="utf-8") as f:
        for record in records:
            await f.write(dumps(record) + "\n")
            count += 1
    return count


class JsonlWriter:
    """Async append writer; one instance owns the file for a whole run"""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._file = None
        self.count = 0

    async def __aenter__(self) -> "JsonlWriter":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = await aiofiles.open(self.path, "w", encoding="utf-8")
        return self

    async def write(self, record: Dict[str, Any]) -> None:
        await self._file.write(dumps(record) + "\n")
        self.count += 1

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        await self._file.close()


async def write_json(path: Union[str, Path], data: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, "w", encoding="utf-8") as f:
        await f.write(json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n")
