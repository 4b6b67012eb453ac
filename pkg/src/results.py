"""CSV output for experiment tables."""

import logging
import os
from typing import List

import pandas as pd

logger = logging.getLogger(__name__)

# 17 significant digits round-trip every double
FLOAT_FORMAT = "%.17g"


class ResultsWriter:
    """Writes experiment tables into one output directory."""

    def __init__(self, out_dir: str):
        """Initialize the writer.

        Args:
            out_dir: Directory receiving the CSV files
        """
        self.out_dir = out_dir
        self.written: List[str] = []

    def path_for(self, name: str) -> str:
        return os.path.join(self.out_dir, f"{name}.csv")

    def write(self, name: str, table: pd.DataFrame) -> str:
        """Write a table as <out_dir>/<name>.csv.

        Args:
            name: File stem
            table: Data with its header as column names

        Returns:
            Path of the written file
        """
        os.makedirs(self.out_dir, exist_ok=True)
        path = self.path_for(name)
        table.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        self.written.append(path)
        logger.info("Wrote %d rows to %s", len(table), path)
        return path

    @staticmethod
    def read(path: str) -> pd.DataFrame:
        """Read back a table written by this class."""
        return pd.read_csv(path)
