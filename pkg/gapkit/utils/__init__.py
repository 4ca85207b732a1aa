"""
This module exposes the export and persistence utilities from the local
`utils` module for use across the gapkit package.

Functions:
    export_table: Decorator writing a returned DataFrame to CSV and text.
    write_json: Writes a JSON record deterministically.
    write_csv: Writes a DataFrame as a plain CSV file.
    file_digest: SHA-256 content hash of a file.
"""
from .utils import export_table, write_json, write_csv, file_digest
