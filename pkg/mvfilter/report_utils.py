import os
import json
import hashlib
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence
from .context import RunContext, VERSION


def format_value(value) -> str:
    '''Floats get 17 significant digits so every number round-trips exactly.'''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f'{value:.17g}'
    if value is None:
        return ''
    try:
        return f'{float(value):.17g}'      # numpy scalars
    except (TypeError, ValueError):
        return str(value)



def render_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [','.join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f'row has {len(row)} fields, header has {len(header)}: {row}')
        lines.append(','.join(format_value(v) for v in row))
    return '\n'.join(lines) + '\n'



def derived_path(output_path: str, suffix: str) -> str:
    '''curves.csv + contraction -> curves.contraction.csv'''
    root, ext = os.path.splitext(output_path)
    return f'{root}.{suffix}{ext or ".csv"}'



def write_csv(context: RunContext, path: str, header: Sequence[str], rows: Iterable[Sequence], output_kind: str = 'csv') -> str:
    """
    Writes one CSV file and returns the sha256 of its content.
    Line endings are always '\\n' so that identical results give byte-identical files on every platform.
    """
    rows = list(rows)
    content = render_csv(header, rows)

    # Generate content hash for the metadata sidecar.
    content_hash = hashlib.sha256(content.encode('utf-8')).hexdigest()

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    try:
        with open(path, 'w', newline='', encoding='utf-8') as f:
            f.write(content)
    except OSError as e:
        if context.logger:
            context.logger.log_numerical_error(message=f'Could not write {path}: {e}', experiment=context.command)
        raise e

    if context.logger:
        context.logger.log_output_written(len(rows), path, output_kind, experiment=context.command)
    return content_hash



def write_meta(context: RunContext, csv_path: str, content_hash: str, extra: Optional[dict] = None) -> str:
    """
    JSON sidecar <csv>.meta.json with command, seed, version, wall time, the CSV hash and the resolved config.
    wall_time_seconds is the only field that changes between identical runs.
    """
    now = datetime.now(timezone.utc)
    meta = {
        'command': context.command,
        'seed': context.seed,
        'version': VERSION,
        'wall_time_seconds': (now - context.run_start_time).total_seconds(),
        'csv_sha256': content_hash,
        'config': context.as_dict(),
    }
    if extra:
        meta['results'] = extra

    meta_path = f'{csv_path}.meta.json'
    with open(meta_path, 'w', encoding='utf-8') as f:
        json.dump(meta, f, indent=2, sort_keys=True, default=format_value)
        f.write('\n')
    if context.logger:
        context.logger.log_output_written(1, meta_path, 'meta', experiment=context.command)
    return meta_path



def write_report(context: RunContext, path: str, header: Sequence[str], rows: Iterable[Sequence],
                 output_kind: str = 'csv', extra: Optional[dict] = None) -> str:
    '''CSV plus its metadata sidecar. Returns the CSV hash.'''
    content_hash = write_csv(context, path, header, rows, output_kind)
    write_meta(context, path, content_hash, extra)
    return content_hash
