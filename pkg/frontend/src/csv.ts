import { readFileSync, readdirSync, statSync, existsSync } from 'fs';
import { join, dirname, sep } from 'path';

export interface MetricsTable {
  path: string;
  header: string[];
  rows: Record<string, string>[];
}

/** Parse a metrics CSV; lines starting with '#' (abort markers) are skipped. */
export function parseCsv(text: string, path = '<memory>'): MetricsTable {
  const lines = text.split('\n').filter(l => l.trim() !== '' && !l.startsWith('#'));
  if (lines.length === 0) return { path, header: [], rows: [] };
  const header = lines[0].split(',');
  const rows = lines.slice(1).map(line => {
    const cells = line.split(',');
    const row: Record<string, string> = {};
    header.forEach((h, i) => { row[h] = cells[i] ?? ''; });
    return row;
  });
  return { path, header, rows };
}

export function readCsv(path: string): MetricsTable {
  return parseCsv(readFileSync(path, 'utf8'), path);
}

/** Group label for a run: the arm/method recorded in its run.json when
 * present, else the grandparent directory name (out/arm/seedN/metrics.csv). */
export function groupLabel(csvPath: string, groupBy: string): string {
  const runJson = join(dirname(csvPath), 'run.json');
  if (existsSync(runJson)) {
    try {
      const doc = JSON.parse(readFileSync(runJson, 'utf8'));
      const cfg = doc.config ?? {};
      if (groupBy === 'method' && cfg.method) return String(cfg.method);
      if (groupBy === 'arm' && cfg.arm) return String(cfg.arm);
    } catch {
      // fall through to directory naming
    }
  }
  const parts = dirname(csvPath).split(sep).filter(p => p !== '');
  return parts.length >= 2 ? parts[parts.length - 2] : parts[parts.length - 1] ?? csvPath;
}

/** Minimal glob: '**' spans directories, '*' spans within one segment. */
export function expandGlob(pattern: string): string[] {
  if (!pattern.includes('*')) return existsSync(pattern) ? [pattern] : [];
  const segs = pattern.split('/');
  let roots = [segs[0] === '' ? '/' : segs[0].includes('*') ? '.' : segs[0]];
  let start = segs[0] === '' || !segs[0].includes('*') ? 1 : 0;
  if (start === 0) roots = ['.'];
  const rx = (s: string) =>
    new RegExp('^' + s.replace(/[.+^${}()|[\]\\]/g, '\\$&').replace(/\*/g, '[^/]*') + '$');
  let current = roots;
  for (let i = start; i < segs.length; i++) {
    const seg = segs[i];
    const next: string[] = [];
    for (const dir of current) {
      if (!existsSync(dir) || !statSync(dir).isDirectory()) continue;
      if (seg === '**') {
        const stack = [dir];
        while (stack.length) {
          const d = stack.pop()!;
          next.push(d);
          for (const e of readdirSync(d)) {
            const p = join(d, e);
            if (statSync(p).isDirectory()) stack.push(p);
          }
        }
      } else if (seg.includes('*')) {
        const m = rx(seg);
        for (const e of readdirSync(dir)) if (m.test(e)) next.push(join(dir, e));
      } else {
        const p = join(dir, seg);
        if (existsSync(p)) next.push(p);
      }
    }
    current = [...new Set(next)];
  }
  return current.filter(p => existsSync(p) && statSync(p).isFile()).sort();
}
