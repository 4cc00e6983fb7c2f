import { MetricsTable } from './csv.js';

export interface Series {
  x: number[];
  y: number[];
}

export interface BandSeries {
  label: string;
  x: number[];
  mean: number[];
  sd: number[];
}

export function column(table: MetricsTable, name: string): Series {
  if (!table.header.includes(name)) {
    throw new Error(`column '${name}' missing in ${table.path}`);
  }
  const x: number[] = [];
  const y: number[] = [];
  for (const row of table.rows) {
    const v = row[name];
    if (v === '' || v === undefined) continue;
    x.push(Number(row['episode']));
    y.push(Number(v));
  }
  return { x, y };
}

export function movingAverage(y: number[], window: number): number[] {
  if (window <= 1) return y.slice();
  const out: number[] = [];
  for (let i = 0; i < y.length; i++) {
    const lo = Math.max(0, i - window + 1);
    const chunk = y.slice(lo, i + 1);
    out.push(chunk.reduce((a, b) => a + b, 0) / chunk.length);
  }
  return out;
}

export function sampleSd(values: number[]): number {
  if (values.length < 2) return 0;
  const m = values.reduce((a, b) => a + b, 0) / values.length;
  const ss = values.reduce((a, b) => a + (b - m) * (b - m), 0);
  return Math.sqrt(ss / (values.length - 1));
}

/** Seed-mean and sample-sd per x over one group of runs. Runs are aligned on
 * shared x values (the eval cadence); x present in only some seeds is kept
 * with the seeds that have it. */
export function aggregate(label: string, runs: Series[], window: number): BandSeries {
  const byX = new Map<number, number[]>();
  for (const run of runs) {
    const ys = movingAverage(run.y, window);
    run.x.forEach((x, i) => {
      if (!byX.has(x)) byX.set(x, []);
      byX.get(x)!.push(ys[i]);
    });
  }
  const xs = [...byX.keys()].sort((a, b) => a - b);
  return {
    label,
    x: xs,
    mean: xs.map(x => {
      const v = byX.get(x)!;
      return v.reduce((a, b) => a + b, 0) / v.length;
    }),
    sd: xs.map(x => sampleSd(byX.get(x)!)),
  };
}
