import { BandSeries } from './stats.js';

export interface ChartOptions {
  width?: number;
  height?: number;
  title?: string;
  xLabel?: string;
  yLabel?: string;
  band?: boolean;
}

const MARGIN = { left: 62, right: 170, top: 40, bottom: 46 };
const PALETTE = ['#1f77b4', '#d62728', '#2ca02c', '#ff7f0e', '#9467bd',
                 '#8c564b', '#e377c2', '#7f7f7f', '#bcbd22', '#17becf'];

function ticks(lo: number, hi: number, n = 6): number[] {
  if (lo === hi) return [lo];
  const span = hi - lo;
  const step = Math.pow(10, Math.floor(Math.log10(span / n)));
  const err = span / n / step;
  const mult = err >= 7.5 ? 10 : err >= 3.5 ? 5 : err >= 1.5 ? 2 : 1;
  const s = mult * step;
  const out: number[] = [];
  for (let v = Math.ceil(lo / s) * s; v <= hi + 1e-12 * span; v += s) out.push(v);
  return out;
}

const fmt = (v: number) => {
  const s = v.toPrecision(12);
  return String(Number(s));
};

/** Line chart with optional mean±sd bands. The linear scales are recorded as
 * data-* attributes so the geometry is exactly invertible (tests rely on it). */
export function renderChart(series: BandSeries[], opts: ChartOptions = {}): string {
  const width = opts.width ?? 840;
  const height = opts.height ?? 480;
  const band = opts.band ?? true;
  const plotW = width - MARGIN.left - MARGIN.right;
  const plotH = height - MARGIN.top - MARGIN.bottom;

  let xMin = Infinity, xMax = -Infinity, yMin = Infinity, yMax = -Infinity;
  for (const s of series) {
    for (let i = 0; i < s.x.length; i++) {
      xMin = Math.min(xMin, s.x[i]);
      xMax = Math.max(xMax, s.x[i]);
      const lo = s.mean[i] - (band ? s.sd[i] : 0);
      const hi = s.mean[i] + (band ? s.sd[i] : 0);
      yMin = Math.min(yMin, lo);
      yMax = Math.max(yMax, hi);
    }
  }
  if (!isFinite(xMin)) { xMin = 0; xMax = 1; yMin = 0; yMax = 1; }
  if (xMin === xMax) { xMax = xMin + 1; }
  if (yMin === yMax) { yMin -= 0.5; yMax += 0.5; }
  const yPad = 0.05 * (yMax - yMin);
  yMin -= yPad;
  yMax += yPad;

  const sx = (x: number) => MARGIN.left + ((x - xMin) / (xMax - xMin)) * plotW;
  const sy = (y: number) => MARGIN.top + plotH - ((y - yMin) / (yMax - yMin)) * plotH;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
    `viewBox="0 0 ${width} ${height}" data-xmin="${fmt(xMin)}" data-xmax="${fmt(xMax)}" ` +
    `data-ymin="${fmt(yMin)}" data-ymax="${fmt(yMax)}" data-left="${MARGIN.left}" ` +
    `data-top="${MARGIN.top}" data-plot-width="${plotW}" data-plot-height="${plotH}">`);
  parts.push(`<rect width="${width}" height="${height}" fill="white"/>`);
  if (opts.title) {
    parts.push(`<text x="${MARGIN.left + plotW / 2}" y="24" text-anchor="middle" ` +
      `font-family="sans-serif" font-size="15">${escapeXml(opts.title)}</text>`);
  }

  for (const tx of ticks(xMin, xMax)) {
    const px = sx(tx);
    parts.push(`<line x1="${fmt(px)}" y1="${MARGIN.top}" x2="${fmt(px)}" ` +
      `y2="${MARGIN.top + plotH}" stroke="#e0e0e0"/>`);
    parts.push(`<text x="${fmt(px)}" y="${MARGIN.top + plotH + 18}" text-anchor="middle" ` +
      `font-family="sans-serif" font-size="11">${fmt(tx)}</text>`);
  }
  for (const ty of ticks(yMin, yMax)) {
    const py = sy(ty);
    parts.push(`<line x1="${MARGIN.left}" y1="${fmt(py)}" x2="${MARGIN.left + plotW}" ` +
      `y2="${fmt(py)}" stroke="#e0e0e0"/>`);
    parts.push(`<text x="${MARGIN.left - 8}" y="${fmt(py + 4)}" text-anchor="end" ` +
      `font-family="sans-serif" font-size="11">${fmt(Number(ty.toPrecision(6)))}</text>`);
  }
  parts.push(`<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${plotW}" ` +
    `height="${plotH}" fill="none" stroke="#333"/>`);
  if (opts.xLabel) {
    parts.push(`<text x="${MARGIN.left + plotW / 2}" y="${height - 8}" ` +
      `text-anchor="middle" font-family="sans-serif" font-size="12">` +
      `${escapeXml(opts.xLabel)}</text>`);
  }
  if (opts.yLabel) {
    parts.push(`<text x="16" y="${MARGIN.top + plotH / 2}" text-anchor="middle" ` +
      `font-family="sans-serif" font-size="12" transform="rotate(-90 16 ` +
      `${MARGIN.top + plotH / 2})">${escapeXml(opts.yLabel)}</text>`);
  }

  series.forEach((s, si) => {
    const color = PALETTE[si % PALETTE.length];
    if (band && s.x.length > 0) {
      const upper = s.x.map((x, i) => `${fmt(sx(x))},${fmt(sy(s.mean[i] + s.sd[i]))}`);
      const lower = s.x.map((x, i) => `${fmt(sx(x))},${fmt(sy(s.mean[i] - s.sd[i]))}`)
        .reverse();
      parts.push(`<polygon class="band" data-label="${escapeXml(s.label)}" ` +
        `points="${upper.concat(lower).join(' ')}" fill="${color}" ` +
        `fill-opacity="0.22" stroke="none"/>`);
    }
    const pts = s.x.map((x, i) => `${fmt(sx(x))},${fmt(sy(s.mean[i]))}`).join(' ');
    parts.push(`<polyline class="mean" data-label="${escapeXml(s.label)}" ` +
      `points="${pts}" fill="none" stroke="${color}" stroke-width="1.8"/>`);
    const ly = MARGIN.top + 14 + 18 * si;
    const lx = MARGIN.left + plotW + 12;
    parts.push(`<line x1="${lx}" y1="${ly - 4}" x2="${lx + 22}" y2="${ly - 4}" ` +
      `stroke="${color}" stroke-width="3"/>`);
    parts.push(`<text x="${lx + 28}" y="${ly}" font-family="sans-serif" ` +
      `font-size="12">${escapeXml(s.label)}</text>`);
  });
  parts.push('</svg>');
  return parts.join('\n') + '\n';
}

function escapeXml(s: string): string {
  return s.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

/** Inverse of the chart's y scale, reconstructed from the data attributes. */
export function yScaleFromSvg(svg: string): { toData: (py: number) => number } {
  const attr = (name: string): number => {
    const m = svg.match(new RegExp(`data-${name}="([^"]+)"`));
    if (!m) throw new Error(`missing data-${name}`);
    return Number(m[1]);
  };
  const yMin = attr('ymin');
  const yMax = attr('ymax');
  const top = attr('top');
  const plotH = attr('plot-height');
  return {
    toData: (py: number) => yMin + ((top + plotH - py) / plotH) * (yMax - yMin),
  };
}

export function polygonPoints(svg: string, label: string): Array<[number, number]> {
  const rx = new RegExp(
    `<polygon class="band" data-label="${label}" points="([^"]*)"`);
  const m = svg.match(rx);
  if (!m) throw new Error(`no band polygon for ${label}`);
  return m[1].split(' ').filter(p => p !== '').map(p => {
    const [x, y] = p.split(',').map(Number);
    return [x, y] as [number, number];
  });
}

export function polylinePoints(svg: string, label: string): Array<[number, number]> {
  const rx = new RegExp(
    `<polyline class="mean" data-label="${label}" points="([^"]*)"`);
  const m = svg.match(rx);
  if (!m) throw new Error(`no mean polyline for ${label}`);
  return m[1].split(' ').filter(p => p !== '').map(p => {
    const [x, y] = p.split(',').map(Number);
    return [x, y] as [number, number];
  });
}
