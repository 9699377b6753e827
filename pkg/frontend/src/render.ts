import type { ReviewItem, SessionReport } from './api.js';

export interface ParsedCsv {
  header: string[];
  rows: string[][];
}

/** Split a report CSV; fields never contain commas or quotes. */
export function parseCsv(text: string): ParsedCsv {
  const lines = text.split('\n').filter((line) => line.length > 0);
  if (lines.length === 0) throw new Error('CSV export is empty');
  const [head, ...body] = lines;
  return {
    header: head.split(','),
    rows: body.map((line) => line.split(',')),
  };
}

/** Reassemble the CSV text a rendered rows table displays. */
export function tableToCsv(table: HTMLTableElement): string {
  const lines: string[] = [];
  for (const row of Array.from(table.querySelectorAll('tr'))) {
    const cells = Array.from(row.querySelectorAll('th, td'));
    lines.push(cells.map((cell) => cell.textContent ?? '').join(','));
  }
  return lines.join('\n') + '\n';
}

export function formatAccuracy(accuracy: number): string {
  return `${(100 * accuracy).toFixed(1)}%`;
}

export function formatZ(z: number): string {
  return z.toFixed(3);
}

export function formatP(p: number): string {
  return p.toFixed(4);
}

export function renderItem(container: HTMLElement, item: ReviewItem,
                           imageSrc: string): void {
  container.innerHTML = '';
  const progress = container.ownerDocument.createElement('p');
  progress.className = 'progress';
  progress.textContent = `Image ${item.position + 1} of ${item.total}`;
  const image = container.ownerDocument.createElement('img');
  image.className = 'tile';
  image.src = imageSrc;
  image.alt = 'tile under review';
  container.append(progress, image);
}

function fillTable(table: HTMLTableElement, header: string[],
                   rows: string[][]): void {
  const doc = table.ownerDocument;
  const thead = doc.createElement('thead');
  const headRow = doc.createElement('tr');
  for (const name of header) {
    const th = doc.createElement('th');
    th.textContent = name;
    headRow.append(th);
  }
  thead.append(headRow);
  const tbody = doc.createElement('tbody');
  for (const row of rows) {
    const tr = doc.createElement('tr');
    for (const value of row) {
      const td = doc.createElement('td');
      td.textContent = value;
      tr.append(td);
    }
    tbody.append(tr);
  }
  table.append(thead, tbody);
}

/**
 * Show the revealed session report.
 *
 * The rows table is rendered from the CSV export text, so what the page
 * displays and what the download link saves are the same bytes.
 */
export function renderReport(container: HTMLElement, report: SessionReport,
                             csv: string): void {
  const doc = container.ownerDocument;
  container.innerHTML = '';

  const heading = doc.createElement('h2');
  heading.textContent = 'Session report';
  container.append(heading);

  const summary = doc.createElement('dl');
  summary.className = 'summary';
  const pairs: Array<[string, string, string]> = [
    ['report-items', 'Items', String(report.n_items)],
    ['report-correct', 'Correct', String(report.n_correct)],
    ['report-accuracy', 'Accuracy', formatAccuracy(report.accuracy)],
    ['report-z', 'z score', formatZ(report.z)],
    ['report-p', 'p (two-sided)', formatP(report.p_two_sided)],
  ];
  for (const [id, term, value] of pairs) {
    const dt = doc.createElement('dt');
    dt.textContent = term;
    const dd = doc.createElement('dd');
    dd.id = id;
    dd.textContent = value;
    summary.append(dt, dd);
  }
  container.append(summary);

  const labels = Object.keys(report.confusion);
  const confusion = doc.createElement('table');
  confusion.id = 'report-confusion';
  fillTable(confusion, ['truth', ...labels],
            labels.map((truth) => [
              truth,
              ...labels.map((label) => String(report.confusion[truth][label])),
            ]));
  container.append(confusion);

  const download = doc.createElement('a');
  download.id = 'csv-download';
  download.textContent = 'Download CSV';
  download.setAttribute('download', `${report.session_id}-report.csv`);
  download.href = `data:text/csv;charset=utf-8,${encodeURIComponent(csv)}`;
  container.append(download);

  const parsed = parseCsv(csv);
  const rows = doc.createElement('table');
  rows.id = 'report-rows';
  fillTable(rows, parsed.header, parsed.rows);
  container.append(rows);
}
