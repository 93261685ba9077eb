// Loss-history sparkline as an SVG polyline, newest value highlighted.

export function sparklinePoints(
  losses: number[],
  width: number,
  height: number,
  pad = 2,
): string {
  if (losses.length === 0) {
    return "";
  }
  if (losses.length === 1) {
    return `${pad},${height / 2}`;
  }
  const lo = Math.min(...losses);
  const hi = Math.max(...losses);
  const span = hi - lo || 1;
  const innerW = width - 2 * pad;
  const innerH = height - 2 * pad;
  return losses
    .map((loss, i) => {
      const x = pad + (i / (losses.length - 1)) * innerW;
      const y = pad + (1 - (loss - lo) / span) * innerH;
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}

export function sparklineSvg(losses: number[], width = 220, height = 48): string {
  const points = sparklinePoints(losses, width, height);
  const last = losses.length ? losses[losses.length - 1] : null;
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${width} ${height}" ` +
    `width="${width}" height="${height}">` +
    `<polyline points="${points}" fill="none" stroke="#2a6fdb" stroke-width="1.5"/>` +
    (last !== null
      ? `<text x="${width - 4}" y="12" font-size="10" text-anchor="end" ` +
        `fill="#333">${last.toPrecision(5)}</text>`
      : "") +
    "</svg>"
  );
}
