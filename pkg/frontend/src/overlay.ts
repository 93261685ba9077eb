// Geometry for the canvas-space overlay: spot circles at the half-brightness
// radius, and calibration arrows pointing from each detected center toward
// its theoretical position (i.e., the correction the operator should apply).

import { CalibrationReport, PerturbationConfig, SpotFinding } from "./types.js";

export const HALF_RADIUS_FACTOR = Math.sqrt(2 * Math.LN2);

export interface Circle {
  cx: number;
  cy: number;
  r: number;
  label: string;
}

export function spotCircles(config: PerturbationConfig): Circle[] {
  return config.spots.map((spot, i) => ({
    cx: spot.px,
    cy: spot.py,
    r: spot.sigma * HALF_RADIUS_FACTOR,
    label: `${i + 1}`,
  }));
}

export interface Arrow {
  spotIndex: number;
  fromX: number; // detected center
  fromY: number;
  toX: number; // theoretical center = detected + offset
  toY: number;
  length: number;
}

export function calibrationArrow(finding: SpotFinding): Arrow | null {
  if (!finding.found || !finding.detected_center || !finding.offset_vector) {
    return null;
  }
  const [dx, dy] = finding.offset_vector;
  const [fx, fy] = finding.detected_center;
  return {
    spotIndex: finding.spot_index,
    fromX: fx,
    fromY: fy,
    toX: fx + dx,
    toY: fy + dy,
    length: Math.hypot(dx, dy),
  };
}

export function calibrationArrows(report: CalibrationReport): Arrow[] {
  const arrows: Arrow[] = [];
  for (const finding of report.spots) {
    const arrow = calibrationArrow(finding);
    if (arrow) {
      arrows.push(arrow);
    }
  }
  return arrows;
}

export type Badge = { spotIndex: number; kind: string; text: string };

export function verdictBadges(report: CalibrationReport): Badge[] {
  const badges: Badge[] = [];
  for (const f of report.spots) {
    if (!f.found) {
      badges.push({ spotIndex: f.spot_index, kind: "missing", text: "not found" });
      continue;
    }
    badges.push({
      spotIndex: f.spot_index,
      kind: f.brightness_verdict ?? "unknown",
      text: `brightness ${f.brightness_verdict ?? "?"}`,
    });
    badges.push({
      spotIndex: f.spot_index,
      kind: f.size_verdict ?? "unknown",
      text: `size ${f.size_verdict ?? "?"}`,
    });
    if (f.low_confidence) {
      badges.push({ spotIndex: f.spot_index, kind: "warning", text: "low confidence" });
    }
  }
  return badges;
}

/** Render circles and arrows as an SVG overlay sized to the canvas. */
export function overlaySvg(
  circles: Circle[],
  arrows: Arrow[],
  width: number,
  height: number,
): string {
  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${width} ${height}" ` +
      `width="${width}" height="${height}">`,
    `<defs><marker id="tip" markerWidth="8" markerHeight="8" refX="6" refY="3" ` +
      `orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="#ff4602"/></marker></defs>`,
  ];
  for (const c of circles) {
    parts.push(
      `<circle cx="${c.cx.toFixed(1)}" cy="${c.cy.toFixed(1)}" ` +
        `r="${c.r.toFixed(1)}" fill="rgba(149,76,230,0.18)" ` +
        `stroke="rgba(149,76,230,0.9)" stroke-width="1"/>`,
      `<text x="${c.cx.toFixed(1)}" y="${(c.cy - c.r - 2).toFixed(1)}" ` +
        `font-size="9" fill="#954ce6" text-anchor="middle">${c.label}</text>`,
    );
  }
  for (const a of arrows) {
    if (a.length < 0.25) {
      // Zero-length correction: draw a check dot instead of an arrow.
      parts.push(
        `<circle cx="${a.fromX.toFixed(1)}" cy="${a.fromY.toFixed(1)}" r="1.5" ` +
          `fill="#27a827"/>`,
      );
      continue;
    }
    parts.push(
      `<line x1="${a.fromX.toFixed(1)}" y1="${a.fromY.toFixed(1)}" ` +
        `x2="${a.toX.toFixed(1)}" y2="${a.toY.toFixed(1)}" stroke="#ff4602" ` +
        `stroke-width="1.5" marker-end="url(#tip)"/>`,
    );
  }
  parts.push("</svg>");
  return parts.join("");
}
