/** SVG Hb trajectory chart: line over occasions, shaded 10.0–12.0 g/dl target
 * band, and UP/DOWN markers at the physician's non-STAY occasions. */

import { BAND_HIGH, BAND_LOW } from "./validation.js";
import type { EsaDirection } from "./types.js";

export interface ChartPoint {
  occasion_index: number;
  hb: number;
  esa_direction: EsaDirection;
}

const WIDTH = 640;
const HEIGHT = 240;
const MARGIN = { top: 12, right: 12, bottom: 24, left: 36 };
const SVG_NS = "http://www.w3.org/2000/svg";

function el(tag: string, attrs: Record<string, string>): SVGElement {
  const node = document.createElementNS(SVG_NS, tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  return node;
}

export function renderTimelineChart(container: HTMLElement, points: ChartPoint[]): void {
  container.textContent = "";
  if (points.length === 0) {
    const empty = document.createElement("p");
    empty.className = "chart-empty";
    empty.textContent = "No occasions yet — add rows to see the Hb trajectory.";
    container.appendChild(empty);
    return;
  }

  const hbs = points.map((p) => p.hb);
  const yMin = Math.min(BAND_LOW - 1, ...hbs) - 0.5;
  const yMax = Math.max(BAND_HIGH + 1, ...hbs) + 0.5;
  const plotW = WIDTH - MARGIN.left - MARGIN.right;
  const plotH = HEIGHT - MARGIN.top - MARGIN.bottom;
  const xAt = (i: number) =>
    MARGIN.left + (points.length === 1 ? plotW / 2 : (i / (points.length - 1)) * plotW);
  const yAt = (hb: number) => MARGIN.top + ((yMax - hb) / (yMax - yMin)) * plotH;

  const svg = el("svg", {
    viewBox: `0 0 ${WIDTH} ${HEIGHT}`,
    width: String(WIDTH),
    height: String(HEIGHT),
    role: "img",
    "aria-label": "hemoglobin trajectory",
  });

  const band = el("rect", {
    class: "target-band",
    x: String(MARGIN.left),
    width: String(plotW),
    y: String(yAt(BAND_HIGH)),
    height: String(yAt(BAND_LOW) - yAt(BAND_HIGH)),
    "data-band-low": BAND_LOW.toFixed(1),
    "data-band-high": BAND_HIGH.toFixed(1),
  });
  svg.appendChild(band);

  for (const edge of [BAND_LOW, BAND_HIGH]) {
    svg.appendChild(
      el("line", {
        class: "band-edge",
        x1: String(MARGIN.left),
        x2: String(MARGIN.left + plotW),
        y1: String(yAt(edge)),
        y2: String(yAt(edge)),
      }),
    );
    const label = el("text", {
      class: "band-label",
      x: String(4),
      y: String(yAt(edge) + 4),
    });
    label.textContent = edge.toFixed(1);
    svg.appendChild(label);
  }

  svg.appendChild(
    el("polyline", {
      class: "hb-line",
      points: points.map((p, i) => `${xAt(i)},${yAt(p.hb)}`).join(" "),
      fill: "none",
    }),
  );

  points.forEach((p, i) => {
    svg.appendChild(
      el("circle", {
        class: "hb-dot",
        cx: String(xAt(i)),
        cy: String(yAt(p.hb)),
        r: "3",
      }),
    );
    if (p.esa_direction !== "STAY") {
      const up = p.esa_direction === "UP";
      const x = xAt(i);
      const y = yAt(p.hb) + (up ? -8 : 8);
      const marker = el("path", {
        class: `direction-marker marker-${p.esa_direction.toLowerCase()}`,
        d: up
          ? `M ${x - 5} ${y} L ${x + 5} ${y} L ${x} ${y - 8} Z`
          : `M ${x - 5} ${y} L ${x + 5} ${y} L ${x} ${y + 8} Z`,
        "data-occasion": String(p.occasion_index),
        "data-direction": p.esa_direction,
      });
      svg.appendChild(marker);
    }
  });

  container.appendChild(svg);
}
