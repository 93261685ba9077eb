// UI wiring: session lifecycle, slider grid, debounced commits with the
// revision gate, preview + overlay rendering, optimizer steps, and the
// calibration panel. All numeric results come from the service.

import { SessionClient } from "./api.js";
import { CommitQueue } from "./debounce.js";
import {
  calibrationArrows,
  overlaySvg,
  spotCircles,
  verdictBadges,
} from "./overlay.js";
import { RevisionGate } from "./revision.js";
import { parseConfigFile, serializeConfig, sliderSpecs, SliderSpec } from "./sliders.js";
import { sparklineSvg } from "./sparkline.js";
import { ApiError, CalibrationReport, PerturbationConfig } from "./types.js";

const CANVAS = { width: 160, height: 160 };

interface Elements {
  root: HTMLElement;
  status: HTMLElement;
  loss: HTMLElement;
  sparkline: HTMLElement;
  sliders: HTMLElement;
  preview: HTMLImageElement;
  overlay: HTMLElement;
  calibration: HTMLElement;
}

export class App {
  private client: SessionClient;
  private gate = new RevisionGate();
  private sessionId: string | null = null;
  private config: PerturbationConfig | null = null;
  private losses: number[] = [];
  private specs: SliderSpec[] = [];
  private commits: CommitQueue<PerturbationConfig, { revision: number; loss: number; preview_png: string }>;
  private el: Elements;

  constructor(baseUrl: string, el: Elements) {
    this.el = el;
    this.client = new SessionClient(baseUrl);
    this.commits = new CommitQueue(
      (config) => {
        if (!this.sessionId) throw new Error("no session");
        return this.client.commitConfig(this.sessionId, config);
      },
      (result) => {
        if (!this.gate.accept(result)) return; // stale response, discard
        this.losses.push(result.loss);
        this.renderLoss(result.loss);
        this.el.preview.src = `data:image/png;base64,${result.preview_png}`;
        this.renderOverlay();
        this.clearFieldErrors();
      },
      (err) => this.showError(err),
    );
  }

  async createSession(attackerPng: string, victimPng: string, seed = 0): Promise<void> {
    const created = await this.client.createSession({
      attacker_png: attackerPng,
      victim_png: victimPng,
      seed,
    });
    this.sessionId = created.id;
    this.gate = new RevisionGate();
    this.gate.accept(created);
    const view = await this.client.getSession(created.id);
    this.config = view.config;
    this.losses = view.history.map(([, loss]) => loss);
    this.specs = sliderSpecs(view.config.spots.length, CANVAS);
    this.renderSliders();
    this.renderLoss(created.loss);
    this.renderOverlay();
    this.el.status.textContent = `session ${created.id.slice(0, 8)}`;
  }

  /** Slider callback: update local config, schedule a debounced commit. */
  onSliderInput(spec: SliderSpec, value: number): void {
    if (!this.config) return;
    this.config = spec.set(this.config, value);
    this.renderOverlay();
    this.commits.push(this.config);
  }

  async runSteps(n: number): Promise<void> {
    if (!this.sessionId) return;
    await this.commits.flush();
    try {
      const result = await this.client.step(this.sessionId, n);
      if (!this.gate.accept(result)) return;
      this.config = result.config;
      this.losses.push(...result.trajectory, result.loss);
      this.syncSliders();
      this.renderLoss(result.loss);
      this.renderOverlay();
    } catch (err) {
      this.showError(err);
    }
  }

  loadConfigFile(text: string): void {
    try {
      const config = parseConfigFile(text);
      this.config = config;
      this.specs = sliderSpecs(config.spots.length, CANVAS);
      this.renderSliders();
      this.renderOverlay();
      this.commits.push(config);
    } catch (err) {
      this.showError(err);
    }
  }

  exportConfig(): string {
    return this.config ? serializeConfig(this.config) : "{}";
  }

  async importTarget(text: string): Promise<void> {
    if (!this.sessionId) return;
    try {
      await this.client.setTarget(this.sessionId, parseConfigFile(text));
      this.el.status.textContent = "target imported";
    } catch (err) {
      this.showError(err);
    }
  }

  async calibrate(onPng: string, offPng: string): Promise<void> {
    if (!this.sessionId) return;
    try {
      const report = await this.client.calibrate(this.sessionId, onPng, offPng);
      this.renderCalibration(report);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.el.calibration.innerHTML =
          `<p class="empty-state">No target layout yet — run an attack with the ` +
          `CLI and import its config, then upload on/off frames again.</p>`;
        return;
      }
      this.showError(err);
    }
  }

  private renderCalibration(report: CalibrationReport): void {
    const arrows = calibrationArrows(report);
    const badges = verdictBadges(report);
    const svg = overlaySvg([], arrows, CANVAS.width, CANVAS.height);
    const badgeHtml = badges
      .map((b) => `<span class="badge badge-${b.kind}">spot ${b.spotIndex + 1}: ${b.text}</span>`)
      .join(" ");
    const lossLine =
      report.current_loss !== null
        ? `<p>live loss vs victim: <strong>${report.current_loss.toPrecision(6)}</strong></p>`
        : `<p class="error">loss unavailable: ${report.loss_error ?? "unknown"}</p>`;
    const blob = new Blob([JSON.stringify(report, null, 2)], { type: "application/json" });
    this.el.calibration.innerHTML =
      `<div class="calibration-overlay">${svg}</div>` +
      `<div class="badges">${badgeHtml}</div>` +
      lossLine +
      `<a download="calibration-report.json" href="${URL.createObjectURL(blob)}">download report</a>`;
  }

  private renderSliders(): void {
    this.el.sliders.innerHTML = "";
    if (!this.config) return;
    for (const spec of this.specs) {
      const row = document.createElement("label");
      row.className = "slider-row";
      const name = document.createElement("span");
      name.textContent = spec.label;
      const input = document.createElement("input");
      input.type = "range";
      input.min = String(spec.min);
      input.max = String(spec.max);
      input.step = String(spec.step);
      input.value = String(spec.get(this.config));
      input.dataset.sliderId = spec.id;
      const value = document.createElement("output");
      value.textContent = input.value;
      input.addEventListener("input", () => {
        value.textContent = input.value;
        this.onSliderInput(spec, Number(input.value));
      });
      row.append(name, input, value);
      this.el.sliders.append(row);
    }
  }

  private syncSliders(): void {
    if (!this.config) return;
    for (const spec of this.specs) {
      const input = this.el.sliders.querySelector<HTMLInputElement>(
        `input[data-slider-id="${spec.id}"]`,
      );
      if (input) {
        input.value = String(spec.get(this.config));
        const output = input.parentElement?.querySelector("output");
        if (output) output.textContent = input.value;
      }
    }
  }

  private renderLoss(loss: number): void {
    this.el.loss.textContent = loss.toPrecision(6);
    this.el.sparkline.innerHTML = sparklineSvg(this.losses);
  }

  private renderOverlay(): void {
    if (!this.config) return;
    this.el.overlay.innerHTML = overlaySvg(
      spotCircles(this.config),
      [],
      CANVAS.width,
      CANVAS.height,
    );
  }

  private clearFieldErrors(): void {
    this.el.sliders
      .querySelectorAll(".slider-error")
      .forEach((node) => node.classList.remove("slider-error"));
  }

  private showError(err: unknown): void {
    if (err instanceof ApiError && err.status === 422 && err.field) {
      // Surface invariant violations inline at the offending slider.
      const match = err.field.match(/spots\[(\d+)\]\.(\w+)/);
      const id = match ? `spot${match[1]}.${match[2]}` : err.field;
      const input = this.el.sliders.querySelector(`input[data-slider-id="${id}"]`);
      input?.parentElement?.classList.add("slider-error");
      this.el.status.textContent = `invalid: ${err.message}`;
      return;
    }
    if (err instanceof ApiError && err.status === 502) {
      this.el.status.innerHTML =
        `<span class="banner error">oracle unreachable — ` +
        `<button id="retry">retry</button></span>`;
      return;
    }
    this.el.status.textContent = String(err instanceof Error ? err.message : err);
  }
}
