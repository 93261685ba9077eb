import { App } from "./app.js";

function fileToBase64(file: File): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onload = () => {
      const url = reader.result as string;
      resolve(url.slice(url.indexOf(",") + 1)); // strip data:...;base64,
    };
    reader.onerror = () => reject(reader.error);
    reader.readAsDataURL(file);
  });
}

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

document.addEventListener("DOMContentLoaded", () => {
  const app = new App(byId<HTMLInputElement>("server-url").value.replace(/\/$/, ""), {
    root: byId("app"),
    status: byId("status"),
    loss: byId("loss"),
    sparkline: byId("sparkline"),
    sliders: byId("sliders"),
    preview: byId<HTMLImageElement>("preview"),
    overlay: byId("overlay"),
    calibration: byId("calibration"),
  });

  byId<HTMLButtonElement>("create-session").addEventListener("click", async () => {
    const attacker = byId<HTMLInputElement>("attacker-file").files?.[0];
    const victim = byId<HTMLInputElement>("victim-file").files?.[0];
    if (!attacker || !victim) {
      byId("status").textContent = "choose both attacker and victim images";
      return;
    }
    const seed = Number(byId<HTMLInputElement>("seed").value) || 0;
    await app.createSession(await fileToBase64(attacker), await fileToBase64(victim), seed);
  });

  byId<HTMLButtonElement>("step-1").addEventListener("click", () => app.runSteps(1));
  byId<HTMLButtonElement>("step-10").addEventListener("click", () => app.runSteps(10));

  byId<HTMLInputElement>("config-file").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) app.loadConfigFile(await file.text());
  });

  byId<HTMLInputElement>("target-file").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) await app.importTarget(await file.text());
  });

  byId<HTMLButtonElement>("export-config").addEventListener("click", () => {
    const blob = new Blob([app.exportConfig()], { type: "application/json" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = "perturbation.json";
    link.click();
  });

  byId<HTMLButtonElement>("run-calibration").addEventListener("click", async () => {
    const on = byId<HTMLInputElement>("on-file").files?.[0];
    const off = byId<HTMLInputElement>("off-file").files?.[0];
    if (!on || !off) {
      byId("status").textContent = "choose both on and off frames";
      return;
    }
    await app.calibrate(await fileToBase64(on), await fileToBase64(off));
  });
});
