// Slider models mirroring the optimizer's parameter bounds. Every control
// maps one scalar of the perturbation config; values round-trip exactly so a
// loaded config file reproduces the same slider positions.

import { PerturbationConfig, SpotParams } from "./types.js";

export interface SliderSpec {
  id: string; // e.g. "amp", "spot2.px"
  label: string;
  min: number;
  max: number;
  step: number;
  get(config: PerturbationConfig): number;
  set(config: PerturbationConfig, value: number): PerturbationConfig;
}

const cloneSpots = (spots: SpotParams[]): SpotParams[] => spots.map((s) => ({ ...s }));

function withSpot(
  config: PerturbationConfig,
  index: number,
  patch: Partial<SpotParams>,
): PerturbationConfig {
  const spots = cloneSpots(config.spots);
  spots[index] = { ...spots[index], ...patch };
  return { ...config, spots };
}

export function sliderSpecs(
  nSpots: number,
  canvas: { width: number; height: number },
): SliderSpec[] {
  const specs: SliderSpec[] = [
    {
      id: "amp",
      label: "amplification",
      min: 0,
      max: 5,
      step: 0.01,
      get: (c) => c.amp,
      set: (c, v) => ({ ...c, spots: cloneSpots(c.spots), amp: v }),
    },
  ];
  for (let i = 0; i < nSpots; i++) {
    specs.push(
      {
        id: `spot${i}.px`,
        label: `spot ${i + 1} x`,
        min: 0,
        max: canvas.width - 1,
        step: 0.5,
        get: (c) => c.spots[i].px,
        set: (c, v) => withSpot(c, i, { px: v }),
      },
      {
        id: `spot${i}.py`,
        label: `spot ${i + 1} y`,
        min: 0,
        max: canvas.height - 1,
        step: 0.5,
        get: (c) => c.spots[i].py,
        set: (c, v) => withSpot(c, i, { py: v }),
      },
      {
        id: `spot${i}.sigma`,
        label: `spot ${i + 1} size`,
        min: 1,
        max: 30,
        step: 0.1,
        get: (c) => c.spots[i].sigma,
        set: (c, v) => withSpot(c, i, { sigma: v }),
      },
      {
        id: `spot${i}.s`,
        label: `spot ${i + 1} brightness`,
        min: 0,
        max: 10,
        step: 0.05,
        get: (c) => c.spots[i].s,
        set: (c, v) => withSpot(c, i, { s: v }),
      },
    );
  }
  return specs;
}

/** Parse an exported config file, checking the wire-format shape. */
export function parseConfigFile(text: string): PerturbationConfig {
  const data = JSON.parse(text) as PerturbationConfig;
  if (
    typeof data.amp !== "number" ||
    !Array.isArray(data.spots) ||
    data.spots.length < 1 ||
    !Array.isArray(data.color_ratio) ||
    data.color_ratio.length !== 3
  ) {
    throw new Error("not a perturbation config file");
  }
  for (const spot of data.spots) {
    for (const key of ["px", "py", "sigma", "s"] as const) {
      if (typeof spot[key] !== "number" || !Number.isFinite(spot[key])) {
        throw new Error(`spot field ${key} must be a finite number`);
      }
    }
  }
  return data;
}

export function serializeConfig(config: PerturbationConfig): string {
  return JSON.stringify(config, null, 2);
}
