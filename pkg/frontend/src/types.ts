// Wire formats shared with the session service. Field names and shapes must
// match the server exactly; the UI performs no numeric computation of its own.

export interface SpotParams {
  px: number;
  py: number;
  sigma: number;
  s: number;
}

export interface PerturbationConfig {
  amp: number;
  color_ratio: [number, number, number];
  spots: SpotParams[];
}

export interface CreateSessionResponse {
  id: string;
  revision: number;
  loss: number;
}

export interface ConfigCommitResponse {
  revision: number;
  loss: number;
  preview_png: string; // base64 PNG
}

export interface StepResponse {
  revision: number;
  loss: number;
  config: PerturbationConfig;
  trajectory: number[];
}

export interface SessionView {
  id: string;
  revision: number;
  loss: number;
  config: PerturbationConfig;
  target: PerturbationConfig | null;
  history: [number, number][]; // [revision, loss]
}

export interface SpotFinding {
  spot_index: number;
  found: boolean;
  detected_center: [number, number] | null;
  offset_vector: [number, number] | null;
  low_confidence: boolean;
  brightness_ratio_measured: number | null;
  brightness_ratio_expected: number | null;
  brightness_verdict: "too_bright" | "too_dim" | "ok" | null;
  half_radius_measured: number | null;
  half_radius_expected: number | null;
  size_verdict: "too_large" | "too_small" | "ok" | null;
  warnings: string[];
}

export interface CalibrationReport {
  timestamp: string;
  current_loss: number | null;
  loss_error: string | null;
  spots: SpotFinding[];
}

export interface ApiErrorBody {
  error: { code: string; message: string; field?: string };
}

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly field?: string;

  constructor(status: number, body: ApiErrorBody["error"]) {
    super(body.message);
    this.status = status;
    this.code = body.code;
    this.field = body.field;
  }
}
