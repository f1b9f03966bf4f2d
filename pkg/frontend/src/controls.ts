/**
 * Command form state and the client-side validation mirror of the
 * service's goal endpoint. Values survive a server rejection so the
 * operator can correct them in place.
 */

export interface TermView {
  index: number;
  label: string;
  weight: number;
  enabled: boolean;
}

export interface FormState {
  headingDegrees: number;       // dial position, degrees
  goalSpeed: number;            // m/s
  vMax: number;                 // slider ceiling, mirrors the service
  terms: TermView[];
  lastError: string | null;
}

export interface GoalCommandBody {
  goal_heading?: number;
  goal_speed?: number;
  weights?: Record<string, number>;
  enabled?: Record<string, boolean>;
}

export function initialForm(vMax: number, terms: TermView[]): FormState {
  return { headingDegrees: 0, goalSpeed: 1.0, vMax, terms,
           lastError: null };
}

export function degreesToRadians(deg: number): number {
  return (deg * Math.PI) / 180;
}

/** Client-side mirror of service validation; returns null when the
 * form can be submitted. */
export function validate(form: FormState): string | null {
  if (!Number.isFinite(form.headingDegrees)) {
    return "heading must be a number";
  }
  if (!Number.isFinite(form.goalSpeed)) {
    return "speed must be a number";
  }
  if (form.goalSpeed < 0 || form.goalSpeed > form.vMax) {
    return `speed must be within [0, ${form.vMax}]`;
  }
  for (const t of form.terms) {
    if (!Number.isFinite(t.weight)) {
      return `weight of term ${t.index} must be a number`;
    }
  }
  return null;
}

/** Clamp a slider move so an out-of-range speed can never be entered;
 * the validation above stays as the last line of defense. */
export function clampSpeed(form: FormState, value: number): number {
  if (!Number.isFinite(value)) {
    return form.goalSpeed;
  }
  return Math.min(Math.max(value, 0), form.vMax);
}

/** Build the POST body from the form. Only fields the operator can
 * set are included; the heading dial is converted to radians. */
export function toCommandBody(form: FormState): GoalCommandBody {
  const weights: Record<string, number> = {};
  const enabled: Record<string, boolean> = {};
  for (const t of form.terms) {
    weights[String(t.index)] = t.weight;
    enabled[String(t.index)] = t.enabled;
  }
  return {
    goal_heading: degreesToRadians(form.headingDegrees),
    goal_speed: form.goalSpeed,
    weights,
    enabled,
  };
}

/** A server rejection: surface the reason, keep every value. */
export function rejectForm(form: FormState, reason: string): FormState {
  return { ...form, lastError: reason };
}

export function clearError(form: FormState): FormState {
  return form.lastError === null ? form : { ...form, lastError: null };
}
